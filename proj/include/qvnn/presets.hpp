#pragma once

#include <string>
#include <vector>

#include "qvnn/model.hpp"

namespace qvnn {

// Architecture presets. Channel counts are quaternion channels; each quaternion
// channel carries four real feature maps, so the real-valued widths are 4x these.
//
//   mnist-qcnn        conv4 -> pool -> conv8 -> pool -> dropout -> dense(10)
//   mnist-qcnn-bn     same with batch norm after each conv
//   cifar-qcnn-paper  conv 8/16/32/64/128, pool after the first four, dropout
//                     after conv2 and conv4, dense(10)
//   cifar-qcnn-lite   the same stack at quarter width (2/4/8/16/32)
//
// All weights are drawn uniform per component with bound sqrt(3/(4*fan_in)), so
// the expected squared norm of a weight quaternion is 1/fan_in.
Model make_preset(const std::string& name, std::uint64_t seed);

const std::vector<std::string>& preset_names();

}  // namespace qvnn
