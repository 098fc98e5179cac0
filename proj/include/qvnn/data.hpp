#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvnn/qtensor.hpp"
#include "qvnn/quat.hpp"

namespace qvnn {

// Labeled quaternion image set. Planes are stored compactly as 32-bit floats, with an
// empty vector standing for an all-zero plane (grayscale images populate only r,
// RGB images only i/j/k), and widened to f64 QTensors when a batch is gathered.
struct Dataset {
    std::size_t channels = 0, height = 0, width = 0;
    std::size_t classes = 0;
    std::vector<float> plane_r, plane_i, plane_j, plane_k;  // each empty or N*C*H*W
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_numel() const { return channels * height * width; }

    // Batch tensor [B x C x H x W] for the given sample indices.
    QTensor gather(const std::vector<std::size_t>& idx) const;

    // Copy of samples [start, start+count).
    Dataset slice(std::size_t start, std::size_t count) const;

    void validate() const;  // label range and plane length checks
};

// Pixel encodings.
inline Quaternion encode_gray(double g) { return {g, 0.0, 0.0, 0.0}; }
inline Quaternion encode_rgb(double r, double g, double b) { return {0.0, r, g, b}; }

// IDX-format image/label pair (big-endian magics 0x803 / 0x801), bytes scaled by /255
// and grayscale-encoded. File names follow the usual train/t10k convention.
Dataset load_mnist(const std::string& dir, bool train);

// CIFAR-10 binary batches (3073-byte records), RGB-encoded into the i/j/k planes.
Dataset load_cifar10(const std::string& dir, bool train);

// Low-level IDX readers/writers (exposed for tests and the synthetic generator).
std::vector<std::uint8_t> read_idx_images(const std::string& path, std::size_t& n, std::size_t& h, std::size_t& w);
std::vector<std::uint8_t> read_idx_labels(const std::string& path, std::size_t& n);
void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, std::size_t n, std::size_t h,
                      std::size_t w);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

// Writes a procedurally rendered stand-in digit corpus in MNIST's IDX layout
// (train-images/-labels and t10k-images/-labels) for offline runs.
void make_synth_mnist(const std::string& dir, std::size_t train_n, std::size_t test_n, std::uint64_t seed);

}  // namespace qvnn
