#include "qvnn/serialize.hpp"

#include <cstring>
#include <fstream>

#include "qvnn/error.hpp"

namespace qvnn {

namespace {

constexpr char kMagic[4] = {'Q', 'V', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        bytes.push_back(std::uint8_t(v));
        bytes.push_back(std::uint8_t(v >> 8));
        bytes.push_back(std::uint8_t(v >> 16));
        bytes.push_back(std::uint8_t(v >> 24));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void planes(const QTensor& t) {
        for (int c = 0; c < 4; ++c) {
            const double* p = t.plane(c);
            for (std::size_t n = 0; n < t.numel(); ++n) f32(static_cast<float>(p[n]));
        }
    }
    void reals(const std::vector<double>& v) {
        for (double x : v) f32(static_cast<float>(x));
    }
};

struct Reader {
    const std::string& path;
    std::vector<std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size())
            throw FormatError(path + ": truncated model file (needed " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos) + ", file has " + std::to_string(bytes.size()) + ")");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        const std::uint32_t v = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                                (std::uint32_t(bytes[pos + 2]) << 16) | (std::uint32_t(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(bytes.begin() + pos, bytes.begin() + pos + len);
        pos += len;
        return s;
    }
    void planes(QTensor& t) {
        for (int c = 0; c < 4; ++c) {
            double* p = t.plane(c);
            for (std::size_t n = 0; n < t.numel(); ++n) p[n] = static_cast<double>(f32());
        }
    }
    void reals(std::vector<double>& v) {
        for (double& x : v) x = static_cast<double>(f32());
    }
};

}  // namespace

void save_model(const Model& model, const std::string& path) {
    if (model.input_shape.size() != 3) throw StateError("save: model input shape is not set");
    Writer w;
    w.bytes.insert(w.bytes.end(), kMagic, kMagic + 4);
    w.u32(kVersion);
    w.str(model.arch);
    for (std::size_t e : model.input_shape) w.u32(static_cast<std::uint32_t>(e));
    w.u32(static_cast<std::uint32_t>(model.num_classes));
    w.u32(static_cast<std::uint32_t>(model.layers.size() + 1));

    for (const auto& lp : model.layers) {
        const Layer& l = *lp;
        w.u8(static_cast<std::uint8_t>(l.kind()));
        w.str(l.name());
        switch (l.kind()) {
            case LayerKind::Dense: {
                const auto& d = static_cast<const QDenseLayer&>(l);
                w.u32(static_cast<std::uint32_t>(d.out_features()));
                w.u32(static_cast<std::uint32_t>(d.in_features()));
                w.planes(d.W);
                w.planes(d.b);
                break;
            }
            case LayerKind::Conv2d: {
                const auto& cv = static_cast<const QConv2dLayer&>(l);
                for (std::size_t e : {cv.out_channels(), cv.in_channels(), cv.kernel_h(), cv.kernel_w(), cv.stride(),
                                      cv.padding()})
                    w.u32(static_cast<std::uint32_t>(e));
                w.planes(cv.kernels);
                w.planes(cv.b);
                break;
            }
            case LayerKind::BatchNorm: {
                const auto& bn = static_cast<const QBatchNormLayer&>(l);
                w.u32(static_cast<std::uint32_t>(bn.channels()));
                w.reals(bn.gamma);
                w.planes(bn.beta);
                w.planes(bn.running_mu);
                w.reals(bn.running_var);
                w.f32(static_cast<float>(bn.epsilon()));
                w.f32(static_cast<float>(bn.momentum()));
                break;
            }
            case LayerKind::Activation: {
                const auto& a = static_cast<const SplitActivationLayer&>(l);
                w.u32(static_cast<std::uint32_t>(a.act_kind()));
                break;
            }
            case LayerKind::MaxPool: {
                const auto& p = static_cast<const QMaxPoolLayer&>(l);
                w.u32(static_cast<std::uint32_t>(p.window()));
                w.u32(static_cast<std::uint32_t>(p.stride()));
                break;
            }
            case LayerKind::Dropout: {
                const auto& d = static_cast<const QDropoutLayer&>(l);
                w.f32(static_cast<float>(d.p()));
                break;
            }
            case LayerKind::Head:
                throw StateError("save: head records are implicit and never appear in the layer stack");
        }
    }
    w.u8(static_cast<std::uint8_t>(LayerKind::Head));
    w.str("head");

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open file for writing");
    f.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!f) throw FormatError(path + ": write failed");
}

Model load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(path + ": cannot open file");
    Reader r{path, {}, 0};
    f.seekg(0, std::ios::end);
    r.bytes.resize(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    if (!r.bytes.empty()) f.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
    if (!f) throw FormatError(path + ": read failed");

    r.need(4);
    if (std::memcmp(r.bytes.data(), kMagic, 4) != 0) throw FormatError(path + ": bad magic, not a model file");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError(path + ": unsupported format version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");

    Model m;
    m.arch = r.str();
    m.input_shape = {r.u32(), r.u32(), r.u32()};
    m.num_classes = r.u32();
    const std::uint32_t records = r.u32();
    if (records == 0) throw FormatError(path + ": record count is zero");

    bool head_seen = false;
    for (std::uint32_t rec = 0; rec < records; ++rec) {
        if (head_seen) throw FormatError(path + ": head record is not last");
        const std::uint8_t tag = r.u8();
        const std::string name = r.str();
        std::unique_ptr<Layer> layer;
        switch (tag) {
            case static_cast<std::uint8_t>(LayerKind::Dense): {
                const std::uint32_t out = r.u32(), in = r.u32();
                auto d = std::make_unique<QDenseLayer>(out, in);
                r.planes(d->W);
                r.planes(d->b);
                layer = std::move(d);
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::Conv2d): {
                const std::uint32_t out = r.u32(), in = r.u32(), kh = r.u32(), kw = r.u32(), stride = r.u32(),
                                    pad = r.u32();
                auto cv = std::make_unique<QConv2dLayer>(out, in, kh, kw, stride, pad);
                r.planes(cv->kernels);
                r.planes(cv->b);
                layer = std::move(cv);
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::BatchNorm): {
                const std::uint32_t ch = r.u32();
                std::vector<double> gamma(ch), var(ch);
                QTensor beta({ch}), mu({ch});
                r.reals(gamma);
                r.planes(beta);
                r.planes(mu);
                r.reals(var);
                const double eps = static_cast<double>(r.f32());
                const double momentum = static_cast<double>(r.f32());
                auto bn = std::make_unique<QBatchNormLayer>(ch, eps, momentum);
                bn->gamma = std::move(gamma);
                bn->beta = std::move(beta);
                bn->running_mu = std::move(mu);
                bn->running_var = std::move(var);
                layer = std::move(bn);
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::Activation): {
                const std::uint32_t kind = r.u32();
                if (kind != 0) throw FormatError(path + ": unknown activation kind " + std::to_string(kind));
                layer = std::make_unique<SplitActivationLayer>(ActKind::Relu);
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::MaxPool): {
                const std::uint32_t window = r.u32(), stride = r.u32();
                layer = std::make_unique<QMaxPoolLayer>(window, stride);
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::Dropout): {
                layer = std::make_unique<QDropoutLayer>(static_cast<double>(r.f32()));
                break;
            }
            case static_cast<std::uint8_t>(LayerKind::Head): {
                head_seen = true;
                continue;
            }
            default:
                throw FormatError(path + ": unknown layer tag " + std::to_string(tag));
        }
        layer->set_name(name);
        m.layers.push_back(std::move(layer));
    }
    if (!head_seen) throw FormatError(path + ": missing head record");
    if (r.pos != r.bytes.size())
        throw FormatError(path + ": " + std::to_string(r.bytes.size() - r.pos) + " trailing bytes after the last record");
    return m;
}

}  // namespace qvnn
