#include "qvnn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "qvnn/error.hpp"
#include "qvnn/rng.hpp"

namespace qvnn {

QTensor Dataset::gather(const std::vector<std::size_t>& idx) const {
    const std::size_t chw = sample_numel();
    QTensor out({idx.size(), channels, height, width});
    const std::array<const std::vector<float>*, 4> planes = {&plane_r, &plane_i, &plane_j, &plane_k};
    for (std::size_t b = 0; b < idx.size(); ++b) {
        if (idx[b] >= size()) throw DataError("gather: sample index " + std::to_string(idx[b]) + " out of range");
        for (int c = 0; c < 4; ++c) {
            if (planes[c]->empty()) continue;
            const float* src = planes[c]->data() + idx[b] * chw;
            double* dst = out.plane(c) + b * chw;
            for (std::size_t n = 0; n < chw; ++n) dst[n] = static_cast<double>(src[n]);
        }
    }
    return out;
}

Dataset Dataset::slice(std::size_t start, std::size_t count) const {
    if (start + count > size()) throw DataError("slice: range exceeds dataset size " + std::to_string(size()));
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.classes = classes;
    out.labels.assign(labels.begin() + start, labels.begin() + start + count);
    const std::size_t chw = sample_numel();
    auto cut = [&](const std::vector<float>& src, std::vector<float>& dst) {
        if (src.empty()) return;
        dst.assign(src.begin() + start * chw, src.begin() + (start + count) * chw);
    };
    cut(plane_r, out.plane_r);
    cut(plane_i, out.plane_i);
    cut(plane_j, out.plane_j);
    cut(plane_k, out.plane_k);
    return out;
}

void Dataset::validate() const {
    if (classes == 0) throw DataError("dataset: class count is zero");
    const std::size_t n = sample_numel() * size();
    for (const auto* p : {&plane_r, &plane_i, &plane_j, &plane_k})
        if (!p->empty() && p->size() != n)
            throw DataError("dataset: plane length " + std::to_string(p->size()) + " does not match " +
                            std::to_string(n));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= classes)
            throw DataError("dataset: label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

// ---- IDX ----------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(path + ": cannot open file");
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw FormatError(path + ": read failed");
    return bytes;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open file for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace

std::vector<std::uint8_t> read_idx_images(const std::string& path, std::size_t& n, std::size_t& h, std::size_t& w) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16)
        throw FormatError(path + ": truncated IDX header, expected 16 bytes, got " + std::to_string(bytes.size()));
    const std::uint32_t magic = be32(bytes.data());
    if (magic != 0x803)
        throw FormatError(path + ": wrong magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }() + ", expected 0x00000803 (IDX images)");
    n = be32(bytes.data() + 4);
    h = be32(bytes.data() + 8);
    w = be32(bytes.data() + 12);
    const std::size_t expected = 16 + n * h * w;
    if (bytes.size() != expected)
        throw FormatError(path + ": truncated IDX file, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    return {bytes.begin() + 16, bytes.end()};
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path, std::size_t& n) {
    const auto bytes = read_file(path);
    if (bytes.size() < 8)
        throw FormatError(path + ": truncated IDX header, expected 8 bytes, got " + std::to_string(bytes.size()));
    const std::uint32_t magic = be32(bytes.data());
    if (magic != 0x801)
        throw FormatError(path + ": wrong magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }() + ", expected 0x00000801 (IDX labels)");
    n = be32(bytes.data() + 4);
    const std::size_t expected = 8 + n;
    if (bytes.size() != expected)
        throw FormatError(path + ": truncated IDX file, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    return {bytes.begin() + 8, bytes.end()};
}

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, std::size_t n, std::size_t h,
                      std::size_t w) {
    if (pixels.size() != n * h * w) throw DataError("write_idx_images: pixel count does not match extents");
    std::vector<std::uint8_t> bytes;
    bytes.reserve(16 + pixels.size());
    put_be32(bytes, 0x803);
    put_be32(bytes, static_cast<std::uint32_t>(n));
    put_be32(bytes, static_cast<std::uint32_t>(h));
    put_be32(bytes, static_cast<std::uint32_t>(w));
    bytes.insert(bytes.end(), pixels.begin(), pixels.end());
    write_file(path, bytes);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(8 + labels.size());
    put_be32(bytes, 0x801);
    put_be32(bytes, static_cast<std::uint32_t>(labels.size()));
    bytes.insert(bytes.end(), labels.begin(), labels.end());
    write_file(path, bytes);
}

Dataset load_mnist(const std::string& dir, bool train) {
    const std::string stem = train ? "train" : "t10k";
    std::size_t n = 0, h = 0, w = 0, nl = 0;
    const auto pixels = read_idx_images(dir + "/" + stem + "-images-idx3-ubyte", n, h, w);
    const auto labels = read_idx_labels(dir + "/" + stem + "-labels-idx1-ubyte", nl);
    if (n != nl)
        throw FormatError(dir + ": image count " + std::to_string(n) + " does not match label count " +
                          std::to_string(nl));

    Dataset ds;
    ds.channels = 1;
    ds.height = h;
    ds.width = w;
    ds.classes = 10;
    ds.plane_r.resize(pixels.size());
    for (std::size_t m = 0; m < pixels.size(); ++m) ds.plane_r[m] = static_cast<float>(pixels[m]) / 255.0f;
    ds.labels.reserve(n);
    for (std::size_t m = 0; m < n; ++m) {
        if (labels[m] > 9)
            throw FormatError(dir + "/" + stem + "-labels-idx1-ubyte: label byte " + std::to_string(labels[m]) +
                              " outside [0, 9]");
        ds.labels.push_back(static_cast<int>(labels[m]));
    }
    ds.validate();
    return ds;
}

Dataset load_cifar10(const std::string& dir, bool train) {
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 3 x 1024 pixel bytes
    std::vector<std::string> files;
    if (train)
        for (int b = 1; b <= 5; ++b) files.push_back(dir + "/data_batch_" + std::to_string(b) + ".bin");
    else
        files.push_back(dir + "/test_batch.bin");

    Dataset ds;
    ds.channels = 1;
    ds.height = 32;
    ds.width = 32;
    ds.classes = 10;

    for (const auto& path : files) {
        const auto bytes = read_file(path);
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw FormatError(path + ": size " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                              std::to_string(kRecord) + "-byte records");
        const std::size_t n = bytes.size() / kRecord;
        for (std::size_t rec = 0; rec < n; ++rec) {
            const std::uint8_t* p = bytes.data() + rec * kRecord;
            if (p[0] > 9)
                throw FormatError(path + ": record " + std::to_string(rec) + " has label byte " +
                                  std::to_string(p[0]) + " outside [0, 9]");
            ds.labels.push_back(static_cast<int>(p[0]));
            for (std::size_t m = 0; m < 1024; ++m) {
                ds.plane_i.push_back(static_cast<float>(p[1 + m]) / 255.0f);
                ds.plane_j.push_back(static_cast<float>(p[1025 + m]) / 255.0f);
                ds.plane_k.push_back(static_cast<float>(p[2049 + m]) / 255.0f);
            }
        }
    }
    ds.validate();
    return ds;
}

// ---- synthetic digit corpus -----------------------------------------------------------

namespace {

// 5x7 cell bitmaps for the ten digits.
constexpr std::array<std::array<const char*, 7>, 10> kFont = {{
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
}};

double font_cell(int digit, double u, double v) {
    // Bilinear interpolation over cell centers; outside the 5x7 grid is empty.
    const auto sample = [&](int cu, int cv) -> double {
        if (cu < 0 || cu >= 5 || cv < 0 || cv >= 7) return 0.0;
        return kFont[digit][cv][cu] == '#' ? 1.0 : 0.0;
    };
    const double fu = std::floor(u), fv = std::floor(v);
    const int cu = static_cast<int>(fu), cv = static_cast<int>(fv);
    const double au = u - fu, av = v - fv;
    return (1 - au) * (1 - av) * sample(cu, cv) + au * (1 - av) * sample(cu + 1, cv) +
           (1 - au) * av * sample(cu, cv + 1) + au * av * sample(cu + 1, cv + 1);
}

void render_digit(std::uint8_t* out, int digit, RngStream& rng) {
    const double theta = rng.uniform(-0.22, 0.22);
    const double scale = rng.uniform(0.75, 1.2);
    const double shear = rng.uniform(-0.15, 0.15);
    const double cx = 13.5 + rng.uniform(-2.5, 2.5);
    const double cy = 13.5 + rng.uniform(-2.5, 2.5);
    const double amp = rng.uniform(0.6, 1.0);
    const double sigma = rng.uniform(0.08, 0.18);
    const double cell = 20.0 * scale / 7.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x) {
            const double dx = x - cx, dy = y - cy;
            double u = (ct * dx + st * dy) / cell;
            double v = (-st * dx + ct * dy) / cell;
            u -= shear * v;
            double val = amp * font_cell(digit, u + 2.0, v + 3.0);
            val += sigma * rng.gauss();
            val = std::clamp(val, 0.0, 1.0);
            out[y * 28 + x] = static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
}

void render_set(std::size_t n, RngStream& rng, std::vector<std::uint8_t>& pixels, std::vector<std::uint8_t>& labels) {
    pixels.resize(n * 28 * 28);
    labels.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
        const int digit = static_cast<int>(rng.below(10));
        labels[m] = static_cast<std::uint8_t>(digit);
        render_digit(pixels.data() + m * 28 * 28, digit, rng);
    }
}

}  // namespace

void make_synth_mnist(const std::string& dir, std::size_t train_n, std::size_t test_n, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    RngStream rng(seed);
    std::vector<std::uint8_t> pixels, labels;
    render_set(train_n, rng, pixels, labels);
    write_idx_images(dir + "/train-images-idx3-ubyte", pixels, train_n, 28, 28);
    write_idx_labels(dir + "/train-labels-idx1-ubyte", labels);
    render_set(test_n, rng, pixels, labels);
    write_idx_images(dir + "/t10k-images-idx3-ubyte", pixels, test_n, 28, 28);
    write_idx_labels(dir + "/t10k-labels-idx1-ubyte", labels);
}

}  // namespace qvnn
