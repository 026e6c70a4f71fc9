#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mumlp {

/// Hyperspectral raster, band-interleaved by pixel: the C values of pixel
/// (x, y) start at (y * width + x) * bands.
struct HsiCube {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t bands = 0;
    std::vector<float> data;

    std::size_t pixels() const { return width * height; }
    std::span<const float> pixel(std::size_t index) const { return {data.data() + index * bands, bands}; }
};

/// Ground truth raster; 0 is background, 1..classes are classes.
struct LabelMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t classes = 0;
    std::vector<std::uint16_t> labels;

    std::uint16_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
};

struct BandStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct NormalizedCube {
    HsiCube cube;
    BandStats stats;
    std::vector<std::size_t> zero_variance_bands;  // reported, passed through as zeros
};

struct SplitFractions {
    double train = 0.05;
    double val = 0.05;
};

struct PixelSplit {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
    SplitFractions fractions;
};

enum class SplitPart { Train, Val, Test };

inline SplitPart parse_split_part(const std::string& name) {
    if (name == "train") return SplitPart::Train;
    if (name == "val") return SplitPart::Val;
    if (name == "test") return SplitPart::Test;
    throw Error(ErrorKind::ConfigError, "unknown split part '" + name + "' (expected train, val or test)");
}

inline const std::vector<std::size_t>& part_of(const PixelSplit& split, SplitPart part) {
    switch (part) {
        case SplitPart::Train: return split.train;
        case SplitPart::Val: return split.val;
        case SplitPart::Test: return split.test;
    }
    return split.test;
}

namespace detail {

inline nlohmann::json read_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::DataNotFound, "cannot open header " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::HeaderMismatch, path.string() + ": " + e.what());
    }
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::DataNotFound, "cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::DataNotFound, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::size_t header_dim(const nlohmann::json& h, const char* key, const std::filesystem::path& path) {
    if (!h.contains(key) || !h[key].is_number_unsigned() || h[key].get<std::size_t>() == 0) {
        throw Error(ErrorKind::HeaderMismatch, path.string() + ": '" + key + "' must be a positive integer");
    }
    return h[key].get<std::size_t>();
}

inline void expect_field(const nlohmann::json& h, const char* key, const char* value, const std::filesystem::path& path) {
    if (h.value(key, std::string{}) != value) {
        throw Error(ErrorKind::HeaderMismatch, path.string() + ": '" + key + "' must be \"" + value + "\"");
    }
}

}  // namespace detail

/// Raw file referenced by a header: its "data_file" entry (relative to the
/// header) or the header path with extension .raw.
inline std::filesystem::path raw_path_for(const std::filesystem::path& header_path) {
    std::ifstream in(header_path);
    if (in) {
        auto h = nlohmann::json::parse(in, nullptr, false);
        if (h.is_object() && h.contains("data_file")) return header_path.parent_path() / h["data_file"].get<std::string>();
    }
    auto p = header_path;
    return p.replace_extension(".raw");
}

inline HsiCube load_cube(const std::filesystem::path& header_path, const std::filesystem::path& raw_path) {
    const auto h = detail::read_header(header_path);
    detail::expect_field(h, "dtype", "f32le", header_path);
    detail::expect_field(h, "layout", "bip", header_path);
    HsiCube cube;
    cube.width = detail::header_dim(h, "width", header_path);
    cube.height = detail::header_dim(h, "height", header_path);
    cube.bands = detail::header_dim(h, "bands", header_path);
    const auto bytes = detail::read_bytes(raw_path);
    const std::size_t expected = cube.width * cube.height * cube.bands * 4;
    if (bytes.size() < expected) {
        throw Error(ErrorKind::TruncatedFile, raw_path.string() + " has " + std::to_string(bytes.size()) +
                                                  " bytes, header implies " + std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw Error(ErrorKind::HeaderMismatch, raw_path.string() + " has " + std::to_string(bytes.size()) +
                                                   " bytes, header implies " + std::to_string(expected));
    }
    cube.data.resize(expected / 4);
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        cube.data[i] = std::bit_cast<float>(bits);
        if (!std::isfinite(cube.data[i])) {
            throw Error(ErrorKind::NonFiniteValue, "value " + std::to_string(i) + " of " + raw_path.string() + " is not finite");
        }
    }
    return cube;
}

inline void save_cube(const HsiCube& cube, const std::filesystem::path& header_path, const std::filesystem::path& raw_path) {
    nlohmann::json h{{"width", cube.width},
                     {"height", cube.height},
                     {"bands", cube.bands},
                     {"dtype", "f32le"},
                     {"layout", "bip"},
                     {"data_file", raw_path.filename().string()}};
    std::ofstream(header_path, std::ios::trunc) << h.dump(2) << "\n";
    std::vector<unsigned char> bytes;
    bytes.reserve(cube.data.size() * 4);
    for (float v : cube.data) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
    }
    detail::write_bytes(raw_path, bytes);
}

inline LabelMap load_labels(const std::filesystem::path& header_path, const std::filesystem::path& raw_path) {
    const auto h = detail::read_header(header_path);
    detail::expect_field(h, "dtype", "u16le", header_path);
    LabelMap map;
    map.width = detail::header_dim(h, "width", header_path);
    map.height = detail::header_dim(h, "height", header_path);
    map.classes = detail::header_dim(h, "classes", header_path);
    const auto bytes = detail::read_bytes(raw_path);
    const std::size_t expected = map.width * map.height * 2;
    if (bytes.size() < expected) {
        throw Error(ErrorKind::TruncatedFile, raw_path.string() + " has " + std::to_string(bytes.size()) +
                                                  " bytes, header implies " + std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw Error(ErrorKind::HeaderMismatch, raw_path.string() + " has " + std::to_string(bytes.size()) +
                                                   " bytes, header implies " + std::to_string(expected));
    }
    map.labels.resize(map.width * map.height);
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        map.labels[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
        if (map.labels[i] > map.classes) {
            throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(map.labels[i]) + " at pixel " +
                                                        std::to_string(i) + " exceeds classes=" + std::to_string(map.classes));
        }
    }
    return map;
}

inline void save_labels(const LabelMap& map, const std::filesystem::path& header_path, const std::filesystem::path& raw_path) {
    nlohmann::json h{{"width", map.width},
                     {"height", map.height},
                     {"classes", map.classes},
                     {"dtype", "u16le"},
                     {"data_file", raw_path.filename().string()}};
    std::ofstream(header_path, std::ios::trunc) << h.dump(2) << "\n";
    std::vector<unsigned char> bytes;
    bytes.reserve(map.labels.size() * 2);
    for (auto v : map.labels) {
        bytes.push_back(static_cast<unsigned char>(v & 0xFF));
        bytes.push_back(static_cast<unsigned char>(v >> 8));
    }
    detail::write_bytes(raw_path, bytes);
}

/// Downsamples by an integer factor, keeping the label of the source pixel
/// nearest to each output pixel centre. For even factors the centre sits on
/// a corner shared by four source pixels; the top-left one wins.
inline LabelMap resample_labels_nearest(const LabelMap& src, std::size_t factor) {
    if (factor == 0 || src.width % factor != 0 || src.height % factor != 0) {
        throw Error(ErrorKind::NonDivisibleDimensions, std::to_string(src.width) + "x" + std::to_string(src.height) +
                                                           " not divisible by factor " + std::to_string(factor));
    }
    LabelMap out;
    out.width = src.width / factor;
    out.height = src.height / factor;
    out.classes = src.classes;
    out.labels.resize(out.width * out.height);
    const std::size_t offset = (factor - 1) / 2;
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) out.labels[y * out.width + x] = src.at(x * factor + offset, y * factor + offset);
    return out;
}

/// Per-band z-score over every pixel of the cube.
inline NormalizedCube normalize_cube(const HsiCube& cube) {
    NormalizedCube out;
    const std::size_t n = cube.pixels(), C = cube.bands;
    out.stats.mean.assign(C, 0.0);
    out.stats.stddev.assign(C, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t b = 0; b < C; ++b) out.stats.mean[b] += cube.data[p * C + b];
    for (auto& m : out.stats.mean) m /= static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t b = 0; b < C; ++b) {
            const double d = cube.data[p * C + b] - out.stats.mean[b];
            out.stats.stddev[b] += d * d;
        }
    for (std::size_t b = 0; b < C; ++b) {
        out.stats.stddev[b] = std::sqrt(out.stats.stddev[b] / static_cast<double>(n));
        if (!(out.stats.stddev[b] > 0.0)) out.zero_variance_bands.push_back(b);
    }
    out.cube = cube;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t b = 0; b < C; ++b) {
            const double s = out.stats.stddev[b];
            out.cube.data[p * C + b] = s > 0.0 ? static_cast<float>((cube.data[p * C + b] - out.stats.mean[b]) / s) : 0.0f;
        }
    return out;
}

/// Re-applies stored statistics (inference on the training cube or a new one).
inline HsiCube apply_normalization(const HsiCube& cube, const BandStats& stats) {
    if (stats.mean.size() != cube.bands || stats.stddev.size() != cube.bands) {
        throw Error(ErrorKind::ConfigMismatch, "normalization stats cover " + std::to_string(stats.mean.size()) +
                                                   " bands, cube has " + std::to_string(cube.bands));
    }
    HsiCube out = cube;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const std::size_t b = i % cube.bands;
        out.data[i] = stats.stddev[b] > 0.0 ? static_cast<float>((cube.data[i] - stats.mean[b]) / stats.stddev[b]) : 0.0f;
    }
    return out;
}

/// floor(fraction * n), tolerant of binary representation error.
inline std::size_t fraction_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

/// Stratified random split of the labelled pixels. Each class is shuffled
/// with its own substream of `seed`; the leftovers after train and val form
/// the test part.
inline PixelSplit split_pixels(const LabelMap& labels, SplitFractions fractions, std::uint64_t seed) {
    if (!(fractions.train > 0.0 && fractions.val > 0.0 && fractions.train + fractions.val < 1.0)) {
        throw Error(ErrorKind::ConfigError, "split fractions need 0 < train, val and train + val < 1");
    }
    std::vector<std::vector<std::size_t>> by_class(labels.classes + 1);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const auto l = labels.labels[i];
        if (l > labels.classes) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(l) + " exceeds classes");
        if (l != 0) by_class[l].push_back(i);
    }
    PixelSplit split;
    split.seed = seed;
    split.fractions = fractions;
    const RngStream root = RngStream(seed).split("split");
    for (std::size_t c = 1; c <= labels.classes; ++c) {
        auto& members = by_class[c];
        if (members.size() < 3) {
            throw Error(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                                   " labelled pixels (need at least 3)");
        }
        RngStream rng = root.split(c);
        rng.shuffle(std::span(members));
        const std::size_t n_train = fraction_count(fractions.train, members.size());
        const std::size_t n_val = fraction_count(fractions.val, members.size());
        split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
        split.val.insert(split.val.end(), members.begin() + n_train, members.begin() + n_train + n_val);
        split.test.insert(split.test.end(), members.begin() + n_train + n_val, members.end());
    }
    std::ranges::sort(split.train);
    std::ranges::sort(split.val);
    std::ranges::sort(split.test);
    return split;
}

template <class T>
struct Batch {
    Tensor<T> pixels;                  // [B x C]
    std::vector<std::size_t> labels;   // 0-based class indices
    std::vector<std::size_t> indices;  // linear pixel indices
};

/// One epoch over a split part in batches. With a shuffle seed the visiting
/// order is a seeded permutation; without one it is the stored order.
template <class T>
class BatchIterator {
public:
    BatchIterator(const HsiCube& cube, const LabelMap& labels, std::span<const std::size_t> part, std::size_t batch_size,
                  std::optional<std::uint64_t> shuffle_seed = std::nullopt)
        : cube_(&cube), labels_(&labels), order_(part.begin(), part.end()), batch_size_(batch_size) {
        if (batch_size == 0) throw Error(ErrorKind::ConfigError, "batch_size must be >= 1");
        if (shuffle_seed) RngStream(*shuffle_seed).split("batches").shuffle(std::span(order_));
    }

    std::size_t num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

    std::optional<Batch<T>> next() {
        if (pos_ >= order_.size()) return std::nullopt;
        const std::size_t end = std::min(pos_ + batch_size_, order_.size());
        const std::size_t B = end - pos_, C = cube_->bands;
        Batch<T> batch;
        std::vector<T> values(B * C);
        for (std::size_t r = 0; r < B; ++r) {
            const std::size_t idx = order_[pos_ + r];
            const auto label = labels_->labels.at(idx);
            if (label == 0) throw Error(ErrorKind::LabelOutOfRange, "background pixel " + std::to_string(idx) + " in split");
            auto px = cube_->pixel(idx);
            for (std::size_t b = 0; b < C; ++b) values[r * C + b] = static_cast<T>(px[b]);
            batch.labels.push_back(label - 1u);
            batch.indices.push_back(idx);
        }
        batch.pixels = Tensor<T>::from({B, C}, std::move(values));
        pos_ = end;
        return batch;
    }

private:
    const HsiCube* cube_;
    const LabelMap* labels_;
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
    std::size_t pos_ = 0;
};

/// Pixel values for arbitrary indices, ignoring labels.
template <class T>
Tensor<T> gather_pixels(const HsiCube& cube, std::span<const std::size_t> indices) {
    std::vector<T> values(indices.size() * cube.bands);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        auto px = cube.pixel(indices[r]);
        for (std::size_t b = 0; b < cube.bands; ++b) values[r * cube.bands + b] = static_cast<T>(px[b]);
    }
    return Tensor<T>::from({indices.size(), cube.bands}, std::move(values));
}

}  // namespace mumlp
