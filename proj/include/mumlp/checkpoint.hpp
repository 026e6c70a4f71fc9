#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "model.hpp"

namespace mumlp {

// Manifest <stem>.json: {format_version, config, blob, tensors:[{name, shape, byte_offset}], extra}
// Blob <stem>.bin: every tensor as little-endian float32, concatenated in manifest order.
inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

inline void put_f32le(std::vector<char>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

inline float get_f32le(const char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<float>(bits);
}

inline std::vector<char> read_file(const std::filesystem::path& path, ErrorKind missing_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(missing_kind, "cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::DataNotFound, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".json";
    return p;
}

inline std::filesystem::path blob_path(const std::filesystem::path& stem) {
    auto p = stem;
    p += ".bin";
    return p;
}

/// Writes <stem>.json and <stem>.bin. `extra` is stored verbatim in the
/// manifest (run config, normalization statistics, ...).
template <class T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& stem, const nlohmann::json& extra = nullptr) {
    std::vector<char> blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        const auto& t = model.tensor(i);
        tensors.push_back({{"name", model.name(i)}, {"shape", t.shape()}, {"byte_offset", blob.size()}});
        for (T v : t.data()) detail::put_f32le(blob, static_cast<float>(v));
    }
    nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                            {"config", model.config()},
                            {"blob", blob_path(stem).filename().string()},
                            {"tensors", tensors}};
    if (!extra.is_null()) manifest["extra"] = extra;
    detail::write_file(blob_path(stem), std::string(blob.begin(), blob.end()));
    detail::write_file(manifest_path(stem), manifest.dump(2) + "\n");
}

template <class T>
struct LoadedCheckpoint {
    Model<T> model;
    nlohmann::json extra;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& stem) {
    const auto text = detail::read_file(manifest_path(stem), ErrorKind::DataNotFound);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptManifest, manifest_path(stem).string() + ": " + e.what());
    }
    if (!manifest.is_object() || !manifest.contains("format_version")) {
        throw Error(ErrorKind::CorruptManifest, "manifest lacks format_version");
    }
    if (manifest["format_version"] != kCheckpointFormatVersion) {
        throw Error(ErrorKind::FormatVersionMismatch, "checkpoint format_version " + manifest["format_version"].dump() +
                                                          ", expected " + std::to_string(kCheckpointFormatVersion));
    }
    ModelConfig config;
    try {
        config = manifest.at("config").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptManifest, std::string("config: ") + e.what());
    }
    Model<T> model = [&] {
        try {
            return Model<T>(config);
        } catch (const Error& e) {
            throw Error(ErrorKind::CorruptManifest, std::string("config: ") + e.what());
        }
    }();

    const auto& tensors = manifest.at("tensors");
    if (!tensors.is_array() || tensors.size() != model.num_tensors()) {
        throw Error(ErrorKind::CorruptManifest, "config declares " + std::to_string(model.num_tensors()) +
                                                    " tensors, manifest lists " + std::to_string(tensors.size()));
    }
    auto blob_file = stem.parent_path() / manifest.value("blob", blob_path(stem).filename().string());
    const auto blob = detail::read_file(blob_file, ErrorKind::DataNotFound);

    for (std::size_t i = 0; i < model.num_tensors(); ++i) {
        const auto& entry = tensors[i];
        const auto& spec = model.specs()[i];
        const auto name = entry.value("name", std::string{});
        if (name != spec.name) {
            throw Error(ErrorKind::CorruptManifest, "tensor " + std::to_string(i) + " is '" + name + "', config expects '" +
                                                        spec.name + "'");
        }
        const auto shape = entry.value("shape", Shape{});
        if (shape.size() != spec.shape.size()) {
            throw Error(ErrorKind::CorruptManifest, "tensor '" + name + "' rank disagrees with config");
        }
        for (std::size_t a = 0; a < shape.size(); ++a) {
            if (shape[a] != spec.shape[a]) {
                throw Error(ErrorKind::CorruptManifest, "config." + spec.axis_fields[a] + " disagrees with tensor '" + name +
                                                            "' (stored " + to_string(shape) + ", config implies " +
                                                            to_string(spec.shape) + ")");
            }
        }
        const auto offset = entry.value("byte_offset", std::size_t{0});
        auto dst = model.tensor(i).data();
        if (offset + dst.size() * 4 > blob.size()) {
            throw Error(ErrorKind::CorruptManifest, "tensor '" + name + "' extends past the end of " + blob_file.string());
        }
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(detail::get_f32le(blob.data() + offset + 4 * k));
    }
    return {std::move(model), manifest.value("extra", nlohmann::json{})};
}

}  // namespace mumlp
