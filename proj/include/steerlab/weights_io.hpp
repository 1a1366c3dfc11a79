#pragma once

// "STW1" weight container:
//
//   bytes 0..3   magic "STW1"
//   bytes 4..11  header length N, unsigned 64-bit little-endian
//   next N bytes UTF-8 JSON header
//   remainder    tensor data, f32 little-endian
//
// The header maps each tensor name to {"dtype":"f32","shape":[...],"offset","length"}
// (offset and length in bytes, relative to the start of the data section) and
// carries the model config under "config". Tensors are laid out in name order.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/weights.hpp"

namespace steerlab {

inline constexpr std::string_view kContainerMagic = "STW1";

struct LoadedWeights {
    ModelConfig config;
    WeightStore store;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64_le(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p)
{
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

inline std::uint64_t get_u64_le(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Serialises config + store into container bytes. Deterministic.
inline std::string serialize_weights(const ModelConfig& config, const WeightStore& store)
{
    config.validate();
    check_store(config, store);

    nlohmann::json header;
    header["config"] = config;
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : store) {
        const std::uint64_t length = tensor.numel() * sizeof(float);
        header[name] = {{"dtype", "f32"}, {"shape", tensor.shape}, {"offset", offset}, {"length", length}};
        offset += length;
    }
    const std::string header_text = header.dump();

    std::string out;
    out.reserve(12 + header_text.size() + offset);
    out.append(kContainerMagic);
    detail::put_u64_le(out, header_text.size());
    out.append(header_text);
    for (const auto& [name, tensor] : store) {
        for (float x : tensor.data) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(x));
    }
    return out;
}

/// Parses container bytes. Throws FormatError (bad magic, malformed header),
/// TruncatedError (data shorter than declared) or ShapeError (shape/length mismatch).
inline LoadedWeights parse_weights(std::string_view bytes)
{
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < kContainerMagic.size()) throw TruncatedError("container shorter than its magic bytes");
    if (bytes.substr(0, 4) != kContainerMagic) throw FormatError("bad magic: not an STW1 container");
    if (bytes.size() < 12) throw TruncatedError("container ends inside the header length field");
    const std::uint64_t header_len = detail::get_u64_le(raw + 4);
    if (header_len > bytes.size() - 12) {
        throw TruncatedError("header declares " + std::to_string(header_len) + " bytes but only " +
                             std::to_string(bytes.size() - 12) + " remain");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("unparsable header: ") + e.what());
    }
    if (!header.is_object() || !header.contains("config")) throw FormatError("header has no 'config' entry");

    LoadedWeights out;
    out.config = header.at("config").get<ModelConfig>();
    try {
        out.config.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("invalid config: ") + e.what());
    }

    const std::string_view data = bytes.substr(12 + header_len);
    for (const auto& [name, entry] : header.items()) {
        if (name == "config") continue;
        std::vector<std::size_t> shape;
        std::uint64_t offset = 0;
        std::uint64_t length = 0;
        try {
            if (entry.at("dtype").get<std::string>() != "f32") {
                throw FormatError("tensor '" + name + "' has unsupported dtype");
            }
            shape = entry.at("shape").get<std::vector<std::size_t>>();
            offset = entry.at("offset").get<std::uint64_t>();
            length = entry.at("length").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("tensor '" + name + "': " + e.what());
        }
        const std::size_t count = Tensor::element_count(shape);
        if (length != count * sizeof(float)) {
            throw ShapeError("tensor '" + name + "' declares " + std::to_string(length) + " bytes for shape " +
                             shape_string(shape));
        }
        if (offset > data.size() || length > data.size() - offset) {
            throw TruncatedError("tensor '" + name + "' extends beyond the end of the file");
        }
        Tensor t(shape);
        const auto* p = raw + 12 + header_len + offset;
        for (std::size_t i = 0; i < count; ++i) {
            t.data[i] = std::bit_cast<float>(detail::get_u32_le(p + 4 * i));
        }
        out.store.emplace(name, std::move(t));
    }
    check_store(out.config, out.store);
    return out;
}

inline void save_weights(const std::filesystem::path& path, const ModelConfig& config, const WeightStore& store)
{
    const std::string bytes = serialize_weights(config, store);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write to '" + path.string() + "' failed");
}

inline std::string read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline LoadedWeights load_weights(const std::filesystem::path& path) { return parse_weights(read_file_bytes(path)); }

/// Content hash of the serialised container; identifies a model across files.
inline std::string weights_fingerprint(const ModelConfig& config, const WeightStore& store)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(serialize_weights(config, store))));
    return buf;
}

}  // namespace steerlab
