#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "memmlp/autodiff.hpp"

// Checkpoint container, little-endian throughout:
//   magic   "MMWT"
//   u32     version (currently 1)
//   str     kind            (u32 byte length + bytes)
//   str     config JSON     (u32 byte length + bytes)
//   u32     record count
//   records each: str id, u32 ndim, u32 dims[ndim], f32 data[prod(dims)]

namespace memmlp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;
    std::string config_json;
    std::vector<std::pair<std::string, Tensor<float>>> records;

    const Tensor<float>& find(const std::string& id) const {
        for (const auto& [name, t] : records)
            if (name == id) return t;
        throw IoError("checkpoint: missing record '" + id + "'");
    }
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
    const std::uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& in) {
    const std::uint32_t n = read_u32(in);
    if (n > (1u << 24)) throw IoError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("checkpoint: truncated string");
    return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     std::span<const Parameter<T>* const> params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("MMWT", 4);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_str(out, kind);
    detail::write_str(out, config_json);
    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter<T>* p : params) {
        detail::write_str(out, p->id);
        detail::write_u32(out, static_cast<std::uint32_t>(p->value.shape.size()));
        for (std::size_t d : p->value.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
        for (const T& v : p->value.data) detail::write_f32(out, static_cast<float>(v));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MMWT", 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version");
    Checkpoint ck;
    ck.kind = detail::read_str(in);
    ck.config_json = detail::read_str(in);
    const std::uint32_t count = detail::read_u32(in);
    for (std::uint32_t r = 0; r < count; ++r) {
        std::string id = detail::read_str(in);
        const std::uint32_t ndim = detail::read_u32(in);
        if (ndim > 8) throw IoError("checkpoint: implausible rank");
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = detail::read_u32(in);
        Tensor<float> t(shape);
        for (auto& v : t.data) v = detail::read_f32(in);
        ck.records.emplace_back(std::move(id), std::move(t));
    }
    return ck;
}

// Copy checkpoint records into live parameters; every parameter must be
// present with a matching shape.
template <typename T>
void restore_params(const Checkpoint& ck, std::span<Parameter<T>* const> params) {
    for (Parameter<T>* p : params) {
        const Tensor<float>& rec = ck.find(p->id);
        if (rec.shape != p->value.shape)
            throw IoError("checkpoint: shape mismatch for '" + p->id + "'");
        for (std::size_t i = 0; i < rec.numel(); ++i)
            p->value.data[i] = static_cast<T>(rec.data[i]);
    }
}

}  // namespace memmlp
