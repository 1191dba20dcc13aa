// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/tensor.hpp"

namespace tfew {

// Checkpoint container, little-endian throughout:
//
//   magic "IA3C" | u32 version | u32 meta_len | meta (UTF-8 JSON)
//   | u32 array_count
//   | per array: u32 name_len | name | u32 rank | u32 dims[rank]
//                | f32 payload[prod(dims)]
//   | u32 crc32 of everything above
//
// Arrays are always float32 regardless of compute precision.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'I', 'A', '3', 'C'};

struct NamedArray {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

struct CheckpointContent {
    std::string meta_json;
    std::vector<NamedArray> arrays;
};

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t seed = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& buf, float v) {
    put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

class Reader {
   public:
    Reader(const unsigned char* data, std::size_t len) : data_(data), len_(len) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == len_; }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > len_) throw CheckpointCrcError("checkpoint truncated");
    }
    const unsigned char* data_;
    std::size_t len_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const std::string& meta_json,
                                                       const std::vector<NamedArray>& arrays) {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
    detail::put_u32(buf, kCheckpointVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(meta_json.size()));
    buf.insert(buf.end(), meta_json.begin(), meta_json.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.numel() != a.data.size()) {
            throw ContractError("array '" + a.name + "' dims do not match payload length");
        }
        detail::put_u32(buf, static_cast<std::uint32_t>(a.name.size()));
        buf.insert(buf.end(), a.name.begin(), a.name.end());
        detail::put_u32(buf, static_cast<std::uint32_t>(a.dims.size()));
        for (auto d : a.dims) detail::put_u32(buf, d);
        for (float v : a.data) detail::put_f32(buf, v);
    }
    detail::put_u32(buf, crc32(buf.data(), buf.size()));
    return buf;
}

inline CheckpointContent parse_checkpoint(const std::vector<unsigned char>& buf) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
        throw CheckpointMagicError("bad checkpoint magic");
    }
    if (buf.size() < 12) throw CheckpointCrcError("checkpoint truncated");

    const std::size_t body = buf.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[body + i]) << (8 * i);
    if (crc32(buf.data(), body) != stored) {
        throw CheckpointCrcError("checkpoint crc mismatch");
    }

    detail::Reader r(buf.data() + 4, body - 4);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError("unsupported checkpoint version " +
                                     std::to_string(version));
    }
    CheckpointContent out;
    out.meta_json = r.bytes(r.u32());
    const std::uint32_t count = r.u32();
    out.arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.bytes(r.u32());
        const std::uint32_t rank = r.u32();
        a.dims.resize(rank);
        for (auto& d : a.dims) d = r.u32();
        a.data.resize(a.numel());
        for (auto& v : a.data) v = r.f32();
        out.arrays.push_back(std::move(a));
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const std::string& meta_json,
                            const std::vector<NamedArray>& arrays) {
    const auto buf = serialize_checkpoint(meta_json, arrays);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointIoError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw CheckpointIoError("short write to '" + path + "'");
}

inline CheckpointContent load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointIoError("cannot open '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    return parse_checkpoint(buf);
}

/// Tensors to float32 arrays in the given canonical order.
template <class Real>
std::vector<NamedArray> tensors_to_arrays(
    const std::vector<std::pair<std::string, Tensor<Real>>>& named) {
    std::vector<NamedArray> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) {
        NamedArray a;
        a.name = name;
        for (int d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
        a.data.reserve(t.numel());
        for (Real v : t.value()) a.data.push_back(static_cast<float>(v));
        out.push_back(std::move(a));
    }
    return out;
}

/// Loads float32 arrays back into matching tensors; names, order, and shapes
/// must agree exactly.
template <class Real>
void arrays_to_tensors(const std::vector<NamedArray>& arrays,
                       const std::vector<std::pair<std::string, Tensor<Real>>>& named) {
    if (arrays.size() != named.size()) {
        throw ContractError("checkpoint has " + std::to_string(arrays.size()) +
                            " arrays, expected " + std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        const auto& a = arrays[i];
        const auto& [name, t] = named[i];
        if (a.name != name) {
            throw ContractError("checkpoint array '" + a.name + "' where '" + name +
                                "' was expected");
        }
        if (a.numel() != t.numel()) {
            throw ContractError("checkpoint array '" + a.name + "' has wrong size");
        }
        auto vals = t.mutable_value();
        for (std::size_t j = 0; j < a.data.size(); ++j) vals[j] = static_cast<Real>(a.data[j]);
    }
}

}  // namespace tfew
