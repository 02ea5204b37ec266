#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tabrec/tensor.hpp"

namespace tabrec {

// Checkpoint container, little-endian throughout:
//
//   bytes 0..7   magic "TBRCKPT1"
//   u64          metadata length
//   ...          metadata, UTF-8 JSON (config, step, anything the writer
//                wants; keys serialize sorted so reruns are byte-identical)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes,
//                u32 rank, u32 dims[rank],
//                u64 payload bytes, raw f32 payload
//
// Entries keep insertion order; payloads round-trip bit-exactly.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'T', 'B', 'R', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, 8);
    const std::string meta = ckpt.meta.dump();
    detail::put_u64(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        detail::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) detail::put_u32(os, static_cast<uint32_t>(d));
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        detail::put_u64(os, bytes);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    const uint64_t meta_len = detail::get_u64(is);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(meta_len));
    Checkpoint ckpt;
    ckpt.meta = nlohmann::json::parse(meta);
    const uint32_t count = detail::get_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = detail::get_u32(is);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::get_u32(is));
        const uint64_t bytes = detail::get_u64(is);
        if (bytes != static_cast<uint64_t>(numel_of(shape)) * sizeof(float))
            throw std::runtime_error("load_checkpoint: payload size mismatch for tensor " + name);
        std::vector<float> data(bytes / sizeof(float));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
    }
    return ckpt;
}

}  // namespace tabrec
