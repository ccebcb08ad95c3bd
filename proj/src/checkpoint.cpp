// Copyright (c) 2026 The hlm authors
// SPDX-License-Identifier: Apache-2.0

#include "hlm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace hlm {

namespace {

constexpr char kMagic[4] = {'H', 'L', 'M', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr i64 kPayloadAlign = 4096;

template <typename T>
void put(std::vector<std::byte>& out, T v) {
    // Fields are written little-endian; this build targets LE hosts.
    std::byte b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T take(const std::vector<std::byte>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ConfigError("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const MasterStore& store, const std::string& path) {
    std::vector<std::byte> header;
    header.insert(header.end(), reinterpret_cast<const std::byte*>(kMagic),
                  reinterpret_cast<const std::byte*>(kMagic) + 4);
    put<std::uint32_t>(header, kVersion);
    put<std::uint32_t>(header, static_cast<std::uint32_t>(store.physical_tiles()));
    put<std::uint32_t>(header, static_cast<std::uint32_t>(store.dtype()));
    put<std::uint64_t>(header, static_cast<std::uint64_t>(store.total_params()));
    put<std::uint64_t>(header, static_cast<std::uint64_t>(store.adam_steps()));
    for (i64 p = 0; p < store.physical_tiles(); ++p)
        put<std::uint64_t>(header, static_cast<std::uint64_t>(store.physical(p).n_params()));
    put<std::uint32_t>(header, static_cast<std::uint32_t>(store.logical_tiles()));
    for (i64 l = 0; l < store.logical_tiles(); ++l)
        put<std::uint32_t>(header, static_cast<std::uint32_t>(store.physical_index(l)));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open checkpoint file for writing: " + path);
    f.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
    i64 written = static_cast<i64>(header.size());
    const std::vector<char> pad(kPayloadAlign, 0);
    for (i64 p = 0; p < store.physical_tiles(); ++p) {
        const i64 aligned = (written + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign;
        if (aligned > written) f.write(pad.data(), aligned - written);
        written = aligned;
        const LayerTile& tile = store.physical(p);
        f.write(reinterpret_cast<const char*>(tile.raw()),
                static_cast<std::streamsize>(tile.byte_size()));
        written += tile.byte_size();
    }
    if (!f) throw ConfigError("checkpoint write failed: " + path);
}

void load_checkpoint(MasterStore& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint file: " + path);
    f.seekg(0, std::ios::end);
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::byte> buf(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) throw ConfigError("checkpoint read failed: " + path);

    std::size_t pos = 0;
    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ConfigError("not an HLM1 checkpoint: " + path);
    pos = 4;
    const auto version = take<std::uint32_t>(buf, pos);
    if (version != kVersion) throw ConfigError("unsupported HLM1 version");
    const auto n_physical = take<std::uint32_t>(buf, pos);
    const auto dtype_code = take<std::uint32_t>(buf, pos);
    const auto total_params = take<std::uint64_t>(buf, pos);
    const auto adam_steps = take<std::uint64_t>(buf, pos);
    if (static_cast<i64>(n_physical) != store.physical_tiles())
        throw ConfigError("checkpoint tile count does not match the model");
    if (static_cast<Dtype>(dtype_code) != store.dtype())
        throw ConfigError("checkpoint dtype does not match the store");
    if (static_cast<i64>(total_params) != store.total_params())
        throw ConfigError("checkpoint parameter count does not match the model");
    std::vector<std::uint64_t> n_params(n_physical);
    for (auto& n : n_params) n = take<std::uint64_t>(buf, pos);
    const auto n_logical = take<std::uint32_t>(buf, pos);
    if (static_cast<i64>(n_logical) != store.logical_tiles())
        throw ConfigError("checkpoint alias table does not match the model");
    for (std::uint32_t l = 0; l < n_logical; ++l) {
        const auto phys = take<std::uint32_t>(buf, pos);
        if (static_cast<i64>(phys) != store.physical_index(static_cast<i64>(l)))
            throw ConfigError("checkpoint alias table does not match the model");
    }
    i64 off = static_cast<i64>(pos);
    for (i64 p = 0; p < store.physical_tiles(); ++p) {
        if (static_cast<i64>(n_params[static_cast<std::size_t>(p)]) !=
            store.physical(p).n_params())
            throw ConfigError("checkpoint tile geometry does not match the model");
        off = (off + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign;
        LayerTile& tile = store.physical(p);
        if (off + tile.byte_size() > static_cast<i64>(buf.size()))
            throw ConfigError("checkpoint truncated");
        std::memcpy(tile.raw(), buf.data() + off, static_cast<std::size_t>(tile.byte_size()));
        off += tile.byte_size();
    }
    store.set_adam_steps(static_cast<i64>(adam_steps));
}

}  // namespace hlm
