#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lightningnet/errors.hpp"
#include "lightningnet/tensor.hpp"

namespace lnet {

// Checkpoint container: magic "LNET", u16 format version (little-endian),
// a table of named float32 tensors, then a canonical-JSON config block.
inline constexpr char kCheckpointMagic[4] = {'L', 'N', 'E', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Tensor2D tensor;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size())
        throw data_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
}

inline std::uint32_t float_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

inline float bits_float(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

} // namespace detail

inline std::string serialize_checkpoint(const std::vector<CheckpointEntry>& entries,
                                        const std::string& config_json) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_le<std::uint16_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out.append(e.name);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rows()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.cols()));
        for (std::size_t i = 0; i < e.tensor.size(); ++i)
            detail::put_le<std::uint32_t>(
                out, detail::float_bits(static_cast<float>(e.tensor.data()[i])));
    }
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config_json.size()));
    out.append(config_json);
    return out;
}

struct Checkpoint {
    std::vector<CheckpointEntry> entries;
    std::string config_json;

    const Tensor2D& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.tensor;
        throw data_error("checkpoint: missing entry '" + name + "'");
    }
};

inline Checkpoint parse_checkpoint(const std::string& buf) {
    std::size_t pos = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw data_error("checkpoint: bad magic");
    pos = 4;
    const auto version = detail::get_le<std::uint16_t>(buf, pos);
    if (version != kCheckpointVersion)
        throw data_error("checkpoint: unsupported version " + std::to_string(version));
    const auto count = detail::get_le<std::uint32_t>(buf, pos);
    Checkpoint ck;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = detail::get_le<std::uint16_t>(buf, pos);
        if (pos + name_len > buf.size()) throw data_error("checkpoint: truncated file");
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        const auto rows = detail::get_le<std::uint32_t>(buf, pos);
        const auto cols = detail::get_le<std::uint32_t>(buf, pos);
        Tensor2D t(rows, cols);
        for (std::size_t i = 0; i < t.size(); ++i)
            t.data()[i] = detail::bits_float(detail::get_le<std::uint32_t>(buf, pos));
        ck.entries.push_back({std::move(name), std::move(t)});
    }
    const auto json_len = detail::get_le<std::uint32_t>(buf, pos);
    if (pos + json_len > buf.size()) throw data_error("checkpoint: truncated file");
    ck.config_json = buf.substr(pos, json_len);
    return ck;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw io_error("cannot open for writing: " + tmp);
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw io_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw io_error("rename failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return buf;
}

inline void save_checkpoint_file(const std::string& path,
                                 const std::vector<CheckpointEntry>& entries,
                                 const std::string& config_json) {
    write_file_atomic(path, serialize_checkpoint(entries, config_json));
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    return parse_checkpoint(read_file(path));
}

} // namespace lnet
