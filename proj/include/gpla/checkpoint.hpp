#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gpla/nn.hpp"
#include "gpla/optim.hpp"

// Checkpoint file layout (little endian):
//   8 bytes magic "GPLACKPT", u32 format_version, u32 param count,
//   per param: u32 name length, name bytes, u32 rank, u32 dims[rank],
//   u64 payload float count, payload f32s,
//   u32 optimizer-present flag, then u64 float count + f32s + i64 step.
namespace gpla::ckpt {

using tc::Tensor;

inline constexpr char kMagic[8] = {'G', 'P', 'L', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw IoError("checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void save(const std::filesystem::path& path, const nn::ParamRegistry& reg,
                 const optim::Adam* opt = nullptr) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    detail::put<std::uint32_t>(buf, kFormatVersion);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(reg.count()));
    for (const auto& [name, t] : reg.items()) {
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
        buf.append(name);
        detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    }
    detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(reg.total_scalars()));
    for (const auto& [name, t] : reg.items())
        buf.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    if (opt) {
        detail::put<std::uint32_t>(buf, 1u);
        std::vector<float> state = opt->state_blob();
        detail::put<std::uint64_t>(buf, static_cast<std::uint64_t>(state.size()));
        buf.append(reinterpret_cast<const char*>(state.data()), state.size() * sizeof(float));
        detail::put<std::int64_t>(buf, opt->step_count());
    } else {
        detail::put<std::uint32_t>(buf, 0u);
    }
    detail::write_atomic(path, buf);
}

// Loads parameters by name into an already-constructed registry. Every
// parameter must be present with a matching shape; extras are an error.
inline void load(const std::filesystem::path& path, const nn::ParamRegistry& reg,
                 optim::Adam* opt = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t off = 0;
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("bad checkpoint magic in " + path.string());
    off += sizeof(kMagic);
    const auto version = detail::take<std::uint32_t>(buf, off);
    if (version != kFormatVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto n = detail::take<std::uint32_t>(buf, off);
    if (n != reg.count())
        throw IoError("checkpoint has " + std::to_string(n) + " params, model expects " +
                      std::to_string(reg.count()));
    std::vector<std::string> names(n);
    std::vector<tc::Shape> shapes(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = detail::take<std::uint32_t>(buf, off);
        if (off + len > buf.size()) throw IoError("checkpoint truncated");
        names[i].assign(buf.data() + off, len);
        off += len;
        const auto rank = detail::take<std::uint32_t>(buf, off);
        for (std::uint32_t r = 0; r < rank; ++r)
            shapes[i].push_back(static_cast<int>(detail::take<std::uint32_t>(buf, off)));
    }
    const auto payload = detail::take<std::uint64_t>(buf, off);
    if (payload != reg.total_scalars())
        throw IoError("checkpoint payload size mismatch");
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!reg.has(names[i])) throw IoError("checkpoint has unknown parameter '" + names[i] + "'");
        const Tensor& t = reg.get(names[i]);
        if (t.shape() != shapes[i])
            throw IoError("shape mismatch for '" + names[i] + "': checkpoint " + tc::shape_str(shapes[i]) +
                          " vs model " + tc::shape_str(t.shape()));
        if (off + t.size() * sizeof(float) > buf.size()) throw IoError("checkpoint truncated");
        std::memcpy(t.data(), buf.data() + off, t.size() * sizeof(float));
        off += t.size() * sizeof(float);
    }
    const auto has_opt = detail::take<std::uint32_t>(buf, off);
    if (has_opt) {
        const auto count = detail::take<std::uint64_t>(buf, off);
        std::vector<float> state(count);
        if (off + count * sizeof(float) > buf.size()) throw IoError("checkpoint truncated");
        std::memcpy(state.data(), buf.data() + off, count * sizeof(float));
        off += count * sizeof(float);
        const auto step = detail::take<std::int64_t>(buf, off);
        if (opt) opt->load_state_blob(state, step);
    } else if (opt) {
        throw IoError("checkpoint " + path.string() + " has no optimizer state");
    }
}

}  // namespace gpla::ckpt
