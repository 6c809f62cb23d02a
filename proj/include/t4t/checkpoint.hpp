#pragma once

// Checkpoint format, little-endian throughout:
//   magic "T4T1" | u32 version | u64 config_len | config bytes (architecture
//   key=value text) | u64 tensor_count | per tensor: u32 name_len, name,
//   u32 rank, u32 dims[rank], f32 data

#include "t4t/config.hpp"

#include <cstring>
#include <fstream>

namespace t4t {

constexpr char kCheckpointMagic[4] = {'T', '4', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename V>
void write_pod(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V read_pod(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("checkpoint: truncated file");
    return v;
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, DualSegModel<T>& model, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write(kCheckpointMagic, 4);
    detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
    const std::string arch = render_arch_config(cfg);
    detail::write_pod<std::uint64_t>(out, arch.size());
    out.write(arch.data(), static_cast<std::streamsize>(arch.size()));

    std::vector<std::pair<std::string, Tensor<T>*>> params;
    model.visit([&](const std::string& name, Tensor<T>& t) { params.emplace_back(name, &t); });
    detail::write_pod<std::uint64_t>(out, params.size());
    for (auto& [name, tensor] : params) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
        for (int d : tensor->shape()) detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < tensor->numel(); ++i)
            detail::write_pod<float>(out, static_cast<float>(tensor->at(static_cast<int>(i))));
    }
    if (!out) throw IoError("checkpoint: short write to " + path);
}

// Loads into an already-built model; the stored architecture snapshot must
// match the active config exactly.
template <typename T>
void load_checkpoint(const std::string& path, DualSegModel<T>& model, const RunConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const auto cfg_len = detail::read_pod<std::uint64_t>(in);
    std::string arch(cfg_len, '\0');
    in.read(arch.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw IoError("checkpoint: truncated config block");
    const std::string expected = render_arch_config(cfg);
    if (arch != expected)
        throw ConfigError("checkpoint: architecture snapshot does not match the active config:\n"
                          "--- stored ---\n" + arch + "--- active ---\n" + expected);

    std::vector<std::pair<std::string, Tensor<T>*>> params;
    model.visit([&](const std::string& name, Tensor<T>& t) { params.emplace_back(name, &t); });
    const auto count = detail::read_pod<std::uint64_t>(in);
    if (count != params.size())
        throw IoError("checkpoint: tensor count " + std::to_string(count) + " != model's " +
                      std::to_string(params.size()));
    for (auto& [name, tensor] : params) {
        const auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        if (!in || stored != name)
            throw IoError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
        const auto rank = detail::read_pod<std::uint32_t>(in);
        if (rank != static_cast<std::uint32_t>(tensor->rank()))
            throw IoError("checkpoint: rank mismatch for " + name);
        for (int d : tensor->shape()) {
            const auto stored_d = detail::read_pod<std::uint32_t>(in);
            if (stored_d != static_cast<std::uint32_t>(d))
                throw IoError("checkpoint: shape mismatch for " + name);
        }
        for (std::int64_t i = 0; i < tensor->numel(); ++i)
            tensor->ref(static_cast<int>(i)) = static_cast<T>(detail::read_pod<float>(in));
    }
}

} // namespace t4t
