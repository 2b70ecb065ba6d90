#pragma once

// Flat binary parameter snapshots.
//
//   "VCHG"                      4 bytes magic
//   version                     1 byte (currently 1)
//   then, until end of file, one record per tensor:
//     name length               uint32 LE
//     name                      UTF-8 bytes, no terminator
//     rank                      uint32 LE
//     extents                   rank x uint64 LE
//     data                      prod(extents) x float64 LE, row-major

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vchgcl/parameters.hpp"

namespace vchgcl {

inline constexpr char kSnapshotMagic[4] = {'V', 'C', 'H', 'G'};
inline constexpr std::uint8_t kSnapshotVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

namespace detail {

template <class UInt>
void put_le(std::ostream& out, UInt value) {
    char bytes[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
    out.write(bytes, sizeof(UInt));
}

template <class UInt>
bool get_le(std::istream& in, UInt& value) {
    unsigned char bytes[sizeof(UInt)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) return false;
    value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(bytes[i]) << (8 * i);
    return true;
}

} // namespace detail

inline void write_snapshot(std::ostream& out, std::span<const NamedTensor> tensors) {
    out.write(kSnapshotMagic, 4);
    out.put(static_cast<char>(kSnapshotVersion));
    for (const auto& [name, t] : tensors) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto extent : t.shape()) detail::put_le<std::uint64_t>(out, extent);
        for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
}

inline std::vector<NamedTensor> read_snapshot(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kSnapshotMagic)) {
        throw ContractError("not a VCHG snapshot (bad magic)");
    }
    const int version = in.get();
    if (version != kSnapshotVersion) throw ContractError("unsupported snapshot version " + std::to_string(version));

    std::vector<NamedTensor> result;
    std::uint32_t name_len = 0;
    while (detail::get_le(in, name_len)) {
        std::string name(name_len, '\0');
        std::uint32_t rank = 0;
        if (!in.read(name.data(), name_len) || !detail::get_le(in, rank)) {
            throw ContractError("truncated snapshot record");
        }
        Shape shape(rank);
        for (auto& extent : shape) {
            std::uint64_t e = 0;
            if (!detail::get_le(in, e)) throw ContractError("truncated snapshot extents for '" + name + "'");
            extent = static_cast<std::size_t>(e);
        }
        std::vector<double> values(shape_size(shape));
        for (double& v : values) {
            std::uint64_t bits = 0;
            if (!detail::get_le(in, bits)) throw ContractError("truncated snapshot data for '" + name + "'");
            v = std::bit_cast<double>(bits);
        }
        result.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    return result;
}

inline void save_parameters(const std::filesystem::path& path, const ParameterStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::filesystem::filesystem_error("cannot open for writing", path, std::make_error_code(std::errc::io_error));
    std::vector<NamedTensor> records;
    for (const auto& p : store.all()) records.push_back({p.name, p.tensor});
    write_snapshot(out, records);
    if (!out) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

/// Overwrites the values of `store` in place. Every stored parameter must be
/// present in the file with an identical shape.
inline void load_parameters(const std::filesystem::path& path, ParameterStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::filesystem::filesystem_error("cannot open for reading", path, std::make_error_code(std::errc::no_such_file_or_directory));
    auto records = read_snapshot(in);
    if (records.size() != store.size()) {
        throw ContractError("snapshot holds " + std::to_string(records.size()) + " tensors, model expects " +
                            std::to_string(store.size()));
    }
    for (const auto& [name, t] : records) {
        Tensor target = store.get(name);
        if (target.shape() != t.shape()) {
            throw ShapeError("snapshot tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                             shape_str(target.shape()));
        }
        std::copy(t.data().begin(), t.data().end(), target.mutable_data().begin());
    }
}

} // namespace vchgcl
