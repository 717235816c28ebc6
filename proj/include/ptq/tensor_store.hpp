#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ptq/types.hpp"

namespace ptq {

// Named n-dimensional tensor with a row-major element buffer. An empty shape
// denotes a scalar (one element). Data is stored as raw little-endian bytes;
// float32 payloads are IEEE-754 bit patterns and are never re-rounded.
struct TensorRecord {
    std::string name;
    DType dtype = DType::float32;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> data;

    // Product of dimensions (1 for a scalar); throws on 64-bit overflow.
    std::uint64_t element_count() const;
    std::uint64_t byte_count() const { return data.size(); }

    // Leading dimension and the product of the remaining ones; the matrix
    // view used by channel-level operations. Requires rank >= 1.
    std::uint64_t lead_dim() const;
    std::uint64_t trail_dim() const;

    Eigen::Map<const ArrF> f32() const;
    Eigen::Map<const ArrI8> i8() const;
    Eigen::Map<const MatF> mat_f32() const;

    // Name non-empty and <= 65535 bytes of valid UTF-8, buffer length
    // consistent with shape and dtype.
    void validate() const;

    static TensorRecord from_f32(std::string name, std::vector<std::uint64_t> shape,
                                 const float* values, std::size_t count);
    static TensorRecord from_f32(std::string name, std::vector<std::uint64_t> shape,
                                 const ArrF& values);
    static TensorRecord from_f32(std::string name, const MatF& values);
    static TensorRecord from_i8(std::string name, std::vector<std::uint64_t> shape,
                                const std::int8_t* values, std::size_t count);

    bool operator==(const TensorRecord&) const = default;
};

// Ordered tensor collection plus one UTF-8 metadata document. Immutable by
// convention after construction; mutation means building a new archive.
struct Archive {
    std::vector<TensorRecord> records;
    std::string metadata;

    const TensorRecord* find(std::string_view name) const;
    const TensorRecord& get(std::string_view name) const;  // throws not_found
    bool has(std::string_view name) const { return find(name) != nullptr; }

    bool operator==(const Archive&) const = default;
};

// PTQT v1 container layout (all integers little-endian):
//   bytes 0-3   magic "PTQT"
//   bytes 4-7   u32 version = 1
//   bytes 8-11  u32 tensor_count
//   bytes 12-15 u32 metadata_byte_len, followed by the metadata UTF-8 bytes
//   per tensor, in order:
//     u16 name_len, name bytes,
//     u8 dtype (0=float32, 1=int8, 2=int16, 3=int32), u8 ndim,
//     ndim x u64 dims,
//     u64 data_offset (relative to data-section start), u64 data_byte_len
//   zero padding to the next 64-byte boundary
//   data section: per-tensor payloads packed back-to-back in index order
std::vector<std::uint8_t> write_archive(const Archive& archive);

Archive read_archive(const std::uint8_t* data, std::size_t size);
Archive read_archive(const std::vector<std::uint8_t>& bytes);

// File helpers. save_archive writes to a temporary sibling and renames on
// success, so an interrupted run never leaves a truncated file at `path`.
void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

bool valid_utf8(std::string_view text);

}  // namespace ptq
