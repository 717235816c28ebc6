#include "ptq/tensor_store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <utility>

namespace ptq {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'Q', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kDataAlignment = 64;
constexpr std::size_t kMaxNameBytes = 65535;

std::uint64_t checked_dim_product(const std::vector<std::uint64_t>& shape,
                                  const std::string& name) {
    std::uint64_t product = 1;
    for (std::uint64_t dim : shape) {
        if (dim != 0 && product > std::numeric_limits<std::uint64_t>::max() / dim)
            throw Error(ErrorKind::invalid_argument,
                        "tensor '" + name + "': dimension product overflows 64 bits");
        product *= dim;
    }
    return product;
}

class ByteWriter {
  public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { le(v); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void raw(const void* data, std::size_t size) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + size);
    }
    void pad_to(std::size_t alignment) {
        while (bytes_.size() % alignment != 0) bytes_.push_back(0);
    }
    std::size_t size() const { return bytes_.size(); }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

  private:
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bytes_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }

    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
    std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
    std::uint64_t u64(const char* what) { return le(8, what); }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    const std::uint8_t* cursor() const { return data_ + pos_; }

    void need(std::size_t n, const char* what) {
        if (remaining() < n)
            throw Error(ErrorKind::truncated,
                        std::string("file truncated while reading ") + what);
    }

  private:
    std::uint64_t le(std::size_t n, const char* what) {
        need(n, what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

}  // namespace

bool valid_utf8(std::string_view text) {
    std::size_t i = 0;
    const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
    while (i < text.size()) {
        const unsigned char c = byte(i);
        std::size_t extra;
        std::uint32_t code;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            extra = 1;
            code = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            extra = 2;
            code = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            extra = 3;
            code = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= text.size()) return false;
        for (std::size_t k = 1; k <= extra; ++k) {
            const unsigned char cc = byte(i + k);
            if ((cc & 0xc0) != 0x80) return false;
            code = (code << 6) | (cc & 0x3f);
        }
        // overlongs, surrogates, out of range
        static const std::uint32_t min_for_len[4] = {0, 0x80, 0x800, 0x10000};
        if (code < min_for_len[extra]) return false;
        if (code >= 0xd800 && code <= 0xdfff) return false;
        if (code > 0x10ffff) return false;
        i += extra + 1;
    }
    return true;
}

std::uint64_t TensorRecord::element_count() const {
    return checked_dim_product(shape, name);
}

std::uint64_t TensorRecord::lead_dim() const {
    if (shape.empty())
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + name + "': scalar has no channel axis");
    return shape[0];
}

std::uint64_t TensorRecord::trail_dim() const {
    const std::uint64_t lead = lead_dim();
    const std::uint64_t total = element_count();
    return lead == 0 ? 0 : total / lead;
}

Eigen::Map<const ArrF> TensorRecord::f32() const {
    if (dtype != DType::float32)
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + name + "' is not float32");
    return {reinterpret_cast<const float*>(data.data()),
            static_cast<Eigen::Index>(element_count())};
}

Eigen::Map<const ArrI8> TensorRecord::i8() const {
    if (dtype != DType::int8)
        throw Error(ErrorKind::invalid_argument, "tensor '" + name + "' is not int8");
    return {reinterpret_cast<const std::int8_t*>(data.data()),
            static_cast<Eigen::Index>(element_count())};
}

Eigen::Map<const MatF> TensorRecord::mat_f32() const {
    if (dtype != DType::float32)
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + name + "' is not float32");
    return {reinterpret_cast<const float*>(data.data()),
            static_cast<Eigen::Index>(lead_dim()),
            static_cast<Eigen::Index>(trail_dim())};
}

void TensorRecord::validate() const {
    if (name.empty())
        throw Error(ErrorKind::bad_name, "tensor name must be non-empty");
    if (name.size() > kMaxNameBytes)
        throw Error(ErrorKind::bad_name, "tensor '" + name.substr(0, 32) +
                                             "...': name exceeds 65535 bytes");
    if (!valid_utf8(name))
        throw Error(ErrorKind::bad_name, "tensor name is not valid UTF-8");
    const std::uint64_t expected = element_count() * dtype_size(dtype);
    if (data.size() != expected)
        throw Error(ErrorKind::bad_extent,
                    "tensor '" + name + "': buffer is " + std::to_string(data.size()) +
                        " bytes, shape requires " + std::to_string(expected));
}

TensorRecord TensorRecord::from_f32(std::string name, std::vector<std::uint64_t> shape,
                                    const float* values, std::size_t count) {
    TensorRecord t;
    t.name = std::move(name);
    t.dtype = DType::float32;
    t.shape = std::move(shape);
    t.data.resize(count * sizeof(float));
    if (count) std::memcpy(t.data.data(), values, count * sizeof(float));
    t.validate();
    return t;
}

TensorRecord TensorRecord::from_f32(std::string name, std::vector<std::uint64_t> shape,
                                    const ArrF& values) {
    return from_f32(std::move(name), std::move(shape), values.data(),
                    static_cast<std::size_t>(values.size()));
}

TensorRecord TensorRecord::from_f32(std::string name, const MatF& values) {
    return from_f32(std::move(name),
                    {static_cast<std::uint64_t>(values.rows()),
                     static_cast<std::uint64_t>(values.cols())},
                    values.data(), static_cast<std::size_t>(values.size()));
}

TensorRecord TensorRecord::from_i8(std::string name, std::vector<std::uint64_t> shape,
                                   const std::int8_t* values, std::size_t count) {
    TensorRecord t;
    t.name = std::move(name);
    t.dtype = DType::int8;
    t.shape = std::move(shape);
    t.data.resize(count);
    if (count) std::memcpy(t.data.data(), values, count);
    t.validate();
    return t;
}

const TensorRecord* Archive::find(std::string_view name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

const TensorRecord& Archive::get(std::string_view name) const {
    if (const TensorRecord* r = find(name)) return *r;
    throw Error(ErrorKind::not_found,
                "tensor '" + std::string(name) + "' not found in archive");
}

std::vector<std::uint8_t> write_archive(const Archive& archive) {
    if (archive.records.size() > std::numeric_limits<std::uint32_t>::max())
        throw Error(ErrorKind::invalid_argument, "too many tensors");
    if (archive.metadata.size() > std::numeric_limits<std::uint32_t>::max())
        throw Error(ErrorKind::invalid_argument, "metadata too large");
    if (!valid_utf8(archive.metadata))
        throw Error(ErrorKind::bad_metadata, "metadata is not valid UTF-8");

    std::vector<std::string_view> seen;
    seen.reserve(archive.records.size());
    for (const auto& r : archive.records) {
        r.validate();
        seen.push_back(r.name);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw Error(ErrorKind::duplicate_name,
                    "duplicate tensor name '" +
                        std::string(*std::adjacent_find(seen.begin(), seen.end())) + "'");

    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(archive.records.size()));
    w.u32(static_cast<std::uint32_t>(archive.metadata.size()));
    w.raw(archive.metadata.data(), archive.metadata.size());

    std::uint64_t offset = 0;  // payloads packed back-to-back in index order
    for (const auto& r : archive.records) {
        w.u16(static_cast<std::uint16_t>(r.name.size()));
        w.raw(r.name.data(), r.name.size());
        w.u8(static_cast<std::uint8_t>(r.dtype));
        if (r.shape.size() > 255)
            throw Error(ErrorKind::invalid_argument,
                        "tensor '" + r.name + "': rank exceeds 255");
        w.u8(static_cast<std::uint8_t>(r.shape.size()));
        for (std::uint64_t dim : r.shape) w.u64(dim);
        w.u64(offset);
        w.u64(r.data.size());
        offset += r.data.size();
    }

    w.pad_to(kDataAlignment);
    for (const auto& r : archive.records) w.raw(r.data.data(), r.data.size());
    return w.take();
}

Archive read_archive(const std::uint8_t* data, std::size_t size) {
    ByteReader r(data, size);

    const std::string magic = r.str(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw Error(ErrorKind::bad_magic, "bad magic: not a PTQT file");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw Error(ErrorKind::bad_version,
                    "unsupported PTQT version " + std::to_string(version));
    const std::uint32_t count = r.u32("tensor count");
    const std::uint32_t meta_len = r.u32("metadata length");

    Archive archive;
    archive.metadata = r.str(meta_len, "metadata");
    if (!valid_utf8(archive.metadata))
        throw Error(ErrorKind::bad_metadata, "metadata is not valid UTF-8");

    struct IndexEntry {
        std::uint64_t offset;
        std::uint64_t length;
    };
    std::vector<IndexEntry> extents;
    extents.reserve(count);

    archive.records.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord& t = archive.records[i];
        const std::uint16_t name_len = r.u16("tensor name length");
        t.name = r.str(name_len, "tensor name");
        if (t.name.empty())
            throw Error(ErrorKind::bad_name, "tensor name must be non-empty");
        if (!valid_utf8(t.name))
            throw Error(ErrorKind::bad_name,
                        "tensor #" + std::to_string(i) + ": name is not valid UTF-8");
        const std::uint8_t dtype_code = r.u8("dtype");
        if (dtype_code > 3)
            throw Error(ErrorKind::invalid_argument,
                        "tensor '" + t.name + "': unknown dtype code " +
                            std::to_string(dtype_code));
        t.dtype = static_cast<DType>(dtype_code);
        const std::uint8_t ndim = r.u8("rank");
        t.shape.resize(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d) t.shape[d] = r.u64("dimension");
        const std::uint64_t offset = r.u64("data offset");
        const std::uint64_t length = r.u64("data length");
        const std::uint64_t expected = checked_dim_product(t.shape, t.name) * dtype_size(t.dtype);
        if (length != expected)
            throw Error(ErrorKind::bad_extent,
                        "tensor '" + t.name + "': data length " + std::to_string(length) +
                            " does not match shape (" + std::to_string(expected) + ")");
        extents.push_back({offset, length});
    }

    // data section starts at the next 64-byte boundary
    std::size_t data_start = r.pos();
    while (data_start % kDataAlignment != 0) {
        r.need(1, "alignment padding");
        if (*r.cursor() != 0)
            throw Error(ErrorKind::bad_extent, "nonzero bytes in alignment padding");
        (void)r.u8("alignment padding");
        ++data_start;
    }
    const std::uint64_t data_bytes = size - data_start;

    std::vector<std::pair<std::uint64_t, std::uint32_t>> order;  // (offset, index)
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto [offset, length] = extents[i];
        if (offset > data_bytes || length > data_bytes - offset)
            throw Error(ErrorKind::truncated,
                        "file truncated: tensor '" + archive.records[i].name +
                            "' extends past end of data section");
        order.emplace_back(offset, i);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t i = 1; i < order.size(); ++i) {
        const auto& prev = extents[order[i - 1].second];
        if (order[i].first < prev.offset + prev.length)
            throw Error(ErrorKind::bad_extent,
                        "overlapping tensor extents: '" +
                            archive.records[order[i].second].name + "' and '" +
                            archive.records[order[i - 1].second].name + "'");
    }

    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord& t = archive.records[i];
        const auto [offset, length] = extents[i];
        t.data.assign(data + data_start + offset, data + data_start + offset + length);
    }

    std::vector<std::string_view> names;
    names.reserve(count);
    for (const auto& t : archive.records) names.push_back(t.name);
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end())
        throw Error(ErrorKind::duplicate_name,
                    "duplicate tensor name '" +
                        std::string(*std::adjacent_find(names.begin(), names.end())) + "'");

    return archive;
}

Archive read_archive(const std::vector<std::uint8_t>& bytes) {
    return read_archive(bytes.data(), bytes.size());
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
    const std::vector<std::uint8_t> bytes = write_archive(archive);

    std::filesystem::path dir = path.parent_path();
    if (dir.empty()) dir = ".";
    std::random_device rd;
    const std::filesystem::path tmp =
        dir / (path.filename().string() + ".tmp." + std::to_string(rd()));

    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorKind::io_error, "cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error(ErrorKind::io_error, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error(ErrorKind::io_error,
                    "cannot move temporary file into place at '" + path.string() + "': " + ec.message());
    }
}

Archive load_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io_error, "cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return read_archive(bytes);
}

}  // namespace ptq
