#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ptq {

// Dense aliases. Weights are row-major float32 throughout; statistics and
// solver math run in double.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using ArrF = Arr<float>;
using ArrD = Arr<double>;
using ArrI8 = Arr<std::int8_t>;

enum class DType : std::uint8_t {
    float32 = 0,
    int8 = 1,
    int16 = 2,
    int32 = 3,
};

std::size_t dtype_size(DType dtype);
const char* dtype_name(DType dtype);

enum class Method {
    lq,
    aciq,
    ocs_naive,
    ocs_qa,
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);

enum class SplitMode { naive, qa };

enum class ErrorKind {
    invalid_argument,
    non_finite,
    bad_magic,
    bad_version,
    truncated,
    bad_extent,
    bad_name,
    duplicate_name,
    not_found,
    shape_mismatch,
    bad_metadata,
    solver_failure,
    io_error,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

// Ordered record of channel duplications along one axis. Each event stores
// (source channel index valid at the time of the split, index of the channel
// appended at the then-current end). Replaying the events against a growing
// channel counter never references an out-of-range channel.
struct SplitMap {
    int axis = 0;
    SplitMode mode = SplitMode::naive;
    std::uint64_t original_channels = 0;
    std::uint64_t final_channels = 0;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> events;

    bool operator==(const SplitMap&) const = default;
};

// Symmetric grid: signed codes in [-(2^(bits-1)-1), 2^(bits-1)-1], i.e.
// 2^bits - 1 levels, one real-valued step per tensor. step == 0 only for the
// all-zero tensor.
struct QuantParams {
    int bits = 8;
    float step = 0.0f;
    std::optional<float> clip_alpha;  // present only for clipped quantization

    bool operator==(const QuantParams&) const = default;
};

struct QuantizedTensor {
    std::string name;
    std::vector<std::int8_t> codes;            // row-major, code_shape layout
    std::vector<std::uint64_t> code_shape;     // == original_shape unless split
    std::vector<std::uint64_t> original_shape;
    QuantParams params;
    Method method = Method::lq;
    std::optional<SplitMap> split_map;
    std::optional<double> sigma;  // recorded by the clipping path

    std::uint64_t code_count() const { return codes.size(); }
};

}  // namespace ptq
