#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "ptq/tensor_store.hpp"
#include "ptq/types.hpp"

namespace ptq {

// Largest grid code for a k-bit symmetric grid: 2^(k-1) - 1. Throws for
// k outside [2, 8].
int grid_max(int bits);

// step = max_abs / (2^(k-1) - 1); 0 when max_abs is 0.
float compute_step(float max_abs, int bits);

// Symmetric linear quantization: codes = clamp(round(x / step)) with the step
// derived from max|x|. Rounding is half-away-from-zero, so negating the input
// negates the codes. The element attaining max|x| always lands on the top
// code. Rejects NaN/Inf input.
QuantizedTensor quantize_lq(const TensorRecord& tensor, int bits);
QuantizedTensor quantize_lq(std::string name, const ArrF& values,
                            std::vector<std::uint64_t> shape, int bits);

// codes * step, at the code shape (split tensors are folded elsewhere).
ArrF dequantize_values(const QuantizedTensor& q);
TensorRecord dequantize(const QuantizedTensor& q);

namespace detail {
inline void check_same_shape(Eigen::Index ar, Eigen::Index ac, Eigen::Index br,
                             Eigen::Index bc) {
    if (ar != br || ac != bc)
        throw Error(ErrorKind::shape_mismatch,
                    "mse: operands have different shapes");
}
}  // namespace detail

// Mean squared difference, accumulated in double.
template <typename DerivedA, typename DerivedB>
double mse(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
    detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols());
    if (a.size() == 0) return 0.0;
    const auto da = a.derived().array().template cast<double>();
    const auto db = b.derived().array().template cast<double>();
    return (da - db).square().sum() / static_cast<double>(a.size());
}

double mse(const TensorRecord& a, const TensorRecord& b);

// 10 * log10(E[x^2] / mse); +infinity when the reconstruction is exact.
template <typename DerivedA, typename DerivedB>
double sqnr_db(const Eigen::DenseBase<DerivedA>& x, const Eigen::DenseBase<DerivedB>& x_hat) {
    const double err = mse(x, x_hat);
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    const double power =
        x.derived().array().template cast<double>().square().sum() /
        static_cast<double>(x.size());
    return 10.0 * std::log10(power / err);
}

double sqnr_db(const TensorRecord& x, const TensorRecord& x_hat);

}  // namespace ptq
