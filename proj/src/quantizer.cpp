#include "ptq/quantizer.hpp"

#include <cmath>

namespace ptq {

int grid_max(int bits) {
    if (bits < 2 || bits > 8)
        throw Error(ErrorKind::invalid_argument,
                    "bit width " + std::to_string(bits) + " outside [2, 8]");
    return (1 << (bits - 1)) - 1;
}

float compute_step(float max_abs, int bits) {
    const int q = grid_max(bits);
    if (std::isnan(max_abs) || std::isinf(max_abs))
        throw Error(ErrorKind::non_finite, "max_abs is not finite");
    if (max_abs < 0.0f)
        throw Error(ErrorKind::invalid_argument, "max_abs must be non-negative");
    if (max_abs == 0.0f) return 0.0f;
    return max_abs / static_cast<float>(q);
}

QuantizedTensor quantize_lq(std::string name, const ArrF& values,
                            std::vector<std::uint64_t> shape, int bits) {
    const int q = grid_max(bits);
    if (!values.allFinite())
        throw Error(ErrorKind::non_finite,
                    "tensor '" + name + "' contains NaN or Inf");

    QuantizedTensor out;
    out.name = std::move(name);
    out.code_shape = shape;
    out.original_shape = std::move(shape);
    out.method = Method::lq;
    out.params.bits = bits;

    const float max_abs = values.size() ? values.abs().maxCoeff() : 0.0f;
    out.params.step = compute_step(max_abs, bits);
    out.codes.resize(static_cast<std::size_t>(values.size()));
    if (out.params.step > 0.0f) {
        const float qf = static_cast<float>(q);
        Eigen::Map<ArrI8>(out.codes.data(), values.size()) =
            (values / out.params.step)
                .unaryExpr([](float v) { return std::round(v); })
                .cwiseMax(-qf)
                .cwiseMin(qf)
                .cast<std::int8_t>();
    }
    return out;
}

QuantizedTensor quantize_lq(const TensorRecord& tensor, int bits) {
    return quantize_lq(tensor.name, tensor.f32(), tensor.shape, bits);
}

ArrF dequantize_values(const QuantizedTensor& q) {
    return Eigen::Map<const ArrI8>(q.codes.data(),
                                   static_cast<Eigen::Index>(q.codes.size()))
               .cast<float>() *
           q.params.step;
}

TensorRecord dequantize(const QuantizedTensor& q) {
    return TensorRecord::from_f32(q.name, q.code_shape, dequantize_values(q));
}

double mse(const TensorRecord& a, const TensorRecord& b) {
    if (a.shape != b.shape)
        throw Error(ErrorKind::shape_mismatch,
                    "mse: tensors '" + a.name + "' and '" + b.name +
                        "' have different shapes");
    return mse(a.f32(), b.f32());
}

double sqnr_db(const TensorRecord& x, const TensorRecord& x_hat) {
    if (x.shape != x_hat.shape)
        throw Error(ErrorKind::shape_mismatch,
                    "sqnr: tensors '" + x.name + "' and '" + x_hat.name +
                        "' have different shapes");
    return sqnr_db(x.f32(), x_hat.f32());
}

}  // namespace ptq
