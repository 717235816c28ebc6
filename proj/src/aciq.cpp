#include "ptq/aciq.hpp"

#include <cmath>

namespace ptq {

namespace {
constexpr double kBracketLow = 1e-6;   // times sigma
constexpr double kBracketHigh = 20.0;  // times sigma
constexpr int kMaxIterations = 200;
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kSqrt2Pi = 2.5066282746310005024;
}  // namespace

double estimate_sigma(const ArrF& values) {
    if (values.size() < 2)
        throw Error(ErrorKind::invalid_argument,
                    "sigma estimate needs at least 2 elements");
    if (!values.allFinite())
        throw Error(ErrorKind::non_finite, "sigma estimate: input is not finite");
    const ArrD x = values.cast<double>();
    const double mean = x.mean();
    return std::sqrt((x - mean).square().mean());
}

double estimate_sigma(const TensorRecord& tensor) {
    return estimate_sigma(ArrF(tensor.f32()));
}

double aciq_objective_derivative(double alpha, double sigma, int bits) {
    grid_max(bits);
    if (!(alpha > 0.0))
        throw Error(ErrorKind::invalid_argument, "alpha must be positive");
    if (!(sigma > 0.0))
        throw Error(ErrorKind::invalid_argument, "sigma must be positive");
    const double clip_term = alpha * (1.0 - std::erf(alpha / (kSqrt2 * sigma)));
    const double tail_term =
        (2.0 * sigma / kSqrt2Pi) * std::exp(-(alpha * alpha) / (2.0 * sigma * sigma));
    const double grid_term = 2.0 * alpha / (3.0 * std::ldexp(1.0, 2 * bits));
    return clip_term - tail_term + grid_term;
}

ClipSolution solve_alpha(double sigma, int bits, double tol) {
    grid_max(bits);
    if (!(sigma > 0.0))
        throw Error(ErrorKind::invalid_argument, "sigma must be positive");
    if (tol <= 0.0) tol = 1e-8 * sigma;

    double lo = kBracketLow * sigma;
    double hi = kBracketHigh * sigma;
    double f_lo = aciq_objective_derivative(lo, sigma, bits);
    double f_hi = aciq_objective_derivative(hi, sigma, bits);
    if ((f_lo < 0.0) == (f_hi < 0.0))
        throw Error(ErrorKind::solver_failure,
                    "clip objective has no sign change on [" + std::to_string(lo) +
                        ", " + std::to_string(hi) + "]");

    ClipSolution sol;
    sol.sigma = sigma;
    sol.bits = bits;
    while (hi - lo > tol && sol.iterations < kMaxIterations) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = aciq_objective_derivative(mid, sigma, bits);
        if ((f_mid < 0.0) == (f_lo < 0.0)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        ++sol.iterations;
    }
    sol.alpha = 0.5 * (lo + hi);
    sol.residual = std::abs(aciq_objective_derivative(sol.alpha, sigma, bits));
    return sol;
}

QuantizedTensor quantize_aciq(const TensorRecord& tensor, int bits, std::string* warning) {
    const int q = grid_max(bits);
    const ArrF x = tensor.f32();
    if (!x.allFinite())
        throw Error(ErrorKind::non_finite,
                    "tensor '" + tensor.name + "' contains NaN or Inf");
    if (x.size() < 2)
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + tensor.name + "': clipping needs at least 2 elements");

    const double sigma = estimate_sigma(x);
    if (sigma == 0.0) {
        if (warning)
            *warning = "tensor '" + tensor.name +
                       "' is constant (sigma = 0); used plain linear quantization";
        return quantize_lq(tensor, bits);
    }

    const ClipSolution sol = solve_alpha(sigma, bits);
    const float alpha = static_cast<float>(sol.alpha);
    const float step = compute_step(alpha, bits);

    QuantizedTensor out;
    out.name = tensor.name;
    out.code_shape = tensor.shape;
    out.original_shape = tensor.shape;
    out.method = Method::aciq;
    out.params.bits = bits;
    out.params.step = step;
    out.params.clip_alpha = alpha;
    out.sigma = sigma;

    const float qf = static_cast<float>(q);
    out.codes.resize(static_cast<std::size_t>(x.size()));
    Eigen::Map<ArrI8>(out.codes.data(), x.size()) =
        (x.cwiseMax(-alpha).cwiseMin(alpha) / step)
            .unaryExpr([](float v) { return std::round(v); })
            .cwiseMax(-qf)
            .cwiseMin(qf)
            .cast<std::int8_t>();
    return out;
}

}  // namespace ptq
