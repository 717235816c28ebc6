#pragma once

#include <string>

#include "ptq/quantizer.hpp"
#include "ptq/types.hpp"

namespace ptq {

// Result of the clip-threshold root solve, with its bracketing certificate.
struct ClipSolution {
    double alpha = 0.0;
    double sigma = 0.0;
    int bits = 0;
    double residual = 0.0;  // |f(alpha)| at the returned root
    int iterations = 0;
};

// Population standard deviation. Requires at least two elements and finite
// values; returns 0 for a constant tensor.
double estimate_sigma(const ArrF& values);
double estimate_sigma(const TensorRecord& tensor);

// Derivative of the expected clipped-quantization error for zero-mean
// Gaussian weights:
//   f(a) = a * (1 - erf(a / (sqrt(2) * sigma)))
//        - (2 * sigma / sqrt(2*pi)) * exp(-a^2 / (2 * sigma^2))
//        + 2 * a / (3 * 2^(2k))
// Negative near 0, positive for large a; degree-1 homogeneous in (a, sigma).
double aciq_objective_derivative(double alpha, double sigma, int bits);

// Bisection root of the derivative on [1e-6 * sigma, 20 * sigma]. tol is the
// bracket-width stopping threshold (<= 0 selects the default 1e-8 * sigma).
// Throws solver_failure if the objective does not change sign on the bracket.
ClipSolution solve_alpha(double sigma, int bits, double tol = 0.0);

// Clip to [-alpha, alpha] at the solved threshold, then symmetric linear
// quantization with step = alpha / (2^(k-1) - 1). A constant tensor (zero
// sigma) falls back to plain quantize_lq; `warning`, when non-null, receives
// a note in that case.
QuantizedTensor quantize_aciq(const TensorRecord& tensor, int bits,
                              std::string* warning = nullptr);

}  // namespace ptq
