#pragma once

#include <cstdint>
#include <utility>

#include "ptq/quantizer.hpp"
#include "ptq/types.hpp"

namespace ptq {

// Index of the channel whose largest absolute element is largest; ties break
// toward the lowest index. axis 0 selects among rows, axis 1 among columns.
Eigen::Index select_outlier_channel(const MatF& w, int axis = 0);

// Replace row idx by w[idx]/2 and append another w[idx]/2; the two halves sum
// back to the original row exactly.
MatF split_channel_naive(const MatF& w, Eigen::Index idx);

// Grid-aware halves w[idx]/2 - step/4 and w[idx]/2 + step/4: the quarter-step
// offsets place the halves on opposite sides of a rounding boundary, so their
// rounded sum tracks the original value more tightly than twice-rounded
// identical halves.
MatF split_channel_qa(const MatF& w, Eigen::Index idx, float step);

// ceil(ratio * channels) with a guard against ratios that are intended to be
// exact multiples but land a few ulps above one.
std::uint64_t split_count(double ratio, std::uint64_t channels);

// Performs split_count(ratio, rows) sequential splits, re-selecting the
// current outlier each time (split channels remain eligible). qa mode runs
// two passes: a naive pass fixes the event sequence and a provisional step
// from the post-split range, then the same events are replayed with
// grid-aware halves. The step recorded with the quantized tensor is always
// recomputed from the final expanded matrix.
std::pair<MatF, SplitMap> ocs_expand(const MatF& w, double ratio, int bits,
                                     SplitMode mode);

// Expand along the leading axis, then symmetric linear quantization of the
// expanded tensor. Requires rank >= 1 float32 input; rank > 2 is treated as
// (shape[0], rest).
QuantizedTensor quantize_ocs(const TensorRecord& tensor, int bits, double ratio,
                             SplitMode mode);

// Replays the split events in reverse, summing each appended channel back
// into its source; inverse of the expansion in exact arithmetic.
MatF fold_expanded(const MatF& expanded, const SplitMap& map);

// Dequantize then fold back to the original shape.
TensorRecord fold(const QuantizedTensor& q);

// Duplicates input columns per the split events so that
// expand_inputs(x, map) * expanded == x * original up to float associativity.
MatF expand_inputs(const MatF& x, const SplitMap& map);

}  // namespace ptq
