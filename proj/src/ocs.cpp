#include "ptq/ocs.hpp"

#include <cmath>

namespace ptq {

namespace {

void check_finite(const MatF& w) {
    if (!w.allFinite())
        throw Error(ErrorKind::non_finite, "matrix contains NaN or Inf");
}

void check_row(const MatF& w, Eigen::Index idx) {
    if (idx < 0 || idx >= w.rows())
        throw Error(ErrorKind::invalid_argument,
                    "channel index " + std::to_string(idx) + " out of range [0, " +
                        std::to_string(w.rows()) + ")");
}

void check_map(const SplitMap& map) {
    if (map.final_channels != map.original_channels + map.events.size())
        throw Error(ErrorKind::shape_mismatch,
                    "split map: final channel count does not match event count");
    for (std::size_t i = 0; i < map.events.size(); ++i) {
        const auto [src, appended] = map.events[i];
        if (appended != map.original_channels + i || src >= appended)
            throw Error(ErrorKind::shape_mismatch,
                        "split map: event " + std::to_string(i) +
                            " references an out-of-range channel");
    }
}

}  // namespace

Eigen::Index select_outlier_channel(const MatF& w, int axis) {
    if (axis != 0 && axis != 1)
        throw Error(ErrorKind::invalid_argument, "axis must be 0 or 1");
    if (w.size() == 0)
        throw Error(ErrorKind::invalid_argument, "cannot select a channel of an empty tensor");
    check_finite(w);
    const ArrF peaks = axis == 0 ? ArrF(w.cwiseAbs().rowwise().maxCoeff())
                                 : ArrF(w.cwiseAbs().colwise().maxCoeff().transpose());
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < peaks.size(); ++i)
        if (peaks[i] > peaks[best]) best = i;  // strict: ties keep the lowest index
    return best;
}

MatF split_channel_naive(const MatF& w, Eigen::Index idx) {
    check_row(w, idx);
    const Eigen::Matrix<float, 1, Eigen::Dynamic> half = w.row(idx) * 0.5f;
    MatF out(w.rows() + 1, w.cols());
    out.topRows(w.rows()) = w;
    out.row(idx) = half;
    out.row(w.rows()) = half;
    return out;
}

MatF split_channel_qa(const MatF& w, Eigen::Index idx, float step) {
    check_row(w, idx);
    if (!(step > 0.0f))
        throw Error(ErrorKind::invalid_argument, "step must be positive");
    const float offset = 0.25f * step;
    const Eigen::Matrix<float, 1, Eigen::Dynamic> half = w.row(idx) * 0.5f;
    MatF out(w.rows() + 1, w.cols());
    out.topRows(w.rows()) = w;
    out.row(idx) = half.array() - offset;
    out.row(w.rows()) = half.array() + offset;
    return out;
}

std::uint64_t split_count(double ratio, std::uint64_t channels) {
    if (ratio < 0.0 || ratio > 1.0)
        throw Error(ErrorKind::invalid_argument, "expansion ratio outside [0, 1]");
    const double raw = ratio * static_cast<double>(channels);
    const double snapped = std::nearbyint(raw);
    if (std::abs(raw - snapped) < 1e-9 * std::max(1.0, std::abs(raw)))
        return static_cast<std::uint64_t>(snapped);
    return static_cast<std::uint64_t>(std::ceil(raw));
}

std::pair<MatF, SplitMap> ocs_expand(const MatF& w, double ratio, int bits,
                                     SplitMode mode) {
    grid_max(bits);
    if (w.rows() < 1)
        throw Error(ErrorKind::invalid_argument, "expansion needs at least one channel");
    check_finite(w);

    SplitMap map;
    map.axis = 0;
    map.mode = mode;
    map.original_channels = static_cast<std::uint64_t>(w.rows());
    const std::uint64_t splits = split_count(ratio, map.original_channels);
    map.final_channels = map.original_channels;
    if (splits == 0) return {w, map};

    // Greedy pass: each iteration splits the current worst channel; split
    // halves stay eligible, so one dominant channel can be driven down by
    // successive halvings.
    MatF expanded = w;
    for (std::uint64_t i = 0; i < splits; ++i) {
        const Eigen::Index idx = select_outlier_channel(expanded, 0);
        expanded = split_channel_naive(expanded, idx);
        map.events.emplace_back(static_cast<std::uint64_t>(idx),
                                static_cast<std::uint64_t>(expanded.rows() - 1));
    }
    map.final_channels = map.original_channels + splits;

    if (mode == SplitMode::qa) {
        // Grid-aware halves need a step, and the step depends on the
        // post-split range; the naive pass above provides both the event
        // sequence and a provisional step, which this replay uses. The step
        // stored with the quantized tensor is recomputed downstream from the
        // replayed matrix.
        const float provisional_step = compute_step(expanded.cwiseAbs().maxCoeff(), bits);
        if (provisional_step > 0.0f) {
            expanded = w;
            for (const auto& [src, appended] : map.events) {
                (void)appended;
                expanded = split_channel_qa(expanded, static_cast<Eigen::Index>(src),
                                            provisional_step);
            }
        }
    }
    return {std::move(expanded), map};
}

QuantizedTensor quantize_ocs(const TensorRecord& tensor, int bits, double ratio,
                             SplitMode mode) {
    if (tensor.shape.empty())
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + tensor.name + "': splitting needs a channel axis");
    const auto [expanded, map] = ocs_expand(MatF(tensor.mat_f32()), ratio, bits, mode);

    std::vector<std::uint64_t> code_shape = tensor.shape;
    code_shape[0] = map.final_channels;
    QuantizedTensor out = quantize_lq(
        tensor.name,
        Eigen::Map<const ArrF>(expanded.data(), expanded.size()), code_shape, bits);
    out.method = mode == SplitMode::qa ? Method::ocs_qa : Method::ocs_naive;
    out.original_shape = tensor.shape;
    out.split_map = map;
    return out;
}

MatF fold_expanded(const MatF& expanded, const SplitMap& map) {
    check_map(map);
    if (static_cast<std::uint64_t>(expanded.rows()) != map.final_channels)
        throw Error(ErrorKind::shape_mismatch,
                    "fold: matrix has " + std::to_string(expanded.rows()) +
                        " channels, split map expects " +
                        std::to_string(map.final_channels));
    MatF folded = expanded;
    for (auto it = map.events.rbegin(); it != map.events.rend(); ++it)
        folded.row(static_cast<Eigen::Index>(it->first)) +=
            folded.row(static_cast<Eigen::Index>(it->second));
    return folded.topRows(static_cast<Eigen::Index>(map.original_channels));
}

TensorRecord fold(const QuantizedTensor& q) {
    if (!q.split_map)
        throw Error(ErrorKind::invalid_argument,
                    "tensor '" + q.name + "' has no split map to fold");
    const SplitMap& map = *q.split_map;
    if (q.code_shape.empty() || q.code_shape[0] != map.final_channels)
        throw Error(ErrorKind::shape_mismatch,
                    "tensor '" + q.name + "': code shape does not match split map");

    const ArrF values = dequantize_values(q);
    const std::uint64_t trail =
        map.final_channels == 0 ? 0 : values.size() / map.final_channels;
    const Eigen::Map<const MatF> expanded(values.data(),
                                          static_cast<Eigen::Index>(map.final_channels),
                                          static_cast<Eigen::Index>(trail));
    const MatF folded = fold_expanded(MatF(expanded), map);
    return TensorRecord::from_f32(q.name, q.original_shape, folded.data(),
                                  static_cast<std::size_t>(folded.size()));
}

MatF expand_inputs(const MatF& x, const SplitMap& map) {
    check_map(map);
    if (static_cast<std::uint64_t>(x.cols()) != map.original_channels)
        throw Error(ErrorKind::shape_mismatch,
                    "input has " + std::to_string(x.cols()) +
                        " columns, split map expects " +
                        std::to_string(map.original_channels));
    MatF out(x.rows(), static_cast<Eigen::Index>(map.final_channels));
    out.leftCols(x.cols()) = x;
    Eigen::Index cols = x.cols();
    for (const auto& [src, appended] : map.events) {
        (void)appended;
        out.col(cols) = out.col(static_cast<Eigen::Index>(src));
        ++cols;
    }
    return out;
}

}  // namespace ptq
