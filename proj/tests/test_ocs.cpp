#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ptq/ocs.hpp"
#include "ptq/rng.hpp"

using namespace ptq;

namespace {

MatF gaussian_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols,
                     float sigma = 1.0f) {
    Rng rng(seed);
    MatF w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = sigma * static_cast<float>(rng.next_gaussian());
    return w;
}

double rel_err(const MatF& a, const MatF& b) {
    const double denom = b.cast<double>().norm();
    return denom == 0.0 ? 0.0 : (a - b).cast<double>().norm() / denom;
}

TensorRecord record(const std::string& name, const MatF& w) {
    return TensorRecord::from_f32(name, w);
}

}  // namespace

TEST_CASE("select_outlier_channel") {
    MatF w(3, 2);
    w << 1, 1, 5, 0, 2, 2;
    CHECK(select_outlier_channel(w, 0) == 1);

    MatF cols(2, 3);
    cols << 1, 5, 2, 1, 0, 2;
    CHECK(select_outlier_channel(cols, 1) == 1);

    const MatF even = MatF::Constant(4, 4, 2.0f);
    CHECK(select_outlier_channel(even, 0) == 0);  // ties break low

    const MatF empty(0, 3);
    CHECK_THROWS_AS(select_outlier_channel(empty, 0), Error);
    CHECK_THROWS_AS(select_outlier_channel(even, 2), Error);
}

TEST_CASE("a strongly scaled row is always selected") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        MatF w = gaussian_matrix(seed, 32, 16);
        const Eigen::Index planted = static_cast<Eigen::Index>(seed % 32);
        w.row(planted) *= 100.0f;
        CHECK(select_outlier_channel(w, 0) == planted);
    }
}

TEST_CASE("naive split halves one channel") {
    MatF w(1, 2);
    w << 4, 2;
    const MatF out = split_channel_naive(w, 0);
    REQUIRE(out.rows() == 2);
    CHECK(out(0, 0) == 2.0f);
    CHECK(out(0, 1) == 1.0f);
    CHECK(out(1, 0) == 2.0f);
    CHECK(out(1, 1) == 1.0f);
    CHECK_THROWS_AS(split_channel_naive(w, 5), Error);
}

TEST_CASE("duplicated inputs against halved channels preserve the product") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const MatF w = gaussian_matrix(seed, 12, 9);
        const MatF x = gaussian_matrix(seed + 1000, 5, 12);
        const auto [split, map] = ocs_expand(w, 0.3, 8, SplitMode::naive);
        const MatF xe = expand_inputs(x, map);
        CHECK(rel_err(xe * split, x * w) < 1e-5);
    }
}

TEST_CASE("re-splitting a channel yields halves that sum back exactly") {
    MatF w = gaussian_matrix(3, 4, 6);
    MatF once = split_channel_naive(w, 1);
    MatF twice = split_channel_naive(once, 1);  // descendants stay splittable
    // rows 1, 4, 5 are the descendants of original row 1
    const MatF reassembled = twice.row(1) + twice.row(4) + twice.row(5);
    CHECK((reassembled.array() == w.row(1).array()).all());
}

TEST_CASE("grid-aware split offsets by a quarter step") {
    MatF w(1, 1);
    w << 1.0f;
    const MatF out = split_channel_qa(w, 0, 1.0f);
    CHECK(out(0, 0) == 0.25f);
    CHECK(out(1, 0) == 0.75f);
    CHECK(out.col(0).sum() == 1.0f);
    CHECK_THROWS_AS(split_channel_qa(w, 0, 0.0f), Error);
}

TEST_CASE("grid-aware halves sum to the original within an ulp of the peak") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        MatF w = gaussian_matrix(seed, 8, 32);
        const Eigen::Index idx = select_outlier_channel(w, 0);
        const float step = compute_step(w.cwiseAbs().maxCoeff(), 4);
        const MatF out = split_channel_qa(w, idx, step);
        const float tol =
            std::nextafter(w.cwiseAbs().maxCoeff(), 1e30f) - w.cwiseAbs().maxCoeff();
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            CHECK(std::abs(out(idx, c) + out(8, c) - w(idx, c)) <= tol);
    }
}

TEST_CASE("grid-aware splitting never rounds worse than naive") {
    // sweep one weight value across grid offsets; reconstruct through rounding
    const double step = 1.0;
    double worst_naive = 0.0, worst_qa = 0.0;
    for (int i = 0; i < 10'000; ++i) {
        const double w = 5.0 * i / 10'000.0;  // covers several grid cells
        const double naive =
            (std::round(w / 2 / step) + std::round(w / 2 / step)) * step;
        const double qa = (std::round((w / 2 - step / 4) / step) +
                           std::round((w / 2 + step / 4) / step)) *
                          step;
        worst_naive = std::max(worst_naive, std::abs(naive - w));
        worst_qa = std::max(worst_qa, std::abs(qa - w));
    }
    CHECK(worst_qa <= worst_naive);
    // odd grid multiples are the naive pathology: both halves round the same way
    const double w = 3.0 * step;
    CHECK(std::abs((std::round(w / 2 / step) * 2) * step - w) == doctest::Approx(step));
    const double qa = (std::round((w / 2 - step / 4) / step) +
                       std::round((w / 2 + step / 4) / step)) *
                      step;
    CHECK(std::abs(qa - w) == doctest::Approx(0.0));
}

TEST_CASE("split_count") {
    CHECK(split_count(0.0, 1000) == 0);
    CHECK(split_count(0.01, 100) == 1);
    CHECK(split_count(0.01, 256) == 3);   // ceil(2.56)
    CHECK(split_count(0.01, 300) == 3);   // exact product, no float creep
    CHECK(split_count(0.07, 100) == 7);   // 0.07 * 100 lands a hair above 7.0
    CHECK(split_count(0.01, 1600) == 16);
    CHECK_THROWS_AS(split_count(-0.1, 10), Error);
    CHECK_THROWS_AS(split_count(1.5, 10), Error);
}

TEST_CASE("ocs_expand") {
    SUBCASE("zero ratio is the identity") {
        const MatF w = gaussian_matrix(5, 6, 4);
        const auto [out, map] = ocs_expand(w, 0.0, 4, SplitMode::naive);
        CHECK(out == w);
        CHECK(map.events.empty());
        CHECK(map.final_channels == 6);
    }
    SUBCASE("default ratio adds one channel per hundred") {
        const MatF w = gaussian_matrix(6, 100, 8);
        const auto [out, map] = ocs_expand(w, 0.01, 4, SplitMode::naive);
        CHECK(out.rows() == 101);
        CHECK(map.final_channels == 101);
        CHECK(map.original_channels == 100);
        CHECK(map.events.size() == 1);
    }
    SUBCASE("single split halves the dominant peak and hence the step") {
        MatF w = gaussian_matrix(7, 100, 32);
        w.row(17) *= 10.0f;
        const float before = w.cwiseAbs().maxCoeff();
        const auto [out, map] = ocs_expand(w, 0.01, 4, SplitMode::naive);
        REQUIRE(map.events.size() == 1);
        CHECK(map.events[0].first == 17);
        const float after = out.cwiseAbs().maxCoeff();
        CHECK(after == doctest::Approx(before / 2).epsilon(1e-6));
        CHECK(compute_step(after, 4) == doctest::Approx(compute_step(before, 4) / 2).epsilon(1e-6));
    }
    SUBCASE("successive splits keep chasing the dominant channel") {
        MatF w = gaussian_matrix(8, 256, 32);
        w.row(40) *= 10.0f;
        const float before = w.cwiseAbs().maxCoeff();
        const auto [out, map] = ocs_expand(w, 0.01, 4, SplitMode::naive);
        CHECK(map.events.size() == 3);  // ceil(2.56)
        // three splits of one dominant channel quarter its descendants
        CHECK(out.cwiseAbs().maxCoeff() == doctest::Approx(before / 4).epsilon(1e-5));
    }
}

TEST_CASE("per-split peak halving of the strict-max channel") {
    MatF w = gaussian_matrix(13, 20, 10);
    w.row(3) *= 8.0f;
    const Eigen::Index idx = select_outlier_channel(w, 0);
    REQUIRE(idx == 3);
    const float peak = w.row(3).cwiseAbs().maxCoeff();
    const MatF out = split_channel_naive(w, 3);
    const float descendant_peak =
        std::max(out.row(3).cwiseAbs().maxCoeff(), out.row(20).cwiseAbs().maxCoeff());
    CHECK(descendant_peak == peak / 2);  // exact in binary float
}

TEST_CASE("quantize_ocs with zero ratio reduces to plain quantization") {
    const MatF w = gaussian_matrix(21, 24, 48);
    const TensorRecord t = record("w", w);
    const auto plain = quantize_lq(t, 5);
    for (SplitMode mode : {SplitMode::naive, SplitMode::qa}) {
        const auto split = quantize_ocs(t, 5, 0.0, mode);
        CHECK(split.codes == plain.codes);
        CHECK(split.params.step == plain.params.step);
        CHECK(split.split_map.has_value());
        CHECK(split.split_map->events.empty());
    }
}

TEST_CASE("quantize_ocs codes respect the grid on the expanded tensor") {
    MatF w = gaussian_matrix(31, 64, 32);
    w.row(5) *= 10.0f;
    const auto q = quantize_ocs(record("w", w), 3, 0.05, SplitMode::qa);
    CHECK(q.code_shape[0] == q.split_map->final_channels);
    for (auto c : q.codes) CHECK(std::abs(c) <= grid_max(3));
    const ArrF back = dequantize_values(q);
    for (Eigen::Index i = 0; i < back.size(); ++i)
        CHECK(back[i] == static_cast<float>(q.codes[i]) * q.params.step);
}

TEST_CASE("splitting beats plain quantization on planted outliers at 3 bits") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        MatF w = gaussian_matrix(seed + 500, 128, 64);
        w.row(seed % 128) *= 10.0f;
        const TensorRecord t = record("w", w);
        const double plain = mse(t, dequantize(quantize_lq(t, 3)));
        const double split = mse(t, fold(quantize_ocs(t, 3, 0.01, SplitMode::qa)));
        if (split <= plain) ++wins;
    }
    CHECK(wins >= 90);
}

TEST_CASE("fold inverts expansion exactly without quantization") {
    for (SplitMode mode : {SplitMode::naive, SplitMode::qa}) {
        const MatF w = gaussian_matrix(77, 40, 12);
        const auto [expanded, map] = ocs_expand(w, 0.1, 4, mode);
        const MatF back = fold_expanded(expanded, map);
        REQUIRE(back.rows() == w.rows());
        if (mode == SplitMode::naive) {
            CHECK((back.array() == w.array()).all());  // halves sum exactly
        } else {
            CHECK(rel_err(back, w) < 1e-6);
        }
    }
}

TEST_CASE("fold returns the original shape after quantization") {
    const MatF w = gaussian_matrix(92, 30, 10);
    const auto q = quantize_ocs(record("w", w), 4, 0.1, SplitMode::naive);
    const TensorRecord folded = fold(q);
    CHECK(folded.shape == std::vector<std::uint64_t>{30, 10});

    QuantizedTensor no_map = quantize_lq(record("w", w), 4);
    CHECK_THROWS_AS(fold(no_map), Error);
}

TEST_CASE("folding a zero-ratio split tensor is plain dequantization") {
    const MatF w = gaussian_matrix(93, 16, 16);
    const TensorRecord t = record("w", w);
    const auto q = quantize_ocs(t, 4, 0.0, SplitMode::naive);
    const TensorRecord folded = fold(q);
    const TensorRecord plain = dequantize(quantize_lq(t, 4));
    CHECK(folded.data == plain.data);
}

TEST_CASE("matmul against the folded tensor matches expanded inputs") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        MatF w = gaussian_matrix(seed, 16, 8);
        w.row(seed % 16) *= 6.0f;
        const MatF x = gaussian_matrix(seed + 1, 4, 16);
        const auto q = quantize_ocs(record("w", w), 4, 0.2, SplitMode::qa);
        const ArrF deq = dequantize_values(q);
        const Eigen::Map<const MatF> w_split(
            deq.data(), static_cast<Eigen::Index>(q.split_map->final_channels), 8);
        const MatF via_fold = x * fold(q).mat_f32();
        const MatF via_expand = expand_inputs(x, *q.split_map) * w_split;
        CHECK(rel_err(via_expand, via_fold) < 1e-5);
    }
}

TEST_CASE("expand_inputs") {
    const MatF x = gaussian_matrix(11, 3, 5);
    SplitMap empty;
    empty.original_channels = 5;
    empty.final_channels = 5;
    CHECK(expand_inputs(x, empty) == x);

    SplitMap one;
    one.original_channels = 5;
    one.final_channels = 6;
    one.events = {{2, 5}};
    const MatF out = expand_inputs(x, one);
    REQUIRE(out.cols() == 6);
    CHECK(out.col(5) == x.col(2));

    SplitMap wrong = one;
    wrong.original_channels = 4;
    wrong.final_channels = 5;
    CHECK_THROWS_AS(expand_inputs(x, wrong), Error);
}
