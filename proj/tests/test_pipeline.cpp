#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ptq/ocs.hpp"
#include "ptq/pipeline.hpp"
#include "ptq/rng.hpp"

using namespace ptq;

namespace {

TensorRecord gaussian_record(const std::string& name, std::uint64_t rows,
                             std::uint64_t cols, std::uint64_t seed,
                             float sigma = 1.0f) {
    Rng rng(seed);
    ArrF x(static_cast<Eigen::Index>(rows * cols));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x[i] = sigma * static_cast<float>(rng.next_gaussian());
    return TensorRecord::from_f32(name, {rows, cols}, x);
}

Archive model_archive(std::uint64_t seed) {
    Archive a;
    a.records.push_back(gaussian_record("encoder.w1", 64, 64, seed));
    a.records.push_back(gaussian_record("encoder.w2", 64, 32, seed + 1));
    ArrF bias = ArrF::Zero(64);
    bias[3] = 0.5f;
    a.records.push_back(TensorRecord::from_f32("encoder.b1", {64}, bias));
    a.metadata = "origin: unit test";
    return a;
}

}  // namespace

TEST_CASE("glob_match") {
    CHECK(glob_match("*classifier*", "model.classifier.weight"));
    CHECK(glob_match("*.codes", "w.codes"));
    CHECK(glob_match("layer?", "layer1"));
    CHECK_FALSE(glob_match("layer?", "layer12"));
    CHECK_FALSE(glob_match("*cls*", "encoder.w1"));
    CHECK(glob_match("*", ""));
}

TEST_CASE("plain quantization of a gaussian tensor sits near the flat-noise floor") {
    Archive a;
    a.records.push_back(gaussian_record("w", 128, 128, 9));
    QuantPolicy policy;
    policy.method = Method::lq;
    policy.bits = 8;
    auto [out, report] = quantize_archive(a, policy);

    REQUIRE(report.entries.size() == 1);
    const ReportEntry& e = report.entries[0];
    CHECK(e.disposition == Disposition::quantized);
    const double floor = static_cast<double>(e.step) * e.step / 12.0;
    CHECK(e.mse == doctest::Approx(floor).epsilon(0.10));

    CHECK(out.records.size() == 1);
    CHECK(out.records[0].name == "w.codes");
    CHECK(out.records[0].dtype == DType::int8);
}

TEST_CASE("skip patterns leave tensors untouched") {
    Archive a;
    a.records.push_back(gaussian_record("model.classifier.weight", 64, 64, 3));
    QuantPolicy policy;
    policy.method = Method::lq;
    policy.bits = 4;
    auto [out, report] = quantize_archive(a, policy);
    CHECK(report.entries[0].disposition == Disposition::skipped);
    CHECK(report.quantization_ratio == 0.0);
    CHECK(out.records[0] == a.records[0]);  // bit-identical copy
}

TEST_CASE("eligibility: rank and element thresholds") {
    Archive a = model_archive(10);
    TensorRecord tiny = gaussian_record("tiny", 4, 4, 77);
    a.records.push_back(tiny);
    TensorRecord ints;
    ints.name = "steps";
    ints.dtype = DType::int32;
    ints.shape = {4};
    ints.data.resize(16);
    a.records.push_back(ints);

    QuantPolicy policy;
    policy.method = Method::lq;
    policy.bits = 8;
    auto [out, report] = quantize_archive(a, policy);

    const auto find = [&](const std::string& name) -> const ReportEntry& {
        for (const auto& e : report.entries)
            if (e.name == name) return e;
        throw std::runtime_error("missing entry " + name);
    };
    CHECK(find("encoder.w1").disposition == Disposition::quantized);
    CHECK(find("encoder.b1").disposition == Disposition::ineligible);  // rank 1
    CHECK(find("tiny").disposition == Disposition::ineligible);        // too small
    CHECK(find("steps").disposition == Disposition::ineligible);       // not float
    CHECK(out.get("encoder.b1") == a.get("encoder.b1"));
    CHECK(out.get("steps") == a.get("steps"));

    // every input tensor appears exactly once in the report
    CHECK(report.entries.size() == a.records.size());
    // aggregates recompute from the entries
    std::uint64_t total = 0, quantized = 0;
    for (const auto& e : report.entries) {
        total += e.element_count;
        if (e.disposition == Disposition::quantized) quantized += e.element_count;
    }
    CHECK(report.quantization_ratio ==
          doctest::Approx(double(quantized) / double(total)));
}

TEST_CASE("quantize twice gives byte-identical output") {
    const Archive a = model_archive(20);
    QuantPolicy policy;
    policy.method = Method::ocs_qa;
    policy.bits = 3;
    auto [out1, report1] = quantize_archive(a, policy);
    auto [out2, report2] = quantize_archive(a, policy);
    CHECK(write_archive(out1) == write_archive(out2));
}

TEST_CASE("dequantize restores shapes and matches report errors") {
    const Archive a = model_archive(30);
    for (Method method : {Method::lq, Method::aciq, Method::ocs_naive, Method::ocs_qa}) {
        QuantPolicy policy;
        policy.method = method;
        policy.bits = 4;
        auto [quantized, report] = quantize_archive(a, policy);
        const Archive restored = dequantize_archive(quantized);

        REQUIRE(restored.records.size() == a.records.size());
        for (std::size_t i = 0; i < a.records.size(); ++i) {
            CHECK(restored.records[i].name == a.records[i].name);
            CHECK(restored.records[i].shape == a.records[i].shape);
        }
        CHECK(restored.metadata == a.metadata);  // source document round-trips

        for (const auto& e : report.entries) {
            if (e.disposition != Disposition::quantized) {
                CHECK(restored.get(e.name) == a.get(e.name));
                continue;
            }
            CHECK(mse(a.get(e.name), restored.get(e.name)) == doctest::Approx(e.mse));
        }
    }
}

TEST_CASE("second quantize round trip is a fixed point for plain quantization") {
    const Archive a = model_archive(40);
    QuantPolicy policy;
    policy.method = Method::lq;
    policy.bits = 5;
    auto [q1, r1] = quantize_archive(a, policy);
    const Archive d1 = dequantize_archive(q1);
    auto [q2, r2] = quantize_archive(d1, policy);
    const Archive d2 = dequantize_archive(q2);
    CHECK(write_archive(q1) == write_archive(q2));
    CHECK(write_archive(d1) == write_archive(d2));
}

TEST_CASE("constant tensor under clipping records a warning") {
    Archive a;
    ArrF flat = ArrF::Constant(64 * 64, 2.0f);
    a.records.push_back(TensorRecord::from_f32("flat", {64, 64}, flat));
    QuantPolicy policy;
    policy.method = Method::aciq;
    policy.bits = 4;
    auto [out, report] = quantize_archive(a, policy);
    REQUIRE(report.warnings.size() == 1);
    CHECK(report.warnings[0].find("flat") != std::string::npos);
    CHECK(report.entries[0].method == Method::lq);  // fallback path
}

TEST_CASE("a failing tensor aborts the run with its name") {
    Archive a = model_archive(50);
    ArrF poisoned(64 * 64);
    poisoned.setZero();
    poisoned[100] = std::numeric_limits<float>::quiet_NaN();
    a.records.push_back(TensorRecord::from_f32("poisoned", {64, 64}, poisoned));
    QuantPolicy policy;
    policy.method = Method::lq;
    policy.bits = 8;
    try {
        quantize_archive(a, policy);
        FAIL("expected non_finite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::non_finite);
        CHECK(std::string(e.what()).find("poisoned") != std::string::npos);
    }
}

TEST_CASE("dequantize validates its metadata") {
    Archive bogus;
    bogus.metadata = "not json";
    CHECK_THROWS_AS(dequantize_archive(bogus), Error);

    const Archive a = model_archive(60);
    QuantPolicy policy;
    auto [quantized, report] = quantize_archive(a, policy);
    // drop one codes record: table and records disagree
    Archive truncated = quantized;
    truncated.records.erase(truncated.records.begin());
    try {
        dequantize_archive(truncated);
        FAIL("expected bad_metadata");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::bad_metadata);
    }
}

TEST_CASE("compare_archives") {
    const Archive a = model_archive(70);
    const CompareTable self = compare_archives(a, a);
    for (const auto& row : self.rows) {
        CHECK(row.mse == 0.0);
        CHECK(std::isinf(row.sqnr_db));
    }
    CHECK(self.mean_mse == 0.0);

    SUBCASE("coarser grids lose more, per tensor") {
        QuantPolicy p8;
        p8.bits = 8;
        QuantPolicy p4;
        p4.bits = 4;
        const Archive d8 = dequantize_archive(quantize_archive(a, p8).first);
        const Archive d4 = dequantize_archive(quantize_archive(a, p4).first);
        const CompareTable t8 = compare_archives(a, d8);
        const CompareTable t4 = compare_archives(a, d4);
        REQUIRE(t8.rows.size() == t4.rows.size());
        for (std::size_t i = 0; i < t8.rows.size(); ++i)
            CHECK(t4.rows[i].mse >= t8.rows[i].mse);
        CHECK(t4.mean_mse >= t8.mean_mse);
    }

    SUBCASE("shape mismatch names the tensor") {
        Archive b = a;
        b.records[1] = gaussian_record("encoder.w2", 32, 32, 999);
        try {
            compare_archives(a, b);
            FAIL("expected shape_mismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::shape_mismatch);
            CHECK(std::string(e.what()).find("encoder.w2") != std::string::npos);
        }
    }

    SUBCASE("missing tensor names the tensor") {
        Archive b = a;
        b.records[0].name = "renamed";
        CHECK_THROWS_AS(compare_archives(a, b), Error);
    }
}

TEST_CASE("worker cap from the environment leaves results unchanged") {
    const Archive a = model_archive(90);
    QuantPolicy policy;
    policy.method = Method::aciq;
    policy.bits = 6;
    auto [serial, r1] = quantize_archive(a, policy, 1);
    setenv("PTQ_THREADS", "2", 1);
    auto [capped, r2] = quantize_archive(a, policy, 0);
    unsetenv("PTQ_THREADS");
    auto [wide, r3] = quantize_archive(a, policy, 0);
    CHECK(write_archive(serial) == write_archive(capped));
    CHECK(write_archive(serial) == write_archive(wide));
}

TEST_CASE("report serialization") {
    const Archive a = model_archive(80);
    QuantPolicy policy;
    policy.method = Method::ocs_qa;
    policy.bits = 3;
    auto [out, report] = quantize_archive(a, policy);
    const std::string csv = report_csv(report);
    CHECK(csv.find("name,disposition,method,bits,step") == 0);
    CHECK(csv.find("encoder.w1,quantized,ocs_qa,3,") != std::string::npos);
    const std::string text = report_text(report);
    CHECK(text.find("quantization_ratio") != std::string::npos);
}
