#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ptq/tensor_store.hpp"
#include "ptq/types.hpp"

namespace ptq {

// Which tensors get quantized: float32, rank >= min_rank, at least
// min_elements elements, and not matching any skip pattern. Biases and norm
// parameters (rank 1) pass through untouched.
struct QuantPolicy {
    Method method = Method::lq;
    int bits = 8;
    double ocs_ratio = 0.01;
    std::vector<std::string> skip_patterns = {"*classifier*", "*cls*", "*head*"};
    std::uint64_t min_elements = 1024;
    int min_rank = 2;
};

enum class Disposition { quantized, skipped, ineligible };
const char* disposition_name(Disposition d);

struct ReportEntry {
    std::string name;
    Disposition disposition = Disposition::ineligible;
    Method method = Method::lq;
    int bits = 0;
    float step = 0.0f;
    std::optional<double> clip_alpha;
    std::optional<double> sigma;
    std::optional<std::uint64_t> split_count;
    double mse = 0.0;
    double sqnr_db = std::numeric_limits<double>::infinity();
    std::uint64_t element_count = 0;
};

struct Report {
    std::vector<ReportEntry> entries;  // one per input tensor, input order
    double quantization_ratio = 0.0;   // quantized elements / total elements
    double analytic_size_bits = 0.0;
    double size_reduction_factor = 1.0;
    std::vector<std::string> warnings;
};

// Applies the policy to every tensor. Quantized tensors are emitted as int8
// "<name>.codes" records plus a per-tensor metadata entry (method, bits, step,
// clip threshold, split map, original shape); everything else is copied
// verbatim. Output is a pure function of (archive bytes, policy). A failing
// tensor aborts the whole run with its name in the diagnostic.
std::pair<Archive, Report> quantize_archive(const Archive& archive,
                                            const QuantPolicy& policy,
                                            int max_threads = 0);

// Inverse pass driven by the archive metadata: codes become float32 tensors
// at the original shape (split tensors are folded); passthrough tensors are
// copied verbatim; the source metadata document is restored.
Archive dequantize_archive(const Archive& archive);

struct CompareRow {
    std::string name;
    double mse = 0.0;
    double sqnr_db = 0.0;
};

struct CompareTable {
    std::vector<CompareRow> rows;
    double mean_mse = 0.0;
    double mean_sqnr_db = 0.0;
};

// Per-tensor error metrics between two archives with identical inventories.
CompareTable compare_archives(const Archive& a, const Archive& b);

// '*' and '?' glob matching, anchored at both ends.
bool glob_match(std::string_view pattern, std::string_view text);

std::string report_csv(const Report& report);
std::string report_text(const Report& report);
std::string compare_csv(const CompareTable& table);

}  // namespace ptq
