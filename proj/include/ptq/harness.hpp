#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ptq/cost_model.hpp"
#include "ptq/pipeline.hpp"
#include "ptq/tensor_store.hpp"
#include "ptq/types.hpp"

namespace ptq {

// Linear stack of Gaussian weight matrices with a few channels scaled up to
// act as planted outliers. Consecutive layer dims must chain.
struct SyntheticSpec {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> layer_dims;  // (in, out)
    double weight_sigma = 0.05;
    std::uint64_t outlier_channels_per_layer = 1;
    double outlier_scale = 1.0;
    std::uint64_t seed = 1;
    std::uint64_t input_rows = 32;

    void validate() const;
};

// One wide layer with a strongly dominant planted channel; the rig used for
// cross-method ranking runs.
SyntheticSpec heavy_outlier_spec();

// Three modest layers (dims <= 512); quick end-to-end runs.
SyntheticSpec small_demo_spec();

// Planted channel indices for one layer; pure function of (spec, layer).
std::vector<std::uint64_t> planted_channels(const SyntheticSpec& spec,
                                            std::size_t layer_index);

// Weights drawn from N(0, sigma^2) per layer with decorrelated substreams,
// planted channels multiplied by outlier_scale. Byte-identical for equal
// specs. Records are named "layer<i>.weight".
Archive gen_synthetic_model(const SyntheticSpec& spec);

// The fixed evaluation batch for a spec: input_rows x in_dim(0), unit normal.
MatF gen_input_batch(const SyntheticSpec& spec);

// Alternating matmul and rectifier; identity after the last layer. Applies
// every rank-2 float32 record in archive order.
MatF forward(const Archive& weights, const MatF& x);

ModelManifest manifest_from_spec(const SyntheticSpec& spec);

struct SweepRow {
    Method method = Method::lq;
    int bits = 0;
    std::uint64_t seed = 0;
    double weight_mse = 0.0;      // mean over layers of per-tensor MSE
    double output_rel_err = 0.0;  // ||Y - Yq||_F / ||Y||_F on the fixed batch
    double size_bits = 0.0;
    std::uint64_t ace = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;  // ordered by (method, bits, seed)
    std::vector<Method> methods;
    std::vector<int> bits_list;
    std::uint64_t seed_count = 0;
};

// Full cross-product of (method, bits, seed). Seeds are spec.seed + i. Rows
// with bits == 32 are the unquantized control (exactly zero error). ocs_ratio
// feeds both the splitting passes and the analytic size column.
SweepResult method_sweep(const SyntheticSpec& spec, const std::vector<Method>& methods,
                         const std::vector<int>& bits_list, std::uint64_t seeds,
                         double ocs_ratio = 0.01, int max_threads = 0);

// Header: method,bits,seed,weight_mse,output_rel_err,size_bits,ace
std::string sweep_csv(const SweepResult& result);

struct TrendCell {
    Method method = Method::lq;
    int bits = 0;
    double mean_weight_mse = 0.0;
};

// Low-bit ranking verdicts over a sweep. (a) compares the three methods on
// the aggregate mean over the k <= 4 cells; (b) checks that plain linear
// quantization is strictly worst at every k <= 4 individually. Margins are
// always recorded; a sweep with no low-bit degradation anywhere is flagged
// vacuous instead of passing silently.
struct TrendVerdict {
    std::vector<TrendCell> cells;
    Method ocs_method = Method::ocs_qa;
    double pooled_lq = 0.0;
    double pooled_aciq = 0.0;
    double pooled_ocs = 0.0;
    bool ordering_ok = false;  // pooled ocs <= aciq <= lq
    bool lq_worst_per_k = false;
    bool vacuous = false;
    std::uint64_t seed_count = 0;
    std::vector<std::string> notes;
};

TrendVerdict trend_check(const SweepResult& result);
std::string trend_text(const TrendVerdict& verdict);

// Spec file format: UTF-8 JSON (layer_dims, weight_sigma,
// outlier_channels_per_layer, outlier_scale, seed, input_rows).
SyntheticSpec spec_from_json(const std::string& text);
std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec load_spec(const std::filesystem::path& path);
void save_spec(const std::filesystem::path& path, const SyntheticSpec& spec);

}  // namespace ptq
