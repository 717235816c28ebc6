#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ptq/types.hpp"

namespace ptq {

enum class LayerKind { matmul, embedding, other };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::matmul;
    std::uint64_t in_dim = 0;
    std::uint64_t out_dim = 0;
    std::uint64_t weight_param_count = 0;
    std::uint64_t bias_param_count = 0;
    bool quantize_flag = false;

    std::uint64_t param_count() const { return weight_param_count + bias_param_count; }
};

struct ModelManifest {
    std::string config_name;
    std::vector<LayerSpec> layers;

    std::uint64_t total_params() const;
    // matmul layers must satisfy weight_param_count == in_dim * out_dim.
    void validate() const;
};

struct CostReport {
    std::uint64_t ace_total = 0;
    std::uint64_t mac_total = 0;
    double model_size_bits = 0.0;
    double size_reduction_factor = 1.0;
    double quantization_ratio = 0.0;
};

// MAC-weighted bit product: every matmul layer contributes
// seq_len * in_dim * out_dim MACs at (weight bits, act_bits); embedding and
// other kinds contribute none. weight_bits maps layer name -> bits; a matmul
// absent from the map runs at 32 unless it is flagged for quantization, in
// which case the missing entry is an error. extra_act_act_macs, when nonzero,
// adds that many MACs at act_bits x act_bits (activation-activation products
// such as attention score matmuls, excluded by default).
CostReport ace(const ModelManifest& manifest,
               const std::map<std::string, int>& weight_bits, int act_bits,
               std::uint64_t seq_len, std::uint64_t extra_act_act_macs = 0);

// Per-encoder-layer score and context MAC count (2 * l * l * h per attention
// block), for feeding the extra_act_act_macs hook above.
std::uint64_t attention_score_macs(const ModelManifest& manifest, std::uint64_t seq_len);

std::map<std::string, int> uniform_weight_bits(const ModelManifest& manifest, int bits,
                                               bool quantized_only);

// Analytic representational size. Quantized weights cost bits * (1 + ocs_ratio)
// bits each plus one 32-bit step per tensor; skipped layers, biases and
// anything unquantizable stay at 32 bits. bits == 32 is the unquantized
// baseline (no step overhead, no expansion).
struct SizeBreakdown {
    double quantized_bits = 0.0;
    double passthrough_bits = 0.0;
    double step_overhead_bits = 0.0;
    double total_bits() const { return quantized_bits + passthrough_bits + step_overhead_bits; }
    double reduction_factor = 1.0;  // vs the 32-bit baseline
};

SizeBreakdown model_size(const ModelManifest& manifest, int bits, double ocs_ratio,
                         const std::set<std::string>& skip = {});

// Quantize-flagged weight parameters divided by total parameters.
double quantization_ratio(const ModelManifest& manifest,
                          const std::set<std::string>& skip = {});

// Standard configurations: tiny (2, 128), mini (4, 256), small (4, 512),
// medium (8, 512), base (12, 768), large (24, 1024). Emits the embedding
// tables, per-encoder-layer projections and feed-forward matmuls, layer
// norms, the pooler, and an unquantized classifier placeholder.
ModelManifest gen_bert_manifest(const std::string& config);

// Manifest file format: UTF-8 JSON document with config_name and the layer
// list (name, kind, in_dim, out_dim, weight_params, bias_params, quantize).
ModelManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const ModelManifest& manifest);
ModelManifest manifest_from_json(const std::string& text);
std::string manifest_to_json(const ModelManifest& manifest);

// CSV row: config,bits,size_bits,ace,ratio
std::string cost_report_csv_header();
std::string cost_report_csv_row(const std::string& config, int bits, const CostReport& report);

}  // namespace ptq
