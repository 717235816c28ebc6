#include "ptq/cost_model.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ptq {

using nlohmann::json;

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::matmul: return "matmul";
        case LayerKind::embedding: return "embedding";
        case LayerKind::other: return "other";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "matmul") return LayerKind::matmul;
    if (name == "embedding") return LayerKind::embedding;
    if (name == "other") return LayerKind::other;
    throw Error(ErrorKind::invalid_argument, "unknown layer kind '" + name + "'");
}

std::uint64_t ModelManifest::total_params() const {
    std::uint64_t total = 0;
    for (const auto& layer : layers) total += layer.param_count();
    return total;
}

void ModelManifest::validate() const {
    for (const auto& layer : layers) {
        if (layer.kind == LayerKind::matmul &&
            layer.weight_param_count != layer.in_dim * layer.out_dim)
            throw Error(ErrorKind::invalid_argument,
                        "layer '" + layer.name +
                            "': weight count does not equal in_dim * out_dim");
    }
}

CostReport ace(const ModelManifest& manifest,
               const std::map<std::string, int>& weight_bits, int act_bits,
               std::uint64_t seq_len, std::uint64_t extra_act_act_macs) {
    if (act_bits < 1 || act_bits > 32)
        throw Error(ErrorKind::invalid_argument, "activation bits outside [1, 32]");
    if (seq_len < 1)
        throw Error(ErrorKind::invalid_argument, "sequence length must be >= 1");
    manifest.validate();

    CostReport report;
    for (const auto& layer : manifest.layers) {
        if (layer.kind != LayerKind::matmul) continue;  // lookups have no multiplies
        int bits = 32;
        if (auto it = weight_bits.find(layer.name); it != weight_bits.end()) {
            bits = it->second;
            if (bits < 1 || bits > 32)
                throw Error(ErrorKind::invalid_argument,
                            "layer '" + layer.name + "': weight bits outside [1, 32]");
        } else if (layer.quantize_flag) {
            throw Error(ErrorKind::invalid_argument,
                        "no weight bits given for quantized layer '" + layer.name + "'");
        }
        const std::uint64_t macs = seq_len * layer.in_dim * layer.out_dim;
        report.mac_total += macs;
        report.ace_total += macs * static_cast<std::uint64_t>(bits) *
                            static_cast<std::uint64_t>(act_bits);
    }
    if (extra_act_act_macs) {
        report.mac_total += extra_act_act_macs;
        report.ace_total += extra_act_act_macs * static_cast<std::uint64_t>(act_bits) *
                            static_cast<std::uint64_t>(act_bits);
    }
    return report;
}

std::uint64_t attention_score_macs(const ModelManifest& manifest, std::uint64_t seq_len) {
    std::uint64_t macs = 0;
    for (const auto& layer : manifest.layers) {
        if (layer.kind != LayerKind::matmul) continue;
        if (layer.name.find("attention.query") == std::string::npos) continue;
        // scores (l x h by h x l) plus context (l x l by l x h)
        macs += 2 * seq_len * seq_len * layer.out_dim;
    }
    return macs;
}

std::map<std::string, int> uniform_weight_bits(const ModelManifest& manifest, int bits,
                                               bool quantized_only) {
    std::map<std::string, int> out;
    for (const auto& layer : manifest.layers) {
        if (layer.kind != LayerKind::matmul) continue;
        if (quantized_only && !layer.quantize_flag) continue;
        out[layer.name] = bits;
    }
    return out;
}

SizeBreakdown model_size(const ModelManifest& manifest, int bits, double ocs_ratio,
                         const std::set<std::string>& skip) {
    manifest.validate();
    if (bits != 32 && (bits < 2 || bits > 8))
        throw Error(ErrorKind::invalid_argument,
                    "bit width " + std::to_string(bits) + " outside [2, 8]");
    if (ocs_ratio < 0.0 || ocs_ratio > 1.0)
        throw Error(ErrorKind::invalid_argument, "expansion ratio outside [0, 1]");

    SizeBreakdown breakdown;
    for (const auto& layer : manifest.layers) {
        const bool quantized =
            bits != 32 && layer.quantize_flag && !skip.contains(layer.name);
        if (quantized) {
            breakdown.quantized_bits += static_cast<double>(layer.weight_param_count) *
                                        bits * (1.0 + ocs_ratio);
            breakdown.step_overhead_bits += 32.0;
            breakdown.passthrough_bits += static_cast<double>(layer.bias_param_count) * 32.0;
        } else {
            breakdown.passthrough_bits += static_cast<double>(layer.param_count()) * 32.0;
        }
    }
    const double baseline = static_cast<double>(manifest.total_params()) * 32.0;
    breakdown.reduction_factor =
        breakdown.total_bits() > 0.0 ? baseline / breakdown.total_bits() : 1.0;
    return breakdown;
}

double quantization_ratio(const ModelManifest& manifest,
                          const std::set<std::string>& skip) {
    manifest.validate();
    const std::uint64_t total = manifest.total_params();
    if (manifest.layers.empty() || total == 0)
        throw Error(ErrorKind::invalid_argument, "empty manifest");
    std::uint64_t quantized = 0;
    for (const auto& layer : manifest.layers)
        if (layer.quantize_flag && !skip.contains(layer.name))
            quantized += layer.weight_param_count;
    return static_cast<double>(quantized) / static_cast<double>(total);
}

namespace {

LayerSpec matmul_layer(std::string name, std::uint64_t in, std::uint64_t out,
                       bool quantize) {
    return {std::move(name), LayerKind::matmul, in, out, in * out, out, quantize};
}

LayerSpec embedding_layer(std::string name, std::uint64_t vocab, std::uint64_t hidden) {
    return {std::move(name), LayerKind::embedding, vocab, hidden, vocab * hidden, 0, true};
}

LayerSpec norm_layer(std::string name, std::uint64_t hidden) {
    // scale as weights, shift as bias, never quantized
    return {std::move(name), LayerKind::other, hidden, hidden, hidden, hidden, false};
}

}  // namespace

ModelManifest gen_bert_manifest(const std::string& config) {
    struct Dims {
        std::uint64_t layers;
        std::uint64_t hidden;
    };
    static const std::map<std::string, Dims> configs = {
        {"tiny", {2, 128}},  {"mini", {4, 256}},   {"small", {4, 512}},
        {"medium", {8, 512}}, {"base", {12, 768}}, {"large", {24, 1024}},
    };
    const auto it = configs.find(config);
    if (it == configs.end())
        throw Error(ErrorKind::invalid_argument, "unknown config '" + config + "'");
    const auto [num_layers, hidden] = it->second;
    const std::uint64_t vocab = 30522;
    const std::uint64_t max_positions = 512;
    const std::uint64_t segment_types = 2;
    const std::uint64_t ffn = 4 * hidden;
    const std::uint64_t num_labels = 2;

    ModelManifest manifest;
    manifest.config_name = config;
    manifest.layers.push_back(embedding_layer("embeddings.word", vocab, hidden));
    manifest.layers.push_back(embedding_layer("embeddings.position", max_positions, hidden));
    manifest.layers.push_back(embedding_layer("embeddings.token_type", segment_types, hidden));
    manifest.layers.push_back(norm_layer("embeddings.layernorm", hidden));
    for (std::uint64_t i = 0; i < num_layers; ++i) {
        const std::string prefix = "encoder.layer." + std::to_string(i) + ".";
        manifest.layers.push_back(matmul_layer(prefix + "attention.query", hidden, hidden, true));
        manifest.layers.push_back(matmul_layer(prefix + "attention.key", hidden, hidden, true));
        manifest.layers.push_back(matmul_layer(prefix + "attention.value", hidden, hidden, true));
        manifest.layers.push_back(matmul_layer(prefix + "attention.output", hidden, hidden, true));
        manifest.layers.push_back(norm_layer(prefix + "attention.layernorm", hidden));
        manifest.layers.push_back(matmul_layer(prefix + "ffn.intermediate", hidden, ffn, true));
        manifest.layers.push_back(matmul_layer(prefix + "ffn.output", ffn, hidden, true));
        manifest.layers.push_back(norm_layer(prefix + "output.layernorm", hidden));
    }
    manifest.layers.push_back(matmul_layer("pooler", hidden, hidden, true));
    // Task head placeholder; its dims depend on the downstream task and it is
    // never quantized, so it is carried as plain parameter mass.
    manifest.layers.push_back({"classifier", LayerKind::other, hidden, num_labels,
                               hidden * num_labels, num_labels, false});
    manifest.validate();
    return manifest;
}

ModelManifest manifest_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::bad_metadata, std::string("manifest parse error: ") + e.what());
    }
    try {
        ModelManifest manifest;
        manifest.config_name = doc.value("config_name", "");
        for (const auto& item : doc.at("layers")) {
            LayerSpec layer;
            layer.name = item.at("name").get<std::string>();
            layer.kind = layer_kind_from_name(item.at("kind").get<std::string>());
            layer.in_dim = item.at("in_dim").get<std::uint64_t>();
            layer.out_dim = item.at("out_dim").get<std::uint64_t>();
            layer.weight_param_count = item.value("weight_params", layer.in_dim * layer.out_dim);
            layer.bias_param_count = item.value("bias_params", std::uint64_t{0});
            layer.quantize_flag = item.at("quantize").get<bool>();
            manifest.layers.push_back(std::move(layer));
        }
        manifest.validate();
        return manifest;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::bad_metadata, std::string("manifest field error: ") + e.what());
    }
}

std::string manifest_to_json(const ModelManifest& manifest) {
    json layers = json::array();
    for (const auto& layer : manifest.layers) {
        layers.push_back({{"name", layer.name},
                          {"kind", layer_kind_name(layer.kind)},
                          {"in_dim", layer.in_dim},
                          {"out_dim", layer.out_dim},
                          {"weight_params", layer.weight_param_count},
                          {"bias_params", layer.bias_param_count},
                          {"quantize", layer.quantize_flag}});
    }
    const json doc = {{"config_name", manifest.config_name}, {"layers", layers}};
    return doc.dump(2) + "\n";
}

ModelManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io_error, "cannot open '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return manifest_from_json(buffer.str());
}

void save_manifest(const std::filesystem::path& path, const ModelManifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io_error, "cannot open '" + path.string() + "' for writing");
    out << manifest_to_json(manifest);
}

std::string cost_report_csv_header() { return "config,bits,size_bits,ace,ratio"; }

std::string cost_report_csv_row(const std::string& config, int bits,
                                const CostReport& report) {
    std::ostringstream row;
    row.precision(10);
    row << config << ',' << bits << ',' << report.model_size_bits << ','
        << report.ace_total << ',' << report.quantization_ratio;
    return row.str();
}

}  // namespace ptq
