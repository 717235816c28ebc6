// Command-line surface: synthetic model generation, archive inspection,
// quantization, dequantization, archive comparison, cost accounting, and
// bit/method sweeps. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 internal error. Output files are written to a temporary sibling and
// renamed into place on success.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ptq/aciq.hpp"
#include "ptq/cost_model.hpp"
#include "ptq/harness.hpp"
#include "ptq/ocs.hpp"
#include "ptq/pipeline.hpp"
#include "ptq/quantizer.hpp"
#include "ptq/tensor_store.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path dir = path.parent_path();
    if (dir.empty()) dir = ".";
    std::random_device rd;
    const std::filesystem::path tmp =
        dir / (path.filename().string() + ".tmp." + std::to_string(rd()));
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out)
            throw ptq::Error(ptq::ErrorKind::io_error,
                             "cannot open '" + tmp.string() + "' for writing");
        out << text;
        if (!out)
            throw ptq::Error(ptq::ErrorKind::io_error, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw ptq::Error(ptq::ErrorKind::io_error,
                         "cannot move output into place at '" + path.string() + "'");
    }
}

std::vector<int> parse_bits_list(const std::string& text) {
    std::vector<int> bits;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (item.empty()) continue;
        bits.push_back(std::stoi(item));
    }
    if (bits.empty())
        throw CLI::ValidationError("--bits", "expected a comma-separated list of bit widths");
    return bits;
}

std::vector<ptq::Method> parse_methods(const std::string& text) {
    std::vector<ptq::Method> methods;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (item.empty()) continue;
        methods.push_back(ptq::method_from_name(item));
    }
    if (methods.empty())
        throw CLI::ValidationError("--methods", "expected a comma-separated list of methods");
    return methods;
}

ptq::SyntheticSpec resolve_spec(const std::string& preset, const std::string& spec_path) {
    if (!spec_path.empty()) return ptq::load_spec(spec_path);
    if (preset == "heavy_outlier") return ptq::heavy_outlier_spec();
    if (preset == "small" || preset.empty()) return ptq::small_demo_spec();
    throw ptq::Error(ptq::ErrorKind::invalid_argument,
                     "unknown preset '" + preset + "' (try small, heavy_outlier)");
}

int cmd_gen(const std::string& preset, const std::string& spec_path,
            const std::string& out_path, std::int64_t seed_override) {
    ptq::SyntheticSpec spec = resolve_spec(preset, spec_path);
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    ptq::save_archive(out_path, ptq::gen_synthetic_model(spec));
    std::cout << "wrote " << out_path << " (" << spec.layer_dims.size() << " layers, seed "
              << spec.seed << ")\n";
    return kExitOk;
}

int cmd_inspect(const std::string& path) {
    const ptq::Archive archive = ptq::load_archive(path);

    nlohmann::json meta;
    bool has_quant_meta = false;
    try {
        meta = nlohmann::json::parse(archive.metadata);
        has_quant_meta = meta.contains("tensors") && meta["tensors"].is_object();
    } catch (const nlohmann::json::exception&) {
    }

    std::printf("%-28s %-8s %-16s %12s %12s %12s\n", "name", "dtype", "shape", "min",
                "max", "sigma");
    for (const auto& t : archive.records) {
        std::string shape = "[";
        for (std::size_t i = 0; i < t.shape.size(); ++i)
            shape += (i ? "x" : "") + std::to_string(t.shape[i]);
        shape += "]";
        double lo = 0, hi = 0, sigma = 0;
        if (t.element_count() > 0) {
            if (t.dtype == ptq::DType::float32) {
                const auto v = t.f32();
                lo = v.minCoeff();
                hi = v.maxCoeff();
                sigma = t.element_count() > 1 ? ptq::estimate_sigma(ptq::ArrF(v)) : 0.0;
            } else if (t.dtype == ptq::DType::int8) {
                const auto v = t.i8();
                lo = v.minCoeff();
                hi = v.maxCoeff();
            }
        }
        std::printf("%-28s %-8s %-16s %12.5g %12.5g %12.5g\n", t.name.c_str(),
                    ptq::dtype_name(t.dtype), shape.c_str(), lo, hi, sigma);
        if (has_quant_meta) {
            const std::string base =
                t.name.size() > 6 && t.name.ends_with(".codes")
                    ? t.name.substr(0, t.name.size() - 6)
                    : t.name;
            if (meta["tensors"].contains(base)) {
                const auto& entry = meta["tensors"][base];
                std::printf("    quantized: method=%s bits=%d step=%g",
                            entry.value("method", std::string("?")).c_str(),
                            entry.value("bits", 0), entry.value("step", 0.0));
                if (entry.contains("clip_alpha"))
                    std::printf(" clip_alpha=%g", entry["clip_alpha"].get<double>());
                if (entry.contains("split"))
                    std::printf(" splits=%zu", entry["split"]["events"].size());
                std::printf("\n");
            }
        }
    }
    if (!archive.metadata.empty())
        std::printf("metadata: %zu bytes%s\n", archive.metadata.size(),
                    has_quant_meta ? " (quantization table present)" : "");
    return kExitOk;
}

int cmd_quantize(const std::string& in_path, const std::string& out_path,
                 const std::string& method, int bits, double ocs_ratio,
                 const std::vector<std::string>& skip, std::uint64_t min_elements,
                 const std::string& report_path) {
    ptq::QuantPolicy policy;
    policy.method = ptq::method_from_name(method);
    policy.bits = bits;
    policy.ocs_ratio = ocs_ratio;
    if (!skip.empty()) policy.skip_patterns = skip;
    policy.min_elements = min_elements;

    const ptq::Archive archive = ptq::load_archive(in_path);
    auto [quantized, report] = ptq::quantize_archive(archive, policy);
    ptq::save_archive(out_path, quantized);

    if (!report_path.empty()) {
        const bool csv = report_path.ends_with(".csv");
        write_text_file(report_path,
                        csv ? ptq::report_csv(report) : ptq::report_text(report));
    }

    double mean_mse = 0.0;
    std::uint64_t quantized_count = 0;
    for (const auto& e : report.entries)
        if (e.disposition == ptq::Disposition::quantized) {
            mean_mse += e.mse;
            ++quantized_count;
        }
    if (quantized_count) mean_mse /= static_cast<double>(quantized_count);
    std::cout << "quantized " << quantized_count << "/" << report.entries.size()
              << " tensors  mean_mse=" << mean_mse
              << "  ratio=" << report.quantization_ratio
              << "  size_reduction=" << report.size_reduction_factor << "x\n";
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    return kExitOk;
}

int cmd_dequant(const std::string& in_path, const std::string& out_path) {
    ptq::save_archive(out_path, ptq::dequantize_archive(ptq::load_archive(in_path)));
    std::cout << "wrote " << out_path << '\n';
    return kExitOk;
}

int cmd_compare(const std::string& a_path, const std::string& b_path,
                const std::string& out_path) {
    const ptq::CompareTable table =
        ptq::compare_archives(ptq::load_archive(a_path), ptq::load_archive(b_path));
    if (!out_path.empty()) write_text_file(out_path, ptq::compare_csv(table));
    std::printf("%-28s %14s %12s\n", "name", "mse", "sqnr_db");
    for (const auto& row : table.rows)
        std::printf("%-28s %14.6g %12.4g\n", row.name.c_str(), row.mse, row.sqnr_db);
    std::printf("mean mse: %.6g\n", table.mean_mse);
    return kExitOk;
}

int cmd_ace(const std::string& config, const std::string& manifest_path, int weight_bits,
            int act_bits, std::uint64_t seq_len, double ocs_ratio, bool include_attention,
            const std::string& csv_path) {
    const ptq::ModelManifest manifest = manifest_path.empty()
                                            ? ptq::gen_bert_manifest(config)
                                            : ptq::load_manifest(manifest_path);
    const auto bits_map = ptq::uniform_weight_bits(manifest, weight_bits, true);
    const std::uint64_t extra =
        include_attention ? ptq::attention_score_macs(manifest, seq_len) : 0;
    ptq::CostReport report = ptq::ace(manifest, bits_map, act_bits, seq_len, extra);
    const ptq::SizeBreakdown size = ptq::model_size(manifest, weight_bits, ocs_ratio);
    report.model_size_bits = size.total_bits();
    report.size_reduction_factor = size.reduction_factor;
    report.quantization_ratio = ptq::quantization_ratio(manifest);

    std::cout << "config:            " << (manifest.config_name.empty() ? "(file)" : manifest.config_name)
              << "\ntotal params:      " << manifest.total_params()
              << "\nmacs:              " << report.mac_total
              << "\nace:               " << report.ace_total
              << "\nmodel size (bits): " << std::fixed << report.model_size_bits
              << std::defaultfloat << "\nsize reduction:    " << report.size_reduction_factor
              << "x\nquantization ratio " << report.quantization_ratio << '\n';
    if (!csv_path.empty())
        write_text_file(csv_path, ptq::cost_report_csv_header() + "\n" +
                                      ptq::cost_report_csv_row(manifest.config_name,
                                                               weight_bits, report) +
                                      "\n");
    return kExitOk;
}

int cmd_sweep(const std::string& preset, const std::string& spec_path,
              const std::string& methods_arg, const std::string& bits_arg,
              std::uint64_t seeds, double ocs_ratio, const std::string& out_path,
              bool print_trend) {
    const ptq::SyntheticSpec spec = resolve_spec(preset, spec_path);
    const auto methods = parse_methods(methods_arg);
    const auto bits = parse_bits_list(bits_arg);
    const ptq::SweepResult result = ptq::method_sweep(spec, methods, bits, seeds, ocs_ratio);
    if (!out_path.empty()) write_text_file(out_path, ptq::sweep_csv(result));
    std::cout << "swept " << result.rows.size() << " cells ("
              << methods.size() << " methods x " << bits.size() << " bit widths x "
              << seeds << " seeds)\n";
    if (print_trend) std::cout << ptq::trend_text(ptq::trend_check(result));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"post-training weight quantization toolkit"};
    app.require_subcommand(1);

    // gen
    std::string gen_preset, gen_spec, gen_out;
    std::int64_t gen_seed = -1;
    auto* gen = app.add_subcommand("gen", "generate a synthetic model archive");
    gen->add_option("--preset", gen_preset, "spec preset: small, heavy_outlier");
    gen->add_option("--spec", gen_spec, "spec JSON file");
    gen->add_option("--out", gen_out, "output archive path")->required();
    gen->add_option("--seed", gen_seed, "seed override");

    // inspect
    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "list tensors in an archive");
    inspect->add_option("path", inspect_path, "archive path")->required();

    // quantize
    std::string q_in, q_out, q_method = "lq", q_report;
    int q_bits = 8;
    double q_ratio = 0.01;
    std::uint64_t q_min_elements = 1024;
    std::vector<std::string> q_skip;
    auto* quantize = app.add_subcommand("quantize", "quantize an archive");
    quantize->add_option("input", q_in, "input archive")->required();
    quantize->add_option("output", q_out, "output archive")->required();
    quantize->add_option("--method", q_method, "lq, aciq, ocs_naive, ocs_qa")
        ->check(CLI::IsMember({"lq", "aciq", "ocs_naive", "ocs_qa"}));
    quantize->add_option("--bits", q_bits, "bit width in [2, 8]")
        ->check(CLI::Range(2, 8));
    quantize->add_option("--ocs-ratio", q_ratio, "channel expansion ratio")
        ->check(CLI::Range(0.0, 1.0));
    quantize->add_option("--skip", q_skip, "glob patterns for tensors to skip");
    quantize->add_option("--min-elements", q_min_elements,
                         "minimum element count for quantization");
    quantize->add_option("--report", q_report, "report path (.csv or .txt)");

    // dequant
    std::string d_in, d_out;
    auto* dequant = app.add_subcommand("dequant", "reconstruct float tensors");
    dequant->add_option("input", d_in, "quantized archive")->required();
    dequant->add_option("output", d_out, "output archive")->required();

    // compare
    std::string c_a, c_b, c_out;
    auto* compare = app.add_subcommand("compare", "per-tensor error metrics");
    compare->add_option("a", c_a, "first archive")->required();
    compare->add_option("b", c_b, "second archive")->required();
    compare->add_option("--out", c_out, "CSV output path");

    // ace
    std::string a_config = "base", a_manifest, a_csv;
    int a_weight_bits = 32, a_act_bits = 32;
    std::uint64_t a_seq_len = 128;
    double a_ratio = 0.0;
    bool a_attention = false;
    auto* ace_cmd = app.add_subcommand("ace", "inference cost and size accounting");
    ace_cmd->add_option("--config", a_config,
                        "tiny, mini, small, medium, base, large");
    ace_cmd->add_option("--manifest", a_manifest, "manifest JSON file");
    ace_cmd->add_option("--weight-bits", a_weight_bits, "weight bit width (2-8 or 32)");
    ace_cmd->add_option("--act-bits", a_act_bits, "activation bit width")
        ->check(CLI::Range(1, 32));
    ace_cmd->add_option("--seq-len", a_seq_len, "sequence length");
    ace_cmd->add_option("--ocs-ratio", a_ratio, "size overhead ratio for split channels");
    ace_cmd->add_flag("--include-attention", a_attention,
                      "count activation-activation attention matmuls");
    ace_cmd->add_option("--csv", a_csv, "CSV output path");

    // sweep
    std::string s_preset, s_spec, s_methods = "lq,aciq,ocs_qa", s_bits = "8,6,4,3,2", s_out;
    std::uint64_t s_seeds = 10;
    double s_ratio = 0.01;
    bool s_trend = false;
    auto* sweep = app.add_subcommand("sweep", "method x bits x seed sweep");
    sweep->add_option("--preset", s_preset, "spec preset: small, heavy_outlier");
    sweep->add_option("--spec", s_spec, "spec JSON file");
    sweep->add_option("--methods", s_methods, "comma-separated methods");
    sweep->add_option("--bits", s_bits, "comma-separated bit widths (32 = control)");
    sweep->add_option("--seeds", s_seeds, "seed count");
    sweep->add_option("--ocs-ratio", s_ratio, "channel expansion ratio");
    sweep->add_option("--out", s_out, "CSV output path");
    sweep->add_flag("--trend", s_trend, "print low-bit ranking verdicts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_preset, gen_spec, gen_out, gen_seed);
        if (inspect->parsed()) return cmd_inspect(inspect_path);
        if (quantize->parsed())
            return cmd_quantize(q_in, q_out, q_method, q_bits, q_ratio, q_skip,
                                q_min_elements, q_report);
        if (dequant->parsed()) return cmd_dequant(d_in, d_out);
        if (compare->parsed()) return cmd_compare(c_a, c_b, c_out);
        if (ace_cmd->parsed())
            return cmd_ace(a_config, a_manifest, a_weight_bits, a_act_bits, a_seq_len,
                           a_ratio, a_attention, a_csv);
        if (sweep->parsed())
            return cmd_sweep(s_preset, s_spec, s_methods, s_bits, s_seeds, s_ratio,
                             s_out, s_trend);
    } catch (const ptq::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == ptq::ErrorKind::invalid_argument ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitUsage;
}
