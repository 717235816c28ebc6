#include "ptq/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ptq/parallel.hpp"
#include "ptq/quantizer.hpp"
#include "ptq/rng.hpp"

namespace ptq {

using nlohmann::json;

namespace {
constexpr std::uint64_t kPlantedStream = 0x504c414e54ull;  // channel picker
constexpr std::uint64_t kInputStream = 0x494e505554ull;    // evaluation batch
}  // namespace

void SyntheticSpec::validate() const {
    if (layer_dims.empty())
        throw Error(ErrorKind::invalid_argument, "spec has no layers");
    if (input_rows < 1)
        throw Error(ErrorKind::invalid_argument, "input_rows must be >= 1");
    if (!(weight_sigma > 0.0))
        throw Error(ErrorKind::invalid_argument, "weight_sigma must be positive");
    for (std::size_t i = 0; i < layer_dims.size(); ++i) {
        const auto [in, out] = layer_dims[i];
        if (in == 0 || out == 0)
            throw Error(ErrorKind::invalid_argument,
                        "layer " + std::to_string(i) + " has a zero dimension");
        if (outlier_channels_per_layer > in)
            throw Error(ErrorKind::invalid_argument,
                        "layer " + std::to_string(i) + ": more planted channels than rows");
        if (i + 1 < layer_dims.size() && out != layer_dims[i + 1].first)
            throw Error(ErrorKind::invalid_argument,
                        "layer dims do not chain at layer " + std::to_string(i));
    }
}

SyntheticSpec heavy_outlier_spec() {
    SyntheticSpec spec;
    spec.layer_dims = {{1600, 1600}};
    spec.weight_sigma = 0.05;
    spec.outlier_channels_per_layer = 1;
    spec.outlier_scale = 40.0;
    spec.seed = 0x0c51600d;
    spec.input_rows = 32;
    return spec;
}

SyntheticSpec small_demo_spec() {
    SyntheticSpec spec;
    spec.layer_dims = {{512, 512}, {512, 256}, {256, 128}};
    spec.weight_sigma = 0.05;
    spec.outlier_channels_per_layer = 1;
    spec.outlier_scale = 10.0;
    spec.seed = 0xd0d0;
    spec.input_rows = 32;
    return spec;
}

std::vector<std::uint64_t> planted_channels(const SyntheticSpec& spec,
                                            std::size_t layer_index) {
    const std::uint64_t rows = spec.layer_dims.at(layer_index).first;
    Rng rng(mix_seed(mix_seed(spec.seed, kPlantedStream), layer_index));
    std::vector<std::uint64_t> picks;
    while (picks.size() < spec.outlier_channels_per_layer) {
        const std::uint64_t c = rng.next_below(rows);
        if (std::find(picks.begin(), picks.end(), c) == picks.end()) picks.push_back(c);
    }
    return picks;
}

Archive gen_synthetic_model(const SyntheticSpec& spec) {
    spec.validate();
    Archive archive;
    json planted_meta = json::object();

    for (std::size_t layer = 0; layer < spec.layer_dims.size(); ++layer) {
        const auto [rows, cols] = spec.layer_dims[layer];
        MatF w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        Rng rng(mix_seed(spec.seed, layer + 1));
        const float sigma = static_cast<float>(spec.weight_sigma);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = sigma * static_cast<float>(rng.next_gaussian());

        const std::vector<std::uint64_t> planted = planted_channels(spec, layer);
        for (std::uint64_t c : planted)
            w.row(static_cast<Eigen::Index>(c)) *= static_cast<float>(spec.outlier_scale);

        const std::string name = "layer" + std::to_string(layer) + ".weight";
        planted_meta[name] = planted;
        archive.records.push_back(TensorRecord::from_f32(name, w));
    }

    const json meta = {{"synthetic",
                        {{"layer_dims", spec.layer_dims},
                         {"weight_sigma", spec.weight_sigma},
                         {"outlier_channels_per_layer", spec.outlier_channels_per_layer},
                         {"outlier_scale", spec.outlier_scale},
                         {"seed", spec.seed},
                         {"input_rows", spec.input_rows},
                         {"planted", std::move(planted_meta)}}}};
    archive.metadata = meta.dump();
    return archive;
}

MatF gen_input_batch(const SyntheticSpec& spec) {
    spec.validate();
    MatF x(static_cast<Eigen::Index>(spec.input_rows),
           static_cast<Eigen::Index>(spec.layer_dims.front().first));
    Rng rng(mix_seed(spec.seed, kInputStream));
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = static_cast<float>(rng.next_gaussian());
    return x;
}

MatF forward(const Archive& weights, const MatF& x) {
    std::vector<const TensorRecord*> layers;
    for (const auto& record : weights.records)
        if (record.dtype == DType::float32 && record.shape.size() == 2)
            layers.push_back(&record);
    if (layers.empty())
        throw Error(ErrorKind::invalid_argument, "archive holds no rank-2 float32 layers");

    MatF y = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto w = layers[i]->mat_f32();
        if (y.cols() != w.rows())
            throw Error(ErrorKind::shape_mismatch,
                        "layer '" + layers[i]->name + "' expects " +
                            std::to_string(w.rows()) + " inputs, got " +
                            std::to_string(y.cols()));
        y = y * w;
        if (i + 1 < layers.size()) y = y.cwiseMax(0.0f);  // rectifier between layers
    }
    return y;
}

ModelManifest manifest_from_spec(const SyntheticSpec& spec) {
    spec.validate();
    ModelManifest manifest;
    manifest.config_name = "synthetic";
    for (std::size_t i = 0; i < spec.layer_dims.size(); ++i) {
        const auto [in, out] = spec.layer_dims[i];
        manifest.layers.push_back({"layer" + std::to_string(i) + ".weight",
                                   LayerKind::matmul, in, out, in * out, 0, true});
    }
    return manifest;
}

SweepResult method_sweep(const SyntheticSpec& spec, const std::vector<Method>& methods,
                         const std::vector<int>& bits_list, std::uint64_t seeds,
                         double ocs_ratio, int max_threads) {
    spec.validate();
    if (methods.empty() || bits_list.empty() || seeds == 0)
        throw Error(ErrorKind::invalid_argument, "sweep needs methods, bit widths and seeds");
    for (int bits : bits_list)
        if (bits != 32) grid_max(bits);

    SweepResult result;
    result.methods = methods;
    result.bits_list = bits_list;
    result.seed_count = seeds;
    result.rows.resize(methods.size() * bits_list.size() * seeds);

    const ModelManifest manifest = manifest_from_spec(spec);

    parallel_for(
        seeds,
        [&](std::size_t seed_index) {
            SyntheticSpec seeded = spec;
            seeded.seed = spec.seed + seed_index;
            const Archive model = gen_synthetic_model(seeded);
            const MatF x = gen_input_batch(seeded);
            const MatF y = forward(model, x);
            const double y_norm = y.cast<double>().matrix().norm();

            for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                for (std::size_t bi = 0; bi < bits_list.size(); ++bi) {
                    const int bits = bits_list[bi];
                    SweepRow row;
                    row.method = methods[mi];
                    row.bits = bits;
                    row.seed = seeded.seed;

                    const bool is_ocs = methods[mi] == Method::ocs_naive ||
                                        methods[mi] == Method::ocs_qa;
                    if (bits == 32) {
                        // unquantized control
                        row.weight_mse = 0.0;
                        row.output_rel_err = 0.0;
                        row.size_bits = model_size(manifest, 32, 0.0).total_bits();
                        row.ace = ace(manifest, uniform_weight_bits(manifest, 32, true),
                                      32, spec.input_rows)
                                      .ace_total;
                    } else {
                        QuantPolicy policy;
                        policy.method = methods[mi];
                        policy.bits = bits;
                        policy.ocs_ratio = ocs_ratio;
                        policy.skip_patterns.clear();
                        policy.min_elements = 1;
                        auto [qarchive, report] = quantize_archive(model, policy, 1);
                        double sum = 0.0;
                        std::uint64_t count = 0;
                        for (const auto& entry : report.entries)
                            if (entry.disposition == Disposition::quantized) {
                                sum += entry.mse;
                                ++count;
                            }
                        row.weight_mse = count ? sum / static_cast<double>(count) : 0.0;

                        const Archive restored = dequantize_archive(qarchive);
                        const MatF yq = forward(restored, x);
                        const double err = (yq - y).cast<double>().matrix().norm();
                        row.output_rel_err = y_norm > 0.0 ? err / y_norm : 0.0;
                        row.size_bits =
                            model_size(manifest, bits, is_ocs ? ocs_ratio : 0.0).total_bits();
                        row.ace = ace(manifest, uniform_weight_bits(manifest, bits, true),
                                      32, spec.input_rows)
                                      .ace_total;
                    }
                    result.rows[(mi * bits_list.size() + bi) * seeds + seed_index] = row;
                }
            }
        },
        max_threads);

    return result;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "method,bits,seed,weight_mse,output_rel_err,size_bits,ace\n";
    out.precision(12);
    for (const auto& row : result.rows)
        out << method_name(row.method) << ',' << row.bits << ',' << row.seed << ','
            << row.weight_mse << ',' << row.output_rel_err << ',' << row.size_bits
            << ',' << row.ace << '\n';
    return out.str();
}

TrendVerdict trend_check(const SweepResult& result) {
    TrendVerdict verdict;
    verdict.seed_count = result.seed_count;

    // mean weight-MSE per (method, bits <= 4)
    struct Key {
        Method method;
        int bits;
        bool operator<(const Key& o) const {
            return method != o.method ? method < o.method : bits < o.bits;
        }
    };
    std::map<Key, std::pair<double, std::uint64_t>> cells;
    bool any_low_bit = false;
    bool any_degradation = false;
    for (const auto& row : result.rows) {
        if (row.weight_mse > 0.0) any_degradation = true;
        if (row.bits > 4) continue;
        any_low_bit = true;
        auto& [sum, count] = cells[{row.method, row.bits}];
        sum += row.weight_mse;
        ++count;
    }

    if (!any_low_bit || !any_degradation) {
        verdict.vacuous = true;
        verdict.ordering_ok = true;
        verdict.lq_worst_per_k = false;
        verdict.notes.push_back(
            "no low-bit degradation observed; verdicts are vacuous");
        return verdict;
    }

    const bool has_qa = std::find(result.methods.begin(), result.methods.end(),
                                  Method::ocs_qa) != result.methods.end();
    const bool has_naive = std::find(result.methods.begin(), result.methods.end(),
                                     Method::ocs_naive) != result.methods.end();
    if (!has_qa && !has_naive)
        throw Error(ErrorKind::invalid_argument,
                    "insufficient coverage: no channel-splitting method in sweep");
    verdict.ocs_method = has_qa ? Method::ocs_qa : Method::ocs_naive;

    const int required_bits[] = {2, 3, 4};
    const Method required_methods[] = {Method::lq, Method::aciq, verdict.ocs_method};
    for (Method m : required_methods)
        for (int k : required_bits)
            if (!cells.contains({m, k}))
                throw Error(ErrorKind::invalid_argument,
                            std::string("insufficient coverage: missing ") +
                                method_name(m) + " at " + std::to_string(k) + " bits");

    auto cell_mean = [&](Method m, int k) {
        const auto& [sum, count] = cells.at({m, k});
        return sum / static_cast<double>(count);
    };

    verdict.lq_worst_per_k = true;
    double pooled[3] = {0.0, 0.0, 0.0};
    std::ostringstream notes;
    notes.precision(6);
    for (int k : required_bits) {
        const double lq = cell_mean(Method::lq, k);
        const double aciq = cell_mean(Method::aciq, k);
        const double ocs = cell_mean(verdict.ocs_method, k);
        pooled[0] += lq / 3.0;
        pooled[1] += aciq / 3.0;
        pooled[2] += ocs / 3.0;
        verdict.cells.push_back({Method::lq, k, lq});
        verdict.cells.push_back({Method::aciq, k, aciq});
        verdict.cells.push_back({verdict.ocs_method, k, ocs});
        const bool lq_worst = lq > aciq && lq > ocs;
        verdict.lq_worst_per_k = verdict.lq_worst_per_k && lq_worst;
        notes.str("");
        notes << "k=" << k << ": lq=" << lq << " aciq=" << aciq << " "
              << method_name(verdict.ocs_method) << "=" << ocs << " (lq worst: "
              << (lq_worst ? "yes" : "NO") << ", margin over runner-up "
              << (lq / std::max(std::max(aciq, ocs), 1e-300) - 1.0) * 100.0 << "%)";
        verdict.notes.push_back(notes.str());
    }
    verdict.pooled_lq = pooled[0];
    verdict.pooled_aciq = pooled[1];
    verdict.pooled_ocs = pooled[2];
    verdict.ordering_ok =
        verdict.pooled_ocs <= verdict.pooled_aciq && verdict.pooled_aciq <= verdict.pooled_lq;

    notes.str("");
    notes << "pooled k<=4 means: " << method_name(verdict.ocs_method) << "="
          << verdict.pooled_ocs << " aciq=" << verdict.pooled_aciq
          << " lq=" << verdict.pooled_lq << " over " << verdict.seed_count
          << " seeds (ordering ocs<=aciq<=lq: " << (verdict.ordering_ok ? "yes" : "NO")
          << ")";
    verdict.notes.push_back(notes.str());
    return verdict;
}

std::string trend_text(const TrendVerdict& verdict) {
    std::ostringstream out;
    out << "trend verdicts over " << verdict.seed_count << " seeds\n";
    if (verdict.vacuous) out << "  VACUOUS: no degradation to rank\n";
    for (const auto& note : verdict.notes) out << "  " << note << '\n';
    out << "  (a) aggregate low-bit ordering ocs <= aciq <= lq: "
        << (verdict.ordering_ok ? "holds" : "violated") << '\n';
    out << "  (b) lq strictly worst at every k <= 4: "
        << (verdict.lq_worst_per_k ? "holds" : "violated") << '\n';
    return out.str();
}

SyntheticSpec spec_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::bad_metadata, std::string("spec parse error: ") + e.what());
    }
    try {
        SyntheticSpec spec;
        for (const auto& dims : doc.at("layer_dims"))
            spec.layer_dims.emplace_back(dims.at(0).get<std::uint64_t>(),
                                         dims.at(1).get<std::uint64_t>());
        spec.weight_sigma = doc.value("weight_sigma", spec.weight_sigma);
        spec.outlier_channels_per_layer =
            doc.value("outlier_channels_per_layer", spec.outlier_channels_per_layer);
        spec.outlier_scale = doc.value("outlier_scale", spec.outlier_scale);
        spec.seed = doc.value("seed", spec.seed);
        spec.input_rows = doc.value("input_rows", spec.input_rows);
        spec.validate();
        return spec;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::bad_metadata, std::string("spec field error: ") + e.what());
    }
}

std::string spec_to_json(const SyntheticSpec& spec) {
    const json doc = {{"layer_dims", spec.layer_dims},
                      {"weight_sigma", spec.weight_sigma},
                      {"outlier_channels_per_layer", spec.outlier_channels_per_layer},
                      {"outlier_scale", spec.outlier_scale},
                      {"seed", spec.seed},
                      {"input_rows", spec.input_rows}};
    return doc.dump(2) + "\n";
}

SyntheticSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io_error, "cannot open '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return spec_from_json(buffer.str());
}

void save_spec(const std::filesystem::path& path, const SyntheticSpec& spec) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::io_error, "cannot open '" + path.string() + "' for writing");
    out << spec_to_json(spec);
}

}  // namespace ptq
