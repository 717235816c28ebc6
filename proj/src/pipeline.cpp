#include "ptq/pipeline.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "ptq/aciq.hpp"
#include "ptq/ocs.hpp"
#include "ptq/parallel.hpp"
#include "ptq/quantizer.hpp"

namespace ptq {

using nlohmann::json;

namespace {

constexpr const char* kCodesSuffix = ".codes";

bool ends_with(std::string_view text, std::string_view suffix) {
    return text.size() >= suffix.size() &&
           text.substr(text.size() - suffix.size()) == suffix;
}

Disposition classify(const TensorRecord& t, const QuantPolicy& policy) {
    for (const auto& pattern : policy.skip_patterns)
        if (glob_match(pattern, t.name)) return Disposition::skipped;
    if (t.dtype != DType::float32) return Disposition::ineligible;
    if (t.shape.size() < static_cast<std::size_t>(policy.min_rank))
        return Disposition::ineligible;
    if (t.element_count() < policy.min_elements) return Disposition::ineligible;
    return Disposition::quantized;
}

json split_map_to_json(const SplitMap& map) {
    json events = json::array();
    for (const auto& [src, appended] : map.events)
        events.push_back({src, appended});
    return {{"axis", map.axis},
            {"mode", map.mode == SplitMode::qa ? "qa" : "naive"},
            {"original_channels", map.original_channels},
            {"final_channels", map.final_channels},
            {"events", std::move(events)}};
}

SplitMap split_map_from_json(const json& doc) {
    SplitMap map;
    map.axis = doc.at("axis").get<int>();
    map.mode = doc.at("mode").get<std::string>() == "qa" ? SplitMode::qa : SplitMode::naive;
    map.original_channels = doc.at("original_channels").get<std::uint64_t>();
    map.final_channels = doc.at("final_channels").get<std::uint64_t>();
    for (const auto& event : doc.at("events"))
        map.events.emplace_back(event.at(0).get<std::uint64_t>(),
                                event.at(1).get<std::uint64_t>());
    return map;
}

struct TensorResult {
    TensorRecord out;
    ReportEntry entry;
    json meta;  // null when passthrough
    std::uint64_t code_count = 0;
    std::string warning;
};

TensorResult process_tensor(const TensorRecord& t, const QuantPolicy& policy) {
    TensorResult result;
    result.entry.name = t.name;
    result.entry.element_count = t.element_count();
    result.entry.disposition = classify(t, policy);
    result.meta = json();

    if (result.entry.disposition != Disposition::quantized) {
        result.out = t;
        return result;
    }

    QuantizedTensor q;
    switch (policy.method) {
        case Method::lq:
            q = quantize_lq(t, policy.bits);
            break;
        case Method::aciq: {
            std::string warning;
            q = quantize_aciq(t, policy.bits, &warning);
            result.warning = std::move(warning);
            break;
        }
        case Method::ocs_naive:
            q = quantize_ocs(t, policy.bits, policy.ocs_ratio, SplitMode::naive);
            break;
        case Method::ocs_qa:
            q = quantize_ocs(t, policy.bits, policy.ocs_ratio, SplitMode::qa);
            break;
    }

    result.entry.method = q.method;
    result.entry.bits = q.params.bits;
    result.entry.step = q.params.step;
    if (q.params.clip_alpha) result.entry.clip_alpha = *q.params.clip_alpha;
    if (q.sigma) result.entry.sigma = *q.sigma;
    if (q.split_map) result.entry.split_count = q.split_map->events.size();
    result.code_count = q.code_count();

    if (q.split_map) {
        const TensorRecord folded = fold(q);
        result.entry.mse = mse(t, folded);
        result.entry.sqnr_db = sqnr_db(t, folded);
    } else {
        const ArrF reconstructed = dequantize_values(q);
        result.entry.mse = mse(t.f32(), reconstructed);
        result.entry.sqnr_db = sqnr_db(t.f32(), reconstructed);
    }

    result.out = TensorRecord::from_i8(t.name + kCodesSuffix, q.code_shape,
                                       q.codes.data(), q.codes.size());

    result.meta = json{{"method", method_name(q.method)},
                       {"bits", q.params.bits},
                       {"step", static_cast<double>(q.params.step)},
                       {"original_shape", q.original_shape}};
    if (q.params.clip_alpha)
        result.meta["clip_alpha"] = static_cast<double>(*q.params.clip_alpha);
    if (q.sigma) result.meta["sigma"] = *q.sigma;
    if (q.split_map) result.meta["split"] = split_map_to_json(*q.split_map);
    return result;
}

}  // namespace

const char* disposition_name(Disposition d) {
    switch (d) {
        case Disposition::quantized: return "quantized";
        case Disposition::skipped: return "skipped";
        case Disposition::ineligible: return "ineligible";
    }
    return "?";
}

std::pair<Archive, Report> quantize_archive(const Archive& archive,
                                            const QuantPolicy& policy,
                                            int max_threads) {
    grid_max(policy.bits);
    if (policy.ocs_ratio < 0.0 || policy.ocs_ratio > 1.0)
        throw Error(ErrorKind::invalid_argument, "expansion ratio outside [0, 1]");

    std::vector<TensorResult> results(archive.records.size());
    parallel_for(
        archive.records.size(),
        [&](std::size_t i) {
            try {
                results[i] = process_tensor(archive.records[i], policy);
            } catch (const Error&) {
                throw;
            } catch (const std::exception& e) {
                throw Error(ErrorKind::invalid_argument,
                            "tensor '" + archive.records[i].name + "': " + e.what());
            }
        },
        max_threads);

    Archive out;
    Report report;
    json tensors_meta = json::object();
    double original_bits = 0.0;
    double output_bits = 0.0;
    std::uint64_t total_elements = 0;
    std::uint64_t quantized_elements = 0;

    for (std::size_t i = 0; i < results.size(); ++i) {
        TensorResult& result = results[i];
        original_bits += 8.0 * static_cast<double>(archive.records[i].byte_count());
        total_elements += result.entry.element_count;
        if (result.entry.disposition == Disposition::quantized) {
            quantized_elements += result.entry.element_count;
            output_bits += static_cast<double>(result.code_count) * result.entry.bits + 32.0;
            tensors_meta[result.entry.name] = std::move(result.meta);
        } else {
            output_bits += 8.0 * static_cast<double>(result.out.byte_count());
        }
        if (!result.warning.empty()) report.warnings.push_back(result.warning);
        out.records.push_back(std::move(result.out));
        report.entries.push_back(std::move(result.entry));
    }

    report.quantization_ratio =
        total_elements ? static_cast<double>(quantized_elements) /
                             static_cast<double>(total_elements)
                       : 0.0;
    report.analytic_size_bits = output_bits;
    report.size_reduction_factor = output_bits > 0.0 ? original_bits / output_bits : 1.0;

    const json meta = {{"ptq_version", 1},
                       {"tensors", std::move(tensors_meta)},
                       {"source_metadata", archive.metadata}};
    out.metadata = meta.dump();
    return {std::move(out), std::move(report)};
}

Archive dequantize_archive(const Archive& archive) {
    json meta;
    try {
        meta = json::parse(archive.metadata);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::bad_metadata,
                    std::string("archive metadata is not valid JSON: ") + e.what());
    }
    if (!meta.contains("tensors") || !meta["tensors"].is_object())
        throw Error(ErrorKind::bad_metadata, "archive metadata has no tensor table");
    const json& tensors_meta = meta["tensors"];

    Archive out;
    out.metadata = meta.value("source_metadata", std::string());
    std::size_t reconstructed = 0;

    for (const auto& record : archive.records) {
        std::string base;
        if (ends_with(record.name, kCodesSuffix))
            base = record.name.substr(0, record.name.size() - std::strlen(kCodesSuffix));
        if (base.empty() || !tensors_meta.contains(base)) {
            out.records.push_back(record);
            continue;
        }

        const json& entry = tensors_meta.at(base);
        QuantizedTensor q;
        q.name = base;
        q.code_shape = record.shape;
        try {
            q.method = method_from_name(entry.at("method").get<std::string>());
            q.params.bits = entry.at("bits").get<int>();
            q.params.step = static_cast<float>(entry.at("step").get<double>());
            q.original_shape = entry.at("original_shape").get<std::vector<std::uint64_t>>();
            if (entry.contains("clip_alpha"))
                q.params.clip_alpha = static_cast<float>(entry.at("clip_alpha").get<double>());
            if (entry.contains("sigma")) q.sigma = entry.at("sigma").get<double>();
            if (entry.contains("split")) q.split_map = split_map_from_json(entry.at("split"));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::bad_metadata,
                        "metadata for tensor '" + base + "' is malformed: " + e.what());
        }
        const auto codes = record.i8();
        q.codes.assign(codes.data(), codes.data() + codes.size());

        out.records.push_back(q.split_map ? fold(q) : dequantize(q));
        ++reconstructed;
    }

    if (reconstructed != tensors_meta.size())
        throw Error(ErrorKind::bad_metadata,
                    "metadata lists " + std::to_string(tensors_meta.size()) +
                        " quantized tensors but " + std::to_string(reconstructed) +
                        " code records were found");
    return out;
}

namespace {

ArrD as_double_array(const TensorRecord& t) {
    const std::uint64_t n = t.element_count();
    ArrD out(static_cast<Eigen::Index>(n));
    switch (t.dtype) {
        case DType::float32:
            out = t.f32().cast<double>();
            break;
        case DType::int8:
            out = t.i8().cast<double>();
            break;
        case DType::int16:
            out = Eigen::Map<const Arr<std::int16_t>>(
                      reinterpret_cast<const std::int16_t*>(t.data.data()),
                      static_cast<Eigen::Index>(n))
                      .cast<double>();
            break;
        case DType::int32:
            out = Eigen::Map<const Arr<std::int32_t>>(
                      reinterpret_cast<const std::int32_t*>(t.data.data()),
                      static_cast<Eigen::Index>(n))
                      .cast<double>();
            break;
    }
    return out;
}

}  // namespace

CompareTable compare_archives(const Archive& a, const Archive& b) {
    if (a.records.size() != b.records.size())
        throw Error(ErrorKind::shape_mismatch,
                    "archives hold " + std::to_string(a.records.size()) + " and " +
                        std::to_string(b.records.size()) + " tensors");
    CompareTable table;
    double sum_mse = 0.0;
    double sum_sqnr = 0.0;
    for (const auto& ta : a.records) {
        const TensorRecord& tb = b.get(ta.name);
        if (ta.shape != tb.shape)
            throw Error(ErrorKind::shape_mismatch,
                        "tensor '" + ta.name + "' has mismatched shapes");
        const ArrD va = as_double_array(ta);
        const ArrD vb = as_double_array(tb);
        CompareRow row;
        row.name = ta.name;
        row.mse = mse(va, vb);
        row.sqnr_db = sqnr_db(va, vb);
        sum_mse += row.mse;
        sum_sqnr += row.sqnr_db;
        table.rows.push_back(std::move(row));
    }
    const double n = table.rows.empty() ? 1.0 : static_cast<double>(table.rows.size());
    table.mean_mse = sum_mse / n;
    table.mean_sqnr_db = sum_sqnr / n;
    return table;
}

bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

namespace {

std::string format_double(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s.precision(10);
    s << value;
    return s.str();
}

}  // namespace

std::string report_csv(const Report& report) {
    std::ostringstream out;
    out << "name,disposition,method,bits,step,clip_alpha,sigma,split_count,"
           "elements,mse,sqnr_db\n";
    for (const auto& e : report.entries) {
        out << e.name << ',' << disposition_name(e.disposition) << ',';
        if (e.disposition == Disposition::quantized) {
            out << method_name(e.method) << ',' << e.bits << ',' << format_double(e.step)
                << ',' << (e.clip_alpha ? format_double(*e.clip_alpha) : "") << ','
                << (e.sigma ? format_double(*e.sigma) : "") << ','
                << (e.split_count ? std::to_string(*e.split_count) : "") << ','
                << e.element_count << ',' << format_double(e.mse) << ','
                << format_double(e.sqnr_db) << '\n';
        } else {
            out << ",,,,,," << e.element_count << ",,\n";
        }
    }
    return out.str();
}

std::string report_text(const Report& report) {
    std::ostringstream out;
    out << "tensors: " << report.entries.size() << '\n';
    for (const auto& e : report.entries) {
        out << "  " << e.name << ": " << disposition_name(e.disposition);
        if (e.disposition == Disposition::quantized) {
            out << " method=" << method_name(e.method) << " bits=" << e.bits
                << " step=" << format_double(e.step);
            if (e.clip_alpha) out << " clip_alpha=" << format_double(*e.clip_alpha);
            if (e.split_count) out << " splits=" << *e.split_count;
            out << " mse=" << format_double(e.mse)
                << " sqnr_db=" << format_double(e.sqnr_db);
        }
        out << '\n';
    }
    out << "quantization_ratio: " << format_double(report.quantization_ratio) << '\n';
    out << "analytic_size_bits: " << format_double(report.analytic_size_bits) << '\n';
    out << "size_reduction_factor: " << format_double(report.size_reduction_factor)
        << '\n';
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
    return out.str();
}

std::string compare_csv(const CompareTable& table) {
    std::ostringstream out;
    out << "name,mse,sqnr_db\n";
    for (const auto& row : table.rows)
        out << row.name << ',' << format_double(row.mse) << ','
            << format_double(row.sqnr_db) << '\n';
    return out.str();
}

}  // namespace ptq
