#include "erq/pipeline.hpp"

#include "erq/oracle.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace erq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string safe_file_stem(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
    }
    return out.empty() ? "layer" : out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

QuantFamily family_for(ActQuant q) { return q == ActQuant::LogSqrt2 ? QuantFamily::LogSqrt2 : QuantFamily::Uniform; }

}  // namespace

Stages parse_stages(const std::string& text) {
    if (text == "all") return Stages::all();
    if (text == "none" || text.empty()) return Stages::none();
    Stages s = Stages::none();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "aqer") s.aqer = true;
        else if (item == "wqer_rounding") s.rounding = true;
        else if (item == "wqer_ridge") s.ridge = true;
        else if (item == "wqer") s.rounding = s.ridge = true;
        else throw ValidationError("unknown stage '" + item + "'");
    }
    return s;
}

std::string to_string(const Stages& s) {
    std::string out;
    auto add = [&out](const char* name) {
        if (!out.empty()) out += ",";
        out += name;
    };
    if (s.aqer) add("aqer");
    if (s.rounding) add("wqer_rounding");
    if (s.ridge) add("wqer_ridge");
    return out.empty() ? "none" : out;
}

void RunConfig::validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("lambda1 and lambda2 must be non-negative");
    if (k < 0) throw ValidationError("k must be >= 0");
    if (max_iter < 0) throw ValidationError("max_iter must be >= 0");
    if (bits_w && (*bits_w < 2 || *bits_w > 30)) throw ValidationError("bits_w must lie in [2, 30]");
    if (bits_a && (*bits_a < 2 || *bits_a > 30)) throw ValidationError("bits_a must lie in [2, 30]");
    if (jobs < 1) throw ValidationError("jobs must be >= 1");
}

void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    try {
        if (j.contains("lambda1")) cfg.lambda1 = j.at("lambda1").get<double>();
        if (j.contains("lambda2")) cfg.lambda2 = j.at("lambda2").get<double>();
        if (j.contains("k")) cfg.k = j.at("k").get<int>();
        if (j.contains("max_iter")) cfg.max_iter = j.at("max_iter").get<int>();
        if (j.contains("T")) cfg.max_iter = j.at("T").get<int>();
        if (j.contains("bits_w")) cfg.bits_w = j.at("bits_w").get<int>();
        if (j.contains("bits_a")) cfg.bits_a = j.at("bits_a").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
        if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
        if (j.contains("stages")) {
            const auto& st = j.at("stages");
            if (st.is_string()) {
                cfg.stages = parse_stages(st.get<std::string>());
            } else {
                std::string joined;
                for (const auto& item : st) joined += (joined.empty() ? "" : ",") + item.get<std::string>();
                cfg.stages = parse_stages(joined);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

nlohmann::json to_json(const RunConfig& cfg) {
    // jobs and out_dir are left out so reports do not depend on them.
    nlohmann::json j;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["k"] = cfg.k;
    j["max_iter"] = cfg.max_iter;
    j["bits_w"] = cfg.bits_w ? nlohmann::json(*cfg.bits_w) : nlohmann::json(nullptr);
    j["bits_a"] = cfg.bits_a ? nlohmann::json(*cfg.bits_a) : nlohmann::json(nullptr);
    j["stages"] = to_string(cfg.stages);
    j["seed"] = cfg.seed;
    return j;
}

LayerInput load_layer(const LayerManifestEntry& entry, const RunConfig& cfg) {
    LayerInput in;
    in.layer_id = entry.layer_id;
    const auto wt = read_tensor(entry.weight_path);
    const auto ct = read_tensor(entry.calib_path);
    validate_layer(entry, wt, ct);
    in.weight = wt.to_matrix();
    in.act_fp = ct.to_matrix();
    in.act_quant = entry.act_quant;
    in.bits_w = cfg.bits_w.value_or(entry.bits_w);
    in.bits_a = cfg.bits_a.value_or(entry.bits_a);
    return in;
}

PreparedLayer prepare_layer(LayerInput input) {
    if (input.weight.cols() != input.act_fp.cols()) {
        throw ValidationError("layer '" + input.layer_id + "': weight D_in does not match calibration width");
    }
    if (input.act_quant == ActQuant::LogSqrt2 && input.act_fp.size() > 0 && input.act_fp.minCoeff() < 0.0) {
        throw ValidationError("layer '" + input.layer_id + "': log_sqrt2 activations must be non-negative");
    }
    PreparedLayer p;
    p.act_scheme = calibrate_scale(input.act_fp, family_for(input.act_quant), input.bits_a, Granularity::PerTensor);
    p.act_q = apply_scheme(input.act_fp, p.act_scheme);
    p.moments_q = accumulate_moments(p.act_q);
    p.err_cross = error_cross_moment(input.act_fp, p.act_q);
    const auto rtn = calibrate_scale(input.weight, QuantFamily::Uniform, input.bits_w, Granularity::PerChannel);
    p.mse_baseline = layer_mse(input.weight, input.act_fp, apply_scheme(input.weight, rtn), p.act_q);
    p.input = std::move(input);
    return p;
}

double reduction_ratio(double before, double after) { return before > 0.0 ? 1.0 - after / before : 0.0; }

double LayerReport::reduction_aqer() const { return reduction_ratio(mse_baseline, mse_after_aqer); }
double LayerReport::reduction_wqer() const { return reduction_ratio(mse_after_aqer, mse_after_wqer); }
double LayerReport::reduction_total() const { return reduction_ratio(mse_baseline, mse_after_wqer); }

LayerOutcome run_layer(const PreparedLayer& layer, const RunConfig& cfg) {
    const auto& in = layer.input;
    LayerOutcome out;
    auto& r = out.report;
    r.layer_id = in.layer_id;
    r.d_out = in.weight.rows();
    r.d_in = in.weight.cols();
    r.rows = in.act_fp.rows();
    r.act_quant = in.act_quant;
    r.bits_w = in.bits_w;
    r.bits_a = in.bits_a;
    r.act_params = layer.act_scheme.params.front();
    r.mse_baseline = layer.mse_baseline;

    auto t0 = Clock::now();
    if (cfg.stages.aqer) {
        out.weight_fp_updated = solve_aqer_from_moments(in.weight, layer.err_cross, layer.moments_q.raw2, cfg.lambda1).updated_w;
    } else {
        out.weight_fp_updated = in.weight;
    }
    out.times.aqer = seconds_since(t0);

    t0 = Clock::now();
    // Channel scales are fit to the post-Aqer weights and held fixed through Wqer.
    out.weight_scheme = calibrate_scale(out.weight_fp_updated, QuantFamily::Uniform, in.bits_w, Granularity::PerChannel);
    const Matrix rtn = apply_scheme(out.weight_fp_updated, out.weight_scheme);
    out.times.calibration = seconds_since(t0);
    r.mse_after_aqer = layer_mse(in.weight, in.act_fp, rtn, layer.act_q);
    r.degenerate_channels = out.weight_scheme.degenerate;
    for (const auto& p : out.weight_scheme.params) r.weight_params.push_back(std::get<UniformParams>(p));

    t0 = Clock::now();
    if (cfg.stages.rounding || cfg.stages.ridge) {
        const auto wcfg = cfg.wqer();
        const SlicePlan plan(layer.moments_q, wcfg);
        auto res = wqer_layer(out.weight_fp_updated, out.weight_scheme, plan, wcfg, cfg.jobs);
        out.codes = std::move(res.codes);
        out.dequant = std::move(res.dequant);
        out.traces = std::move(res.traces);
    } else {
        out.codes = codes_for(out.weight_fp_updated, out.weight_scheme);
        out.dequant = rtn;
    }
    out.times.wqer = seconds_since(t0);
    r.mse_after_wqer = layer_mse(in.weight, in.act_fp, out.dequant, layer.act_q);
    return out;
}

nlohmann::json to_json(const QuantParams& p) {
    return std::visit(
        [](const auto& q) {
            nlohmann::json j;
            using T = std::decay_t<decltype(q)>;
            if constexpr (std::is_same_v<T, UniformParams>) {
                j["family"] = "uniform";
                j["scale"] = q.scale;
                j["zero_point"] = q.zero_point;
            } else {
                j["family"] = "log_sqrt2";
                j["scale"] = q.scale;
            }
            j["bits"] = q.bits;
            return j;
        },
        p);
}

nlohmann::json to_json(const LayerReport& r) {
    nlohmann::json j;
    j["layer_id"] = r.layer_id;
    j["d_out"] = r.d_out;
    j["d_in"] = r.d_in;
    j["rows"] = r.rows;
    j["act_quant"] = to_string(r.act_quant);
    j["bits_w"] = r.bits_w;
    j["bits_a"] = r.bits_a;
    j["act_params"] = to_json(r.act_params);
    auto& w = j["weight_params"] = nlohmann::json::array();
    for (const auto& p : r.weight_params) w.push_back({{"scale", p.scale}, {"zero_point", p.zero_point}});
    j["degenerate_channels"] = r.degenerate_channels;
    j["mse_baseline"] = r.mse_baseline;
    j["mse_after_aqer"] = r.mse_after_aqer;
    j["mse_after_wqer"] = r.mse_after_wqer;
    j["reduction_ratio"] = {
        {"aqer", r.reduction_aqer()}, {"wqer", r.reduction_wqer()}, {"total", r.reduction_total()}};
    return j;
}

std::string trace_csv(const std::string& layer_id, const std::vector<std::vector<IterationTrace>>& traces,
                      bool header) {
    std::string out;
    if (header) out += "layer_id,channel,iteration,slice_size,proxy_before,proxy_after,mse\n";
    for (std::size_t c = 0; c < traces.size(); ++c) {
        for (const auto& t : traces[c]) {
            out += layer_id + "," + std::to_string(c) + "," + std::to_string(t.iteration) + "," +
                   std::to_string(t.slice_size) + "," + fmt_double(t.proxy_before) + "," + fmt_double(t.proxy_after) +
                   "," + fmt_double(t.mse) + "\n";
        }
    }
    return out;
}

QuantizeSummary cmd_quantize(const std::filesystem::path& manifest, const RunConfig& cfg) {
    QuantizeSummary summary;
    std::vector<LayerManifestEntry> entries;
    try {
        cfg.validate();
        entries = parse_manifest(manifest);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        summary.exit_code = kExitValidation;
        summary.failures.push_back(e.what());
        return summary;
    }
    std::filesystem::create_directories(cfg.out_dir);

    nlohmann::json report;
    report["config"] = to_json(cfg);
    report["layers"] = nlohmann::json::array();
    report["failures"] = nlohmann::json::array();
    nlohmann::json timings = nlohmann::json::array();
    std::string trace = trace_csv("", {}, true);

    for (const auto& entry : entries) {
        try {
            auto t0 = Clock::now();
            const auto prepared = prepare_layer(load_layer(entry, cfg));
            const double prep_seconds = seconds_since(t0);
            auto outcome = run_layer(prepared, cfg);

            const auto stem = cfg.out_dir / safe_file_stem(entry.layer_id);
            write_tensor(stem.string() + ".codes.npy", TensorFile::from_codes(outcome.codes));
            Vector scales(outcome.report.d_out);
            TensorFile zps;
            zps.shape = {static_cast<std::size_t>(outcome.report.d_out)};
            std::vector<std::int32_t> zp_data;
            for (Eigen::Index i = 0; i < outcome.report.d_out; ++i) {
                scales[i] = outcome.report.weight_params[static_cast<std::size_t>(i)].scale;
                zp_data.push_back(outcome.report.weight_params[static_cast<std::size_t>(i)].zero_point);
            }
            zps.data = std::move(zp_data);
            write_tensor(stem.string() + ".scales.npy", TensorFile::from_vector(scales));
            write_tensor(stem.string() + ".zero_points.npy", zps);

            report["layers"].push_back(to_json(outcome.report));
            trace += trace_csv(entry.layer_id, outcome.traces, false);
            timings.push_back({{"layer_id", entry.layer_id},
                               {"prepare", prep_seconds},
                               {"aqer", outcome.times.aqer},
                               {"weight_calibration", outcome.times.calibration},
                               {"wqer", outcome.times.wqer}});
            summary.reports.push_back(std::move(outcome.report));
        } catch (const Error& e) {
            const int code = dynamic_cast<const NumericalError*>(&e) ? kExitNumerical : kExitValidation;
            summary.exit_code = std::max(summary.exit_code, code);
            summary.failures.push_back(entry.layer_id + ": " + e.what());
            report["failures"].push_back({{"layer_id", entry.layer_id}, {"error", e.what()}});
            std::cerr << "error: layer " << entry.layer_id << ": " << e.what() << "\n";
        }
    }
    write_text(cfg.out_dir / "report.json", report.dump(2) + "\n");
    write_text(cfg.out_dir / "trace.csv", trace);
    write_text(cfg.out_dir / "timings.json", timings.dump(2) + "\n");
    return summary;
}

std::vector<Stages> ablation_grid() {
    return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
            {false, true, true},   {true, true, false},  {true, false, true},  {true, true, true}};
}

std::vector<AblationRow> ablate_layers(const std::vector<PreparedLayer>& layers, const RunConfig& cfg) {
    std::vector<AblationRow> rows;
    for (const auto& stages : ablation_grid()) {
        RunConfig c = cfg;
        c.stages = stages;
        AblationRow row{stages, 0.0, 0.0};
        for (const auto& layer : layers) row.mse += run_layer(layer, c).report.mse_after_wqer;
        rows.push_back(row);
    }
    for (auto& row : rows) row.reduction_ratio = reduction_ratio(rows.front().mse, row.mse);
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "aqer,rounding,ridge,mse,reduction_ratio\n";
    for (const auto& r : rows) {
        out += std::to_string(int(r.stages.aqer)) + "," + std::to_string(int(r.stages.rounding)) + "," +
               std::to_string(int(r.stages.ridge)) + "," + fmt_double(r.mse) + "," + fmt_double(r.reduction_ratio) +
               "\n";
    }
    return out;
}

int cmd_ablate(const std::filesystem::path& manifest, const RunConfig& cfg) {
    std::vector<PreparedLayer> layers;
    try {
        cfg.validate();
        for (const auto& entry : load_manifest(manifest)) layers.push_back(prepare_layer(load_layer(entry, cfg)));
        const auto rows = ablate_layers(layers, cfg);
        std::filesystem::create_directories(cfg.out_dir);
        const auto csv = ablation_csv(rows);
        write_text(cfg.out_dir / "ablation.csv", csv);
        std::cout << csv;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "lambda") return SweepParam::Lambda;
    if (name == "k") return SweepParam::K;
    if (name == "n_images") return SweepParam::NImages;
    throw ValidationError("unknown sweep parameter '" + name + "' (expected lambda, k or n_images)");
}

std::vector<SweepRow> sweep_layers(SweepParam param, const std::vector<double>& values,
                                   const std::vector<LayerInput>& layers, const RunConfig& cfg) {
    std::vector<SweepRow> rows;
    std::vector<PreparedLayer> prepared;
    for (const auto& l : layers) prepared.push_back(prepare_layer(l));
    for (double v : values) {
        RunConfig c = cfg;
        SweepRow row{v, 0.0, 0.0, 0.0, 0.0};
        const auto t0 = Clock::now();
        if (param == SweepParam::Lambda) {
            c.lambda1 = c.lambda2 = v;  // coupled
        } else if (param == SweepParam::K) {
            c.k = static_cast<int>(v);
        }
        c.validate();
        for (const auto& full : prepared) {
            if (param != SweepParam::NImages) {
                const auto out = run_layer(full, c);
                row.mse_baseline += out.report.mse_baseline;
                row.mse_final += out.report.mse_after_wqer;
                continue;
            }
            // Quantizers stay calibrated on the full batch; only the Aqer/Wqer
            // statistics come from the first n rows. Scoring uses every row.
            const auto n = static_cast<Eigen::Index>(v);
            if (n < 2 || n > full.act_q.rows()) {
                throw ValidationError("n_images value " + std::to_string(n) + " outside [2, " +
                                      std::to_string(full.act_q.rows()) + "]");
            }
            PreparedLayer sub = full;
            sub.moments_q = accumulate_moments(full.act_q.topRows(n));
            sub.err_cross = error_cross_moment(full.input.act_fp.topRows(n), full.act_q.topRows(n));
            const auto out = run_layer(sub, c);
            row.mse_baseline += out.report.mse_baseline;
            row.mse_final += out.report.mse_after_wqer;
        }
        row.reduction_ratio = reduction_ratio(row.mse_baseline, row.mse_final);
        row.seconds = seconds_since(t0);
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows) {
    const char* name = param == SweepParam::Lambda ? "lambda" : param == SweepParam::K ? "k" : "n_images";
    std::string out = std::string(name) + ",mse_baseline,mse_final,reduction_ratio,seconds\n";
    for (const auto& r : rows) {
        out += fmt_double(r.value) + "," + fmt_double(r.mse_baseline) + "," + fmt_double(r.mse_final) + "," +
               fmt_double(r.reduction_ratio) + "," + fmt_double(r.seconds) + "\n";
    }
    return out;
}

int cmd_sweep(SweepParam param, const std::vector<double>& values, const std::filesystem::path& manifest,
              const RunConfig& cfg) {
    try {
        cfg.validate();
        std::vector<LayerInput> layers;
        for (const auto& entry : load_manifest(manifest)) layers.push_back(load_layer(entry, cfg));
        const auto csv = sweep_csv(param, sweep_layers(param, values, layers, cfg));
        std::filesystem::create_directories(cfg.out_dir);
        write_text(cfg.out_dir / "sweep.csv", csv);
        std::cout << csv;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

}  // namespace erq
