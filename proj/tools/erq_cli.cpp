#include "erq/pipeline.hpp"
#include "erq/synth.hpp"
#include "erq/verify.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

struct Flags {
    std::string manifest;
    std::string config;
    std::string out;
    int jobs = 1;
    std::uint64_t seed = 0;
    std::string stages;
    int bits_w = 0;
    int bits_a = 0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    int k = 0;
    int max_iter = 0;
};

void add_run_flags(CLI::App* cmd, Flags& f, bool needs_manifest) {
    auto* m = cmd->add_option("--manifest", f.manifest, "Layer manifest (JSON)");
    if (needs_manifest) m->required();
    cmd->add_option("--config", f.config, "Run config (JSON); flags override it");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--jobs", f.jobs, "Worker threads for channel-parallel Wqer");
    cmd->add_option("--seed", f.seed, "Seed");
    cmd->add_option("--stages", f.stages, "all, none, or a comma list of aqer,wqer_rounding,wqer_ridge");
    cmd->add_option("--bits-w", f.bits_w, "Weight bit-width (overrides manifest)");
    cmd->add_option("--bits-a", f.bits_a, "Activation bit-width (overrides manifest)");
    cmd->add_option("--lambda1", f.lambda1, "Aqer ridge strength");
    cmd->add_option("--lambda2", f.lambda2, "Wqer ridge strength");
    cmd->add_option("--k", f.k, "Flips per Rounding Refinement step");
    cmd->add_option("--max-iter", f.max_iter, "Maximum Rounding Refinement steps");
}

erq::RunConfig build_config(const CLI::App* cmd, const Flags& f) {
    erq::RunConfig cfg;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw erq::ValidationError("cannot open config " + f.config);
        try {
            erq::apply_config_json(cfg, nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw erq::ValidationError(std::string("config: ") + e.what());
        }
    }
    auto given = [cmd](const char* name) { return cmd->count(name) > 0; };
    if (given("--out")) cfg.out_dir = f.out;
    if (given("--jobs")) cfg.jobs = f.jobs;
    if (given("--seed")) cfg.seed = f.seed;
    if (given("--stages")) cfg.stages = erq::parse_stages(f.stages);
    if (given("--bits-w")) cfg.bits_w = f.bits_w;
    if (given("--bits-a")) cfg.bits_a = f.bits_a;
    if (given("--lambda1")) cfg.lambda1 = f.lambda1;
    if (given("--lambda2")) cfg.lambda2 = f.lambda2;
    if (given("--k")) cfg.k = f.k;
    if (given("--max-iter")) cfg.max_iter = f.max_iter;
    cfg.validate();
    return cfg;
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw erq::ValidationError("bad sweep value '" + item + "'");
        }
    }
    if (out.empty()) throw erq::ValidationError("sweep needs at least one value");
    return out;
}

erq::SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw erq::ValidationError("cannot open synth spec " + path);
    try {
        return erq::synth_spec_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw erq::ValidationError(std::string("synth spec: ") + e.what());
    }
}

// Writes tensors and a manifest for a synthetic chain, propagating the
// full-precision activations through each layer and nonlinearity.
void write_synth(const erq::SynthSpec& spec, const std::filesystem::path& out, int bits_w, int bits_a) {
    std::filesystem::create_directories(out);
    nlohmann::json manifest;
    manifest["layers"] = nlohmann::json::array();
    erq::Matrix input = erq::generate_layer(spec, 0).act_fp;
    for (std::size_t i = 0; i < spec.dims.size(); ++i) {
        const auto layer = erq::generate_layer(spec, i);
        const std::string id = "layer" + std::to_string(i);
        erq::write_tensor(out / (id + ".weight.npy"), erq::TensorFile::from_matrix(layer.weight));
        erq::write_tensor(out / (id + ".calib.npy"), erq::TensorFile::from_matrix(input));
        const bool softmax_in = i > 0 && spec.chain[i - 1] == erq::Nonlinearity::Softmax;
        manifest["layers"].push_back({{"layer_id", id},
                                      {"weight_path", id + ".weight.npy"},
                                      {"calib_path", id + ".calib.npy"},
                                      {"act_quant", softmax_in ? "log_sqrt2" : "uniform"},
                                      {"bits_w", bits_w},
                                      {"bits_a", bits_a}});
        if (i + 1 < spec.dims.size()) {
            input = erq::apply_nonlinearity(input * layer.weight.transpose(), spec.chain[i]);
        }
    }
    std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Post-training quantization with activation and weight error reduction"};
    app.require_subcommand(1);

    Flags qf, af, sf, vf;
    auto* quantize = app.add_subcommand("quantize", "Quantize every layer of a manifest");
    add_run_flags(quantize, qf, true);

    auto* ablate = app.add_subcommand("ablate", "Run the 8 stage combinations and emit an ablation CSV");
    add_run_flags(ablate, af, true);

    auto* sweep = app.add_subcommand("sweep", "Sweep lambda (coupled), k, or calibration size");
    add_run_flags(sweep, sf, true);
    std::string sweep_param, sweep_values;
    sweep->add_option("--param", sweep_param, "lambda | k | n_images")->required();
    sweep->add_option("--values", sweep_values, "Comma-separated values")->required();

    auto* verify = app.add_subcommand("verify", "Run the built-in verification suites");
    add_run_flags(verify, vf, false);
    bool inject_fault = false;
    verify->add_flag("--inject-gradient-fault", inject_fault, "Flip the sign of the proxy gradient (sanity check)");

    auto* synth = app.add_subcommand("synth", "Generate synthetic layer tensors and a manifest");
    std::string synth_spec_path, synth_out = "synth";
    int synth_bits_w = 4, synth_bits_a = 4;
    synth->add_option("--spec", synth_spec_path, "Synthetic spec (JSON)")->required();
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--bits-w", synth_bits_w, "Weight bit-width written to the manifest");
    synth->add_option("--bits-a", synth_bits_a, "Activation bit-width written to the manifest");

    auto* chain = app.add_subcommand("chain", "Quantize a synthetic chain under RTN, Aqer-only, Wqer-only and full ERQ");
    Flags cf;
    add_run_flags(chain, cf, false);
    std::string chain_spec_path;
    chain->add_option("--spec", chain_spec_path, "Synthetic spec (JSON)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*quantize) {
            const auto cfg = build_config(quantize, qf);
            const auto summary = erq::cmd_quantize(qf.manifest, cfg);
            for (const auto& r : summary.reports) {
                std::cout << r.layer_id << ": mse " << r.mse_baseline << " -> " << r.mse_after_aqer << " -> "
                          << r.mse_after_wqer << " (reduction " << r.reduction_total() << ")\n";
            }
            return summary.exit_code;
        }
        if (*ablate) return erq::cmd_ablate(af.manifest, build_config(ablate, af));
        if (*sweep) {
            return erq::cmd_sweep(erq::parse_sweep_param(sweep_param), parse_values(sweep_values), sf.manifest,
                                  build_config(sweep, sf));
        }
        if (*verify) {
            const auto cfg = build_config(verify, vf);
            erq::VerifyOptions opt;
            opt.seed = cfg.seed;
            if (inject_fault) {
                opt.gradient = [](const erq::Vector& d, const erq::Matrix& m) { return erq::Vector(-erq::proxy_gradient(d, m)); };
            }
            bool ok = true;
            for (const auto& r : erq::run_verify_suites(opt)) {
                std::cout << erq::to_json(r).dump() << "\n";
                ok = ok && r.passed;
            }
            std::cout << nlohmann::json{{"all_passed", ok}}.dump() << "\n";
            return ok ? erq::kExitOk : erq::kExitVerification;
        }
        if (*synth) {
            write_synth(load_synth_spec(synth_spec_path), synth_out, synth_bits_w, synth_bits_a);
            return erq::kExitOk;
        }
        if (*chain) {
            const auto cfg = build_config(chain, cf);
            std::cout << erq::to_json(erq::run_chain(load_synth_spec(chain_spec_path), cfg)).dump(2) << "\n";
            return erq::kExitOk;
        }
    } catch (const erq::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return erq::kExitNumerical;
    } catch (const erq::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return erq::kExitValidation;
    }
    return erq::kExitOk;
}
