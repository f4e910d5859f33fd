#pragma once

#include "erq/aqer.hpp"
#include "erq/common.hpp"
#include "erq/moments.hpp"
#include "erq/quantizers.hpp"
#include "erq/tensor_store.hpp"
#include "erq/wqer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace erq {

struct Stages {
    bool aqer = true;
    bool rounding = true;
    bool ridge = true;

    static Stages all() { return {true, true, true}; }
    static Stages none() { return {false, false, false}; }
    bool operator==(const Stages&) const = default;
};

// Accepts "all", "none", or a comma list of aqer, wqer_rounding, wqer_ridge.
Stages parse_stages(const std::string& text);
std::string to_string(const Stages& s);

struct RunConfig {
    double lambda1 = kDefaultLambda;
    double lambda2 = kDefaultLambda;
    int k = 1;
    int max_iter = 100;
    std::optional<int> bits_w;  // overrides the manifest when set
    std::optional<int> bits_a;
    Stages stages;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "erq_out";
    int jobs = 1;

    WqerConfig wqer() const { return {k, max_iter, lambda2, stages.rounding, stages.ridge}; }
    void validate() const;
};

// Config file keys mirror the field names; absent keys keep their current value.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

struct LayerInput {
    std::string layer_id;
    Matrix weight;
    Matrix act_fp;
    ActQuant act_quant = ActQuant::Uniform;
    int bits_w = 4;
    int bits_a = 4;
};

LayerInput load_layer(const LayerManifestEntry& entry, const RunConfig& cfg);

// Everything about a layer that does not depend on the enabled stages.
struct PreparedLayer {
    LayerInput input;
    QuantScheme act_scheme;
    Matrix act_q;
    MomentSet moments_q;
    Matrix err_cross;  // E[dx xbar^T]
    double mse_baseline = 0.0;
};

PreparedLayer prepare_layer(LayerInput input);

struct StageTimes {
    double calibration = 0.0;
    double aqer = 0.0;
    double wqer = 0.0;
};

struct LayerReport {
    std::string layer_id;
    Eigen::Index d_out = 0;
    Eigen::Index d_in = 0;
    Eigen::Index rows = 0;
    ActQuant act_quant = ActQuant::Uniform;
    int bits_w = 0;
    int bits_a = 0;
    QuantParams act_params;
    std::vector<UniformParams> weight_params;
    bool degenerate_channels = false;
    double mse_baseline = 0.0;
    double mse_after_aqer = 0.0;
    double mse_after_wqer = 0.0;

    double reduction_aqer() const;
    double reduction_wqer() const;
    double reduction_total() const;
};

// 1 - after / before; zero when before is zero.
double reduction_ratio(double before, double after);

struct LayerOutcome {
    LayerReport report;
    StageTimes times;
    Matrix weight_fp_updated;  // after Aqer (equal to the input weight when disabled)
    QuantScheme weight_scheme;
    CodeMatrix codes;
    Matrix dequant;
    std::vector<std::vector<IterationTrace>> traces;
};

LayerOutcome run_layer(const PreparedLayer& layer, const RunConfig& cfg);

nlohmann::json to_json(const LayerReport& r);
nlohmann::json to_json(const QuantParams& p);

// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2, kExitVerification = 3 };

struct QuantizeSummary {
    int exit_code = kExitOk;
    std::vector<LayerReport> reports;
    std::vector<std::string> failures;
};

// Runs every manifest layer, writing report.json, trace.csv, timings.json and
// per-layer code/scale tensors into cfg.out_dir.
QuantizeSummary cmd_quantize(const std::filesystem::path& manifest, const RunConfig& cfg);

struct AblationRow {
    Stages stages;
    double mse = 0.0;  // summed over layers
    double reduction_ratio = 0.0;
};

// The eight stage combinations in the order baseline, aqer, rounding, ridge,
// rounding+ridge, aqer+rounding, aqer+ridge, all.
std::vector<Stages> ablation_grid();
std::vector<AblationRow> ablate_layers(const std::vector<PreparedLayer>& layers, const RunConfig& cfg);
int cmd_ablate(const std::filesystem::path& manifest, const RunConfig& cfg);
std::string ablation_csv(const std::vector<AblationRow>& rows);

enum class SweepParam { Lambda, K, NImages };
SweepParam parse_sweep_param(const std::string& name);

struct SweepRow {
    double value = 0.0;
    double mse_baseline = 0.0;
    double mse_final = 0.0;
    double reduction_ratio = 0.0;
    double seconds = 0.0;
};

std::vector<SweepRow> sweep_layers(SweepParam param, const std::vector<double>& values,
                                   const std::vector<LayerInput>& layers, const RunConfig& cfg);
int cmd_sweep(SweepParam param, const std::vector<double>& values, const std::filesystem::path& manifest,
              const RunConfig& cfg);
std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows);

// Trace rows: layer_id, channel, iteration, slice_size, proxy_before, proxy_after, mse.
std::string trace_csv(const std::string& layer_id, const std::vector<std::vector<IterationTrace>>& traces,
                      bool header);

}  // namespace erq
