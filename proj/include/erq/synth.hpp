#pragma once

#include "erq/common.hpp"
#include "erq/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace erq {

enum class Nonlinearity { Identity, Gelu, Softmax };
enum class ActDistribution { Gaussian, Mixture };

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& name);

struct LayerDims {
    Eigen::Index d_out = 0;
    Eigen::Index d_in = 0;
};

// Synthetic layer chain. Activations are Gaussian per channel with means drawn
// from N(0, mean_spread^2) and standard deviations log-uniform in
// [min_std, max_std]; a few shared latent factors correlate the channels.
struct SynthSpec {
    std::uint64_t seed = 0;
    std::vector<LayerDims> dims;
    Eigen::Index rows = 2048;
    ActDistribution distribution = ActDistribution::Gaussian;
    double mean_spread = 1.0;
    double min_std = 0.1;
    double max_std = 4.0;
    double correlation = 0.5;  // share of each channel's variance carried by the latent factors
    int factors = 8;
    std::vector<Nonlinearity> chain;  // one between each pair of consecutive layers

    void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& spec);

struct SynthLayer {
    Matrix weight;  // d_out x d_in
    Matrix act_fp;  // rows x d_in
};

// Deterministic in (spec.seed, index).
SynthLayer generate_layer(const SynthSpec& spec, std::size_t index);

Matrix apply_nonlinearity(const Matrix& x, Nonlinearity n);

enum class ChainVariant { Rtn, AqerOnly, WqerOnly, Erq };
std::string to_string(ChainVariant v);

struct ChainLayerResult {
    std::string layer_id;
    ActQuant act_quant = ActQuant::Uniform;
    double mse = 0.0;  // output MSE on the layer's own calibration input
};

struct ChainVariantResult {
    ChainVariant variant = ChainVariant::Rtn;
    std::vector<ChainLayerResult> layers;
    double end_to_end_mse = 0.0;
};

struct ChainReport {
    double signal_power = 0.0;  // mean squared norm of the full-precision output rows
    std::vector<ChainVariantResult> variants;

    const ChainVariantResult& get(ChainVariant v) const;
};

// Quantizes the chain layer by layer. Each layer calibrates on the output of
// its already-quantized predecessor passed through the nonlinearity; a softmax
// stage switches the next layer's activation quantizer to log-sqrt2.
// Bit-widths and ridge strengths come from cfg; cfg.stages is ignored since
// every variant is run.
ChainReport run_chain(const SynthSpec& spec, const RunConfig& cfg);

nlohmann::json to_json(const ChainReport& report);

}  // namespace erq
