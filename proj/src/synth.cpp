#include "erq/synth.hpp"

#include "erq/oracle.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace erq {

namespace {

std::mt19937_64 rng_for(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x45525131u};
    return std::mt19937_64(seq);
}

Matrix gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

}  // namespace

std::string to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::Identity: return "identity";
        case Nonlinearity::Gelu: return "gelu";
        case Nonlinearity::Softmax: return "softmax";
    }
    return "?";
}

Nonlinearity parse_nonlinearity(const std::string& name) {
    if (name == "identity") return Nonlinearity::Identity;
    if (name == "gelu") return Nonlinearity::Gelu;
    if (name == "softmax") return Nonlinearity::Softmax;
    throw ValidationError("unknown nonlinearity '" + name + "'");
}

void SynthSpec::validate() const {
    if (dims.empty()) throw ValidationError("synth spec needs at least one layer");
    for (const auto& d : dims) {
        if (d.d_out < 1 || d.d_in < 1) throw ValidationError("layer dims must be positive");
    }
    for (std::size_t i = 1; i < dims.size(); ++i) {
        if (dims[i].d_in != dims[i - 1].d_out) {
            throw ValidationError("layer " + std::to_string(i) + " D_in does not match previous D_out");
        }
    }
    if (chain.size() + 1 != dims.size()) {
        throw ValidationError("chain needs exactly one nonlinearity between consecutive layers");
    }
    if (rows < 2) throw ValidationError("synth spec needs at least 2 rows");
    if (!(min_std > 0.0) || max_std < min_std) throw ValidationError("need 0 < min_std <= max_std");
    if (correlation < 0.0 || correlation > 1.0) throw ValidationError("correlation must lie in [0, 1]");
    if (factors < 1) throw ValidationError("factors must be >= 1");
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    try {
        s.seed = j.value("seed", std::uint64_t{0});
        for (const auto& d : j.at("dims")) s.dims.push_back({d.at(0).get<Eigen::Index>(), d.at(1).get<Eigen::Index>()});
        s.rows = j.value("rows", s.rows);
        const auto dist = j.value("distribution", std::string("gaussian"));
        if (dist == "gaussian") s.distribution = ActDistribution::Gaussian;
        else if (dist == "mixture") s.distribution = ActDistribution::Mixture;
        else throw ValidationError("unknown distribution '" + dist + "'");
        s.mean_spread = j.value("mean_spread", s.mean_spread);
        s.min_std = j.value("min_std", s.min_std);
        s.max_std = j.value("max_std", s.max_std);
        s.correlation = j.value("correlation", s.correlation);
        s.factors = j.value("factors", s.factors);
        if (j.contains("chain")) {
            for (const auto& n : j.at("chain")) s.chain.push_back(parse_nonlinearity(n.get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const SynthSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["dims"] = nlohmann::json::array();
    for (const auto& d : spec.dims) j["dims"].push_back({d.d_out, d.d_in});
    j["rows"] = spec.rows;
    j["distribution"] = spec.distribution == ActDistribution::Gaussian ? "gaussian" : "mixture";
    j["mean_spread"] = spec.mean_spread;
    j["min_std"] = spec.min_std;
    j["max_std"] = spec.max_std;
    j["correlation"] = spec.correlation;
    j["factors"] = spec.factors;
    j["chain"] = nlohmann::json::array();
    for (auto n : spec.chain) j["chain"].push_back(to_string(n));
    return j;
}

SynthLayer generate_layer(const SynthSpec& spec, std::size_t index) {
    if (index >= spec.dims.size()) throw ValidationError("layer index out of range");
    const auto [d_out, d_in] = spec.dims[index];
    auto rng = rng_for(spec.seed, index);
    SynthLayer layer;
    layer.weight = gaussian_matrix(rng, d_out, d_in) / std::sqrt(static_cast<double>(d_in));

    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(std::log(spec.min_std), std::log(spec.max_std));
    Vector mean(d_in), stddev(d_in);
    for (Eigen::Index c = 0; c < d_in; ++c) {
        mean[c] = spec.mean_spread * normal(rng);
        stddev[c] = std::exp(uniform(rng));
    }
    // Unit-variance channels: sqrt(1 - rho) idiosyncratic + sqrt(rho) shared factors.
    Matrix loadings = gaussian_matrix(rng, d_in, spec.factors);
    loadings = loadings.rowwise().normalized();
    const Matrix latent = gaussian_matrix(rng, spec.rows, spec.factors);
    const Matrix noise = gaussian_matrix(rng, spec.rows, d_in);
    Matrix unit = std::sqrt(1.0 - spec.correlation) * noise + std::sqrt(spec.correlation) * (latent * loadings.transpose());

    if (spec.distribution == ActDistribution::Mixture) {
        // Heavy second component: 10% of rows with 4x spread and a shifted mean.
        std::bernoulli_distribution outlier(0.1);
        for (Eigen::Index n = 0; n < spec.rows; ++n) {
            if (outlier(rng)) unit.row(n) = 4.0 * unit.row(n).array() + 2.0;
        }
    }
    layer.act_fp = (unit.array().rowwise() * stddev.transpose().array()).rowwise() + mean.transpose().array();
    return layer;
}

Matrix apply_nonlinearity(const Matrix& x, Nonlinearity n) {
    switch (n) {
        case Nonlinearity::Identity: return x;
        case Nonlinearity::Gelu: return x.unaryExpr([](double v) { return gelu(v); });
        case Nonlinearity::Softmax: {
            Matrix out(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                const double m = x.row(i).maxCoeff();
                const auto e = (x.row(i).array() - m).exp();
                out.row(i) = e / e.sum();
            }
            return out;
        }
    }
    return x;
}

std::string to_string(ChainVariant v) {
    switch (v) {
        case ChainVariant::Rtn: return "rtn";
        case ChainVariant::AqerOnly: return "aqer_only";
        case ChainVariant::WqerOnly: return "wqer_only";
        case ChainVariant::Erq: return "erq";
    }
    return "?";
}

const ChainVariantResult& ChainReport::get(ChainVariant v) const {
    for (const auto& r : variants) {
        if (r.variant == v) return r;
    }
    throw Error("variant missing from chain report");
}

ChainReport run_chain(const SynthSpec& spec, const RunConfig& cfg) {
    spec.validate();
    cfg.validate();
    std::vector<SynthLayer> layers;
    for (std::size_t i = 0; i < spec.dims.size(); ++i) layers.push_back(generate_layer(spec, i));

    // Full-precision reference.
    Matrix x = layers.front().act_fp;
    Matrix y;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        y = x * layers[i].weight.transpose();
        if (i + 1 < layers.size()) x = apply_nonlinearity(y, spec.chain[i]);
    }
    const Matrix reference = y;

    ChainReport report;
    report.signal_power = reference.squaredNorm() / static_cast<double>(reference.rows());
    const std::pair<ChainVariant, Stages> variants[] = {
        {ChainVariant::Rtn, Stages::none()},
        {ChainVariant::AqerOnly, {true, false, false}},
        {ChainVariant::WqerOnly, {false, true, true}},
        {ChainVariant::Erq, Stages::all()},
    };
    for (const auto& [variant, stages] : variants) {
        RunConfig c = cfg;
        c.stages = stages;
        ChainVariantResult result;
        result.variant = variant;
        Matrix input = layers.front().act_fp;
        Matrix output;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            LayerInput in;
            in.layer_id = "layer" + std::to_string(i);
            in.weight = layers[i].weight;
            in.act_fp = input;
            in.act_quant = (i > 0 && spec.chain[i - 1] == Nonlinearity::Softmax) ? ActQuant::LogSqrt2 : ActQuant::Uniform;
            in.bits_w = cfg.bits_w.value_or(4);
            in.bits_a = cfg.bits_a.value_or(4);
            const auto prepared = prepare_layer(std::move(in));
            const auto out = run_layer(prepared, c);
            result.layers.push_back({out.report.layer_id, out.report.act_quant, out.report.mse_after_wqer});
            output = prepared.act_q * out.dequant.transpose();
            if (i + 1 < layers.size()) input = apply_nonlinearity(output, spec.chain[i]);
        }
        result.end_to_end_mse = (reference - output).squaredNorm() / static_cast<double>(reference.rows());
        report.variants.push_back(std::move(result));
    }
    return report;
}

nlohmann::json to_json(const ChainReport& report) {
    nlohmann::json j;
    j["signal_power"] = report.signal_power;
    j["variants"] = nlohmann::json::array();
    for (const auto& v : report.variants) {
        nlohmann::json jv;
        jv["variant"] = to_string(v.variant);
        jv["end_to_end_mse"] = v.end_to_end_mse;
        jv["layers"] = nlohmann::json::array();
        for (const auto& l : v.layers) {
            jv["layers"].push_back({{"layer_id", l.layer_id}, {"act_quant", to_string(l.act_quant)}, {"mse", l.mse}});
        }
        j["variants"].push_back(std::move(jv));
    }
    return j;
}

}  // namespace erq
