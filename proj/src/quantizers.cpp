#include "erq/quantizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace erq {

namespace {

constexpr int kGridSteps = 140;  // alpha = 0.500, 0.505, ..., 1.200

double clamp_code(double v, std::int32_t max_code) {
    if (!(v >= 0.0)) return 0.0;  // also catches NaN
    return std::min(v, static_cast<double>(max_code));
}

CalibrationResult degenerate_uniform(std::span<const double> x, int bits) {
    UniformParams p{1.0, 0, bits};
    if (!x.empty()) {
        p.zero_point = static_cast<std::int32_t>(clamp_code(round_half_even(-x.front()), p.max_code()));
    }
    return {p, quant_mse(x, p), true};
}

}  // namespace

double round_half_even(double x) { return std::nearbyint(x); }

double LogSqrt2Params::dequant(std::int32_t code) const {
    const double base = std::ldexp(scale, -((code + 1) / 2));
    return (code % 2 == 1) ? base * std::numbers::sqrt2 : base;
}

double LogSqrt2Params::floor_value() const {
    return scale * std::exp2(-static_cast<double>(max_code()) / 2.0);
}

std::int32_t quantize_one(double x, const UniformParams& p) {
    const double v = round_half_even(x / p.scale) + static_cast<double>(p.zero_point);
    return static_cast<std::int32_t>(clamp_code(v, p.max_code()));
}

std::int32_t quantize_one(double x, const LogSqrt2Params& p) {
    const double xc = std::max(x, p.floor_value());
    if (!(xc > 0.0)) return p.max_code();
    return static_cast<std::int32_t>(clamp_code(round_half_even(-2.0 * std::log2(xc / p.scale)), p.max_code()));
}

Quantized quantize_uniform(std::span<const double> x, const UniformParams& p) {
    Quantized q{CodeVector(static_cast<Eigen::Index>(x.size())), Vector(static_cast<Eigen::Index>(x.size()))};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto c = quantize_one(x[i], p);
        q.codes[static_cast<Eigen::Index>(i)] = c;
        q.dequant[static_cast<Eigen::Index>(i)] = p.dequant(c);
    }
    return q;
}

Quantized quantize_log_sqrt2(std::span<const double> x, const LogSqrt2Params& p) {
    Quantized q{CodeVector(static_cast<Eigen::Index>(x.size())), Vector(static_cast<Eigen::Index>(x.size()))};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto c = quantize_one(x[i], p);
        q.codes[static_cast<Eigen::Index>(i)] = c;
        q.dequant[static_cast<Eigen::Index>(i)] = p.dequant(c);
    }
    return q;
}

double fake_quant(double x, const QuantParams& p) {
    return std::visit([x](const auto& q) { return q.dequant(quantize_one(x, q)); }, p);
}

std::vector<double> scale_grid() {
    std::vector<double> alphas;
    alphas.reserve(kGridSteps + 1);
    for (int i = 0; i <= kGridSteps; ++i) alphas.push_back(static_cast<double>(100 + i) / 200.0);
    return alphas;
}

double quant_mse(std::span<const double> x, const QuantParams& p) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (double v : x) {
        const double e = fake_quant(v, p) - v;
        acc += e * e;
    }
    return acc / static_cast<double>(x.size());
}

CalibrationResult calibrate_params(std::span<const double> x, QuantFamily family, int bits) {
    if (family == QuantFamily::Uniform) {
        if (x.empty()) return degenerate_uniform(x, bits);
        const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
        const double range = *hi - *lo;
        if (!(range > 0.0)) return degenerate_uniform(x, bits);
        const UniformParams proto{1.0, 0, bits};
        const double s_max = range / static_cast<double>(proto.max_code());

        CalibrationResult best{proto, std::numeric_limits<double>::infinity(), false};
        for (double alpha : scale_grid()) {
            UniformParams p{alpha * s_max, 0, bits};
            p.zero_point = static_cast<std::int32_t>(clamp_code(round_half_even(-*lo / p.scale), p.max_code()));
            const double mse = quant_mse(x, p);
            if (mse <= best.mse) best = {p, mse, false};  // ties go to the larger scale
        }
        return best;
    }

    const double hi = x.empty() ? 0.0 : *std::max_element(x.begin(), x.end());
    if (!(hi > 0.0)) {
        const LogSqrt2Params p{1.0, bits};
        return {p, quant_mse(x, p), true};
    }
    CalibrationResult best{LogSqrt2Params{hi, bits}, std::numeric_limits<double>::infinity(), false};
    for (double alpha : scale_grid()) {
        const LogSqrt2Params p{alpha * hi, bits};
        const double mse = quant_mse(x, p);
        if (mse <= best.mse) best = {p, mse, false};
    }
    return best;
}

QuantScheme calibrate_scale(const Matrix& x, QuantFamily family, int bits, Granularity granularity) {
    QuantScheme scheme{family, granularity, bits, {}, false};
    if (granularity == Granularity::PerTensor) {
        auto r = calibrate_params(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), family, bits);
        scheme.params.push_back(r.params);
        scheme.degenerate = r.degenerate;
        return scheme;
    }
    scheme.params.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        auto r = calibrate_params(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())),
                                  family, bits);
        scheme.params.push_back(r.params);
        scheme.degenerate = scheme.degenerate || r.degenerate;
    }
    return scheme;
}

Matrix apply_scheme(const Matrix& x, const QuantScheme& scheme) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto& p = scheme.channel(static_cast<std::size_t>(i));
        for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = fake_quant(x(i, j), p);
    }
    return out;
}

CodeMatrix codes_for(const Matrix& x, const QuantScheme& scheme) {
    CodeMatrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto& p = scheme.channel(static_cast<std::size_t>(i));
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            out(i, j) = std::visit([v = x(i, j)](const auto& q) { return quantize_one(v, q); }, p);
        }
    }
    return out;
}

}  // namespace erq
