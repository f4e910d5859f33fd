#pragma once

#include "erq/common.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace erq {

enum class QuantFamily { Uniform, LogSqrt2 };
enum class Granularity { PerChannel, PerTensor };

// Affine quantizer: code = clip(round(x/s) + z, 0, 2^b - 1), dequant = s (code - z).
struct UniformParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;
    int bits = 8;

    std::int32_t max_code() const { return static_cast<std::int32_t>((std::int64_t{1} << bits) - 1); }
    double dequant(std::int32_t code) const { return scale * static_cast<double>(code - zero_point); }
    bool operator==(const UniformParams&) const = default;
};

// Geometric quantizer with ratio sqrt(2) between adjacent codes; dequant = s 2^(-code/2).
struct LogSqrt2Params {
    double scale = 1.0;
    int bits = 4;

    std::int32_t max_code() const { return static_cast<std::int32_t>((std::int64_t{1} << bits) - 1); }
    double dequant(std::int32_t code) const;
    // Inputs below this are clamped before taking the log.
    double floor_value() const;
    bool operator==(const LogSqrt2Params&) const = default;
};

using QuantParams = std::variant<UniformParams, LogSqrt2Params>;

struct QuantScheme {
    QuantFamily family = QuantFamily::Uniform;
    Granularity granularity = Granularity::PerTensor;
    int bits = 8;
    std::vector<QuantParams> params;  // one per row (per-channel) or exactly one (per-tensor)
    bool degenerate = false;          // some channel had zero dynamic range

    const QuantParams& channel(std::size_t row) const {
        return granularity == Granularity::PerTensor ? params.front() : params.at(row);
    }
};

struct Quantized {
    CodeVector codes;
    Vector dequant;
};

// Round half to even.
double round_half_even(double x);

std::int32_t quantize_one(double x, const UniformParams& p);
std::int32_t quantize_one(double x, const LogSqrt2Params& p);

Quantized quantize_uniform(std::span<const double> x, const UniformParams& p);
Quantized quantize_log_sqrt2(std::span<const double> x, const LogSqrt2Params& p);

// Dequantized value of x under either parameter family.
double fake_quant(double x, const QuantParams& p);

// Alpha multipliers applied to the max-range scale during grid search.
std::vector<double> scale_grid();

// Mean squared quantization error of x under p.
double quant_mse(std::span<const double> x, const QuantParams& p);

struct CalibrationResult {
    QuantParams params;
    double mse = 0.0;
    bool degenerate = false;
};

// Grid-searched scale for one channel (or one tensor flattened to a span).
CalibrationResult calibrate_params(std::span<const double> x, QuantFamily family, int bits);

// Per-channel: one parameter set per row of x. Per-tensor: one over all elements.
QuantScheme calibrate_scale(const Matrix& x, QuantFamily family, int bits, Granularity granularity);

// Elementwise fake quantization of a matrix under a scheme.
Matrix apply_scheme(const Matrix& x, const QuantScheme& scheme);
CodeMatrix codes_for(const Matrix& x, const QuantScheme& scheme);

}  // namespace erq
