#pragma once

#include "erq/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace erq {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

using GradientFn = std::function<Vector(const Vector&, const Matrix&)>;

struct VerifyOptions {
    std::uint64_t seed = 0;
    GradientFn gradient;  // defaults to proxy_gradient; swappable for fault injection
    int brute_force_dim = 12;
};

SuiteResult verify_quantizers(const VerifyOptions& opt);
SuiteResult verify_proxy_fidelity(const VerifyOptions& opt);
SuiteResult verify_proxy_gradient(const VerifyOptions& opt);
SuiteResult verify_aqer_optimality(const VerifyOptions& opt);
SuiteResult verify_rounding_refinement(const VerifyOptions& opt);
SuiteResult verify_ridge_optimality(const VerifyOptions& opt);

std::vector<SuiteResult> run_verify_suites(const VerifyOptions& opt);

nlohmann::json to_json(const SuiteResult& r);

}  // namespace erq
