#pragma once

#include "erq/common.hpp"

#include <cstdint>
#include <functional>

namespace erq {

// Reference computations used to check the fast paths. None of these call
// into the Wqer/Aqer implementations.

inline constexpr int kBruteForceMaxDim = 20;

struct BruteForceResult {
    Vector best_delta;
    double best_proxy = 0.0;
    std::uint64_t evaluated = 0;
};

// Exhaustive search over floor/ceil assignments minimizing d M d^T. Coordinates
// whose candidates coincide are fixed. Ties go to the lexicographically first
// assignment (coordinate 0 most significant, floor before ceil).
BruteForceResult brute_force_rounding(const Vector& delta_down, const Vector& delta_up, const Matrix& m);

// (1/N) sum_n (delta . x_n)^2 over the rows of batch.
double mc_output_error(const Vector& delta, const Matrix& batch);

// (1/N) sum_n ||W_fp x_n - Wbar xbar_n||^2
double layer_mse(const Matrix& w_fp, const Matrix& act_fp, const Matrix& w_dequant, const Matrix& act_q);

// Central differences per coordinate.
Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h);

}  // namespace erq
