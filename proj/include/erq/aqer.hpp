#pragma once

#include "erq/common.hpp"

namespace erq {

// Activation quantization error reduction: a ridge-regression update of the
// full-precision weight that absorbs the error of the quantized input,
//
//   dW* = -W E[dx xbar^T] (E[xbar xbar^T] + lambda1 I)^-1,   W <- W + dW*
//
// with expectations taken as 1/N sums over the calibration batch.
struct AqerResult {
    Matrix delta_w;
    Matrix updated_w;
};

inline constexpr double kDefaultLambda = 1e4;

AqerResult solve_aqer(const Matrix& weight, const Matrix& act_fp, const Matrix& act_q, double lambda1);

// Same solve from precomputed moments: err_cross = E[dx xbar^T], raw2 = E[xbar xbar^T].
AqerResult solve_aqer_from_moments(const Matrix& weight, const Matrix& err_cross, const Matrix& raw2, double lambda1);

// (1/N) sum_n ||dW xbar_n + W dx_n||^2 + lambda1 ||dW||_F^2
double aqer_objective(const Matrix& weight, const Matrix& delta_w, const Matrix& act_fp, const Matrix& act_q,
                      double lambda1);

}  // namespace erq
