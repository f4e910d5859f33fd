#include "erq/aqer.hpp"

#include "erq/moments.hpp"
#include "erq/spd_solve.hpp"

namespace erq {

namespace {

void check_shapes(const Matrix& weight, const Matrix& act_fp, const Matrix& act_q) {
    if (act_fp.rows() != act_q.rows() || act_fp.cols() != act_q.cols()) {
        throw ValidationError("full-precision and quantized batches differ in shape");
    }
    if (weight.cols() != act_fp.cols()) throw ValidationError("weight D_in does not match activation width");
}

}  // namespace

AqerResult solve_aqer(const Matrix& weight, const Matrix& act_fp, const Matrix& act_q, double lambda1) {
    check_shapes(weight, act_fp, act_q);
    if (act_q.rows() < 2) throw ValidationError("Aqer needs at least 2 calibration rows");
    const double inv_n = 1.0 / static_cast<double>(act_q.rows());
    const Matrix raw2 = (act_q.transpose() * act_q) * inv_n;
    return solve_aqer_from_moments(weight, error_cross_moment(act_fp, act_q), raw2, lambda1);
}

AqerResult solve_aqer_from_moments(const Matrix& weight, const Matrix& err_cross, const Matrix& raw2, double lambda1) {
    if (err_cross.rows() != weight.cols() || raw2.rows() != weight.cols()) {
        throw ValidationError("moment dimensions do not match weight D_in");
    }
    const RidgeSystem system(raw2, lambda1);
    // (G + lambda I) dW^T = -C^T W^T, one factorization for all D_out columns.
    const Eigen::MatrixXd rhs = -(err_cross.transpose() * weight.transpose());
    AqerResult out;
    out.delta_w = system.solve(rhs).transpose();
    out.updated_w = weight + out.delta_w;
    return out;
}

double aqer_objective(const Matrix& weight, const Matrix& delta_w, const Matrix& act_fp, const Matrix& act_q,
                      double lambda1) {
    check_shapes(weight, act_fp, act_q);
    const Matrix residual = act_q * delta_w.transpose() + (act_q - act_fp) * weight.transpose();
    return residual.squaredNorm() / static_cast<double>(act_q.rows()) + lambda1 * delta_w.squaredNorm();
}

}  // namespace erq
