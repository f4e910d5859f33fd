#include "erq/spd_solve.hpp"

#include <string>

namespace erq {

namespace {
// Pivots this far below the largest one are treated as a rank deficiency.
constexpr double kPivotTolerance = 1e-13;
}  // namespace

RidgeSystem::RidgeSystem(const Matrix& gram, double ridge) : dim_(gram.rows()) {
    if (gram.rows() != gram.cols()) throw ValidationError("ridge system matrix must be square");
    if (ridge < 0.0) throw ValidationError("ridge strength must be non-negative");
    if (dim_ == 0) return;
    Eigen::MatrixXd a = 0.5 * (gram + gram.transpose());
    a.diagonal().array() += ridge;
    llt_.compute(a);
    bool ok = llt_.info() == Eigen::Success;
    if (ok) {
        const auto d = llt_.matrixLLT().diagonal().cwiseAbs2();
        ok = d.minCoeff() > kPivotTolerance * d.maxCoeff();
    }
    if (!ok) {
        throw NumericalError("ridge system is not positive definite (lambda = " + std::to_string(ridge) +
                             "); use a regularization strength > 0");
    }
}

Eigen::MatrixXd RidgeSystem::solve(const Eigen::MatrixXd& rhs) const {
    if (dim_ == 0) return Eigen::MatrixXd(0, rhs.cols());
    return llt_.solve(rhs);
}

Vector RidgeSystem::solve(const Vector& rhs) const {
    if (dim_ == 0) return Vector(0);
    return llt_.solve(rhs);
}

}  // namespace erq
