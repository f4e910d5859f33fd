#pragma once

#include "erq/common.hpp"

#include <Eigen/Cholesky>

namespace erq {

// Cholesky factorization of (A + ridge I), shared by any number of right-hand sides.
class RidgeSystem {
public:
    RidgeSystem() = default;
    RidgeSystem(const Matrix& gram, double ridge);

    // Solves (A + ridge I) X = rhs for each column of rhs.
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
    Vector solve(const Vector& rhs) const;

    Eigen::Index dim() const { return dim_; }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::Index dim_ = 0;
};

}  // namespace erq
