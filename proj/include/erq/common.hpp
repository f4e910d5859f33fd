#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace erq {

// All arithmetic runs in double after load; files on disk hold float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using CodeMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CodeVector = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input files, manifests, configs and shape mismatches.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Singular systems and other numerical breakdowns.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace erq
