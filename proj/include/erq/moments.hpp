#pragma once

#include "erq/common.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace erq {

// Empirical moments of a set of activation rows.
//   mu    = (1/N) sum x
//   sigma = 1/(N-1) sum (x - mu)(x - mu)^T      (unbiased)
//   raw2  = (1/N) sum x x^T
struct MomentSet {
    Vector mu;
    Matrix sigma;
    Matrix raw2;
    std::size_t n = 0;

    // mu mu^T + sigma, the matrix of the Gaussian output-error proxy.
    Matrix proxy_matrix() const;
};

// Streaming accumulator (Welford/Chan). Partial accumulators over disjoint row
// shards merge associatively.
class MomentAccumulator {
public:
    explicit MomentAccumulator(Eigen::Index dim = 0);

    void add_row(std::span<const double> row);
    // Adds a block of rows with one centered product, then merges.
    void add_rows(const Matrix& rows);
    void merge(const MomentAccumulator& other);

    std::size_t count() const { return n_; }
    Eigen::Index dim() const { return mean_.size(); }

    // Throws ValidationError when fewer than two rows were seen.
    MomentSet finish() const;

private:
    std::size_t n_ = 0;
    Vector mean_;
    Matrix comoment_;  // sum of centered outer products
};

// Batch entry point: row chunks are reduced pairwise.
MomentSet accumulate_moments(const Matrix& rows);

// Blocks of the raw second moment for a column split (s-part quantized now,
// r-part still full precision).
struct SliceMoments {
    std::vector<Eigen::Index> s_indices;
    std::vector<Eigen::Index> r_indices;
    Matrix e_ss;
    Matrix e_sr;
    Matrix e_rr;
    Vector mu_s;
    Matrix proxy_ss;  // mu_s mu_s^T + sigma_ss
};

// Extracts the blocks from a precomputed MomentSet; never re-sums rows.
SliceMoments slice_moments(const MomentSet& m, std::span<const Eigen::Index> s, std::span<const Eigen::Index> r);

SliceMoments cross_moments(const Matrix& batch, std::span<const Eigen::Index> s, std::span<const Eigen::Index> r);

// (1/N) sum (x_q - x_fp) x_q^T, i.e. the empirical E[dx xbar^T].
Matrix error_cross_moment(const Matrix& fp, const Matrix& quantized);

}  // namespace erq
