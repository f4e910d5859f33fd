#pragma once

#include "erq/common.hpp"
#include "erq/moments.hpp"
#include "erq/quantizers.hpp"
#include "erq/spd_solve.hpp"

#include <cstdint>
#include <vector>

namespace erq {

// Weight quantization error reduction.
//
// Each output channel is quantized in rounds. A round takes the leading
// ceil(|remaining| / 2) unquantized columns, rounds them to nearest, refines
// the floor/ceil choices against the Gaussian proxy
//
//   L(d) = d (mu mu^T + Sigma) d^T
//
// and then moves the still full-precision remainder by the ridge solution
//
//   dW_r* = -d E[x_s x_r^T] (E[x_r x_r^T] + lambda2 I)^-1
//
// to absorb what is left. Errors follow d = Wbar - W throughout: a floor
// rounding error is <= 0, a ceil rounding error is >= 0.

struct WqerConfig {
    int k = 1;             // flips per refinement step
    int max_iter = 100;    // refinement steps per round
    double lambda2 = 1e4;  // ridge strength for the remainder correction
    bool rounding = true;  // Rounding Refinement stage
    bool ridge = true;     // remainder correction stage
};

double proxy_value(const Vector& delta, const Matrix& m);
Vector proxy_gradient(const Vector& delta, const Matrix& m);

// Indices whose gradient agrees in sign with the current error (product >= 0),
// ranked by |gradient|; at most k of them, ties to the lower index. Entries
// with eligible[j] == false are never returned.
std::vector<Eigen::Index> select_flip_set(const Vector& delta, const Vector& grad, int k,
                                          const std::vector<char>& eligible = {});

struct RoundingState {
    CodeVector code_down;
    CodeVector code_up;
    Vector delta_down;  // dequant(code_down) - w
    Vector delta_up;    // dequant(code_up) - w
    std::vector<char> use_up;
    Vector delta;

    // Round-to-nearest start for the weights w under channel quantizer p.
    static RoundingState nearest(const Vector& w, const UniformParams& p);
    // Explicit candidates; starts from whichever candidate has the smaller |error|.
    static RoundingState from_candidates(const Vector& delta_down, const Vector& delta_up);

    Eigen::Index size() const { return delta.size(); }
    // False when both roundings coincide (clip saturation or an exact lattice point).
    bool flippable(Eigen::Index j) const { return delta_down[j] != delta_up[j]; }
    std::vector<char> eligibility() const;
    void flip(Eigen::Index j);
    CodeVector codes() const;
};

struct RefinementResult {
    RoundingState state;
    std::vector<double> committed_proxy;  // starts with the round-to-nearest proxy
    int steps = 0;                        // committed overturn steps
};

RefinementResult rounding_refinement(RoundingState state, const Matrix& m, const WqerConfig& cfg);

// Ridge correction for the full-precision remainder given the s-part error.
Vector ridge_correct_remainder(const Vector& delta_s, const SliceMoments& slice, double lambda2);
Vector ridge_correct_remainder(const Vector& delta_s, const Matrix& e_sr, const RidgeSystem& rr_system);

// Per-round statistics for one slice of the column order; shared by all channels.
struct SliceEntry {
    Eigen::Index begin = 0;
    Eigen::Index s_size = 0;
    Eigen::Index r_size = 0;
    Matrix proxy;  // mu_s mu_s^T + Sigma_ss
    Matrix e_ss;   // 1/N moments
    Matrix e_sr;
    RidgeSystem rr_system;  // E_rr + lambda2 I, factored; empty without ridge
};

// Sizes of the quantized slices for a row of length d_in: ceil-half recurrence.
std::vector<Eigen::Index> partition_sizes(Eigen::Index d_in);

class SlicePlan {
public:
    SlicePlan(const MomentSet& moments, const WqerConfig& cfg);

    const std::vector<SliceEntry>& slices() const { return slices_; }
    // Cache lookup keyed by the slice's column range.
    const SliceEntry& find(Eigen::Index begin, Eigen::Index s_size) const;
    Eigen::Index dim() const { return dim_; }

private:
    Eigen::Index dim_ = 0;
    std::vector<SliceEntry> slices_;
};

struct IterationTrace {
    int iteration = 0;
    Eigen::Index slice_size = 0;
    double proxy_before = 0.0;  // round-to-nearest
    double proxy_after = 0.0;   // after refinement
    double mse = 0.0;           // empirical (1/N) sum (d . x_s)^2 after refinement
};

struct ChannelResult {
    CodeVector codes;
    Vector dequant;
    std::vector<IterationTrace> trace;
    std::vector<Eigen::Index> emitted;  // column indices in emission order
};

ChannelResult wqer_channel(const Vector& w, const UniformParams& p, const SlicePlan& plan, const WqerConfig& cfg);

struct WqerLayerResult {
    CodeMatrix codes;
    Matrix dequant;
    std::vector<std::vector<IterationTrace>> traces;
};

// weight: post-Aqer full-precision weight; scheme: per-channel uniform, fixed
// for all rounds; act_q: quantized calibration batch.
WqerLayerResult wqer_layer(const Matrix& weight, const QuantScheme& scheme, const Matrix& act_q,
                           const WqerConfig& cfg, int jobs = 1);
WqerLayerResult wqer_layer(const Matrix& weight, const QuantScheme& scheme, const SlicePlan& plan,
                           const WqerConfig& cfg, int jobs = 1);

}  // namespace erq
