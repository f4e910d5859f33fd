#include "erq/oracle.hpp"

#include <limits>
#include <string>
#include <vector>

namespace erq {

BruteForceResult brute_force_rounding(const Vector& delta_down, const Vector& delta_up, const Matrix& m) {
    const Eigen::Index d = delta_down.size();
    if (delta_up.size() != d || m.rows() != d || m.cols() != d) throw ValidationError("brute force: dimension mismatch");
    if (d > kBruteForceMaxDim) {
        throw ValidationError("brute force limited to D <= " + std::to_string(kBruteForceMaxDim) + ", got " +
                              std::to_string(d));
    }
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < d; ++j) {
        if (delta_down[j] != delta_up[j]) free.push_back(j);
    }
    const std::size_t f = free.size();
    BruteForceResult best;
    best.best_proxy = std::numeric_limits<double>::infinity();
    Vector delta = delta_down;
    // Mask bit (f-1-i) selects ceil for free coordinate i, so counting upward
    // walks assignments in lexicographic order.
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << f); ++mask) {
        for (std::size_t i = 0; i < f; ++i) {
            const bool up = (mask >> (f - 1 - i)) & 1u;
            delta[free[i]] = up ? delta_up[free[i]] : delta_down[free[i]];
        }
        double value = 0.0;
        for (Eigen::Index a = 0; a < d; ++a) {
            double row = 0.0;
            for (Eigen::Index b = 0; b < d; ++b) row += m(a, b) * delta[b];
            value += delta[a] * row;
        }
        ++best.evaluated;
        if (value < best.best_proxy) {
            best.best_proxy = value;
            best.best_delta = delta;
        }
    }
    return best;
}

double mc_output_error(const Vector& delta, const Matrix& batch) {
    if (batch.cols() != delta.size()) throw ValidationError("mc_output_error: dimension mismatch");
    if (batch.rows() == 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index n = 0; n < batch.rows(); ++n) {
        double dot = 0.0;
        for (Eigen::Index j = 0; j < batch.cols(); ++j) dot += delta[j] * batch(n, j);
        acc += dot * dot;
    }
    return acc / static_cast<double>(batch.rows());
}

double layer_mse(const Matrix& w_fp, const Matrix& act_fp, const Matrix& w_dequant, const Matrix& act_q) {
    if (w_fp.rows() != w_dequant.rows() || w_fp.cols() != w_dequant.cols() || act_fp.rows() != act_q.rows() ||
        act_fp.cols() != act_q.cols() || w_fp.cols() != act_fp.cols()) {
        throw ValidationError("layer_mse: inconsistent shapes");
    }
    if (act_fp.rows() == 0) return 0.0;
    const Matrix diff = act_fp * w_fp.transpose() - act_q * w_dequant.transpose();
    return diff.squaredNorm() / static_cast<double>(act_fp.rows());
}

Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace erq
