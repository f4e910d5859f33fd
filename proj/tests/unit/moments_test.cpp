#include "erq/moments.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace erq;

namespace {

double rel_max_diff(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

struct TwoPass {
    Vector mu;
    Matrix sigma;
    Matrix raw2;
};

// Textbook two-pass estimate with explicit loops.
TwoPass two_pass(const Matrix& x) {
    const auto n = x.rows();
    const auto d = x.cols();
    TwoPass out{Vector::Zero(d), Matrix::Zero(d, d), Matrix::Zero(d, d)};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) out.mu[j] += x(i, j);
    out.mu /= static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) {
                out.sigma(a, b) += (x(i, a) - out.mu[a]) * (x(i, b) - out.mu[b]);
                out.raw2(a, b) += x(i, a) * x(i, b);
            }
    out.sigma /= static_cast<double>(n - 1);
    out.raw2 /= static_cast<double>(n);
    return out;
}

}  // namespace

TEST(Moments, HandCase) {
    Matrix x(2, 2);
    x << 1, 0, -1, 0;
    const auto m = accumulate_moments(x);
    EXPECT_EQ(m.n, 2u);
    EXPECT_EQ(m.mu, Vector::Zero(2));
    EXPECT_EQ(m.sigma, (Matrix(2, 2) << 2, 0, 0, 0).finished());
    EXPECT_EQ(m.raw2, (Matrix(2, 2) << 1, 0, 0, 0).finished());
}

TEST(Moments, IdenticalRows) {
    const Vector v = (Vector(3) << 0.5, -2.0, 3.0).finished();
    const Matrix x = v.transpose().replicate(10, 1);
    const auto m = accumulate_moments(x);
    EXPECT_LT(m.sigma.cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((m.mu - v).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT(rel_max_diff(m.raw2, v * v.transpose()), 1e-14);
}

TEST(Moments, StandardNormalConcentration) {
    std::mt19937_64 rng(31);
    const auto m = accumulate_moments(gen::gaussian_matrix(rng, 100000, 4));
    EXPECT_LT((m.sigma - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Moments, FewerThanTwoRowsRejected) {
    EXPECT_THROW(accumulate_moments(Matrix::Ones(1, 3)), ValidationError);
    MomentAccumulator acc(3);
    EXPECT_THROW(acc.finish(), ValidationError);
}

TEST(Moments, StreamingMatchesTwoPass) {
    std::mt19937_64 rng(32);
    for (Eigen::Index n : {2, 3, 511, 512, 513, 1500, 5000}) {
        const Matrix x = gen::gaussian_matrix(rng, n, 5, 3.0, 2.0);
        const auto ref = two_pass(x);
        const auto m = accumulate_moments(x);
        EXPECT_LT(rel_max_diff(m.mu, ref.mu), 1e-10) << n;
        EXPECT_LT(rel_max_diff(m.sigma, ref.sigma), 1e-10) << n;
        EXPECT_LT(rel_max_diff(m.raw2, ref.raw2), 1e-10) << n;

        MomentAccumulator rows(5);
        for (Eigen::Index i = 0; i < n; ++i) rows.add_row({x.row(i).data(), 5});
        const auto r = rows.finish();
        EXPECT_LT(rel_max_diff(r.sigma, ref.sigma), 1e-10) << n;
        EXPECT_LT(rel_max_diff(r.raw2, ref.raw2), 1e-10) << n;
    }
}

TEST(Moments, MillionRowsStayAccurate) {
    std::mt19937_64 rng(33);
    // Large offset relative to spread stresses cancellation in naive raw sums.
    const Matrix x = gen::gaussian_matrix(rng, 1000000, 2, 1000.0, 0.01);
    const auto ref = two_pass(x);
    const auto m = accumulate_moments(x);
    EXPECT_LT(rel_max_diff(m.sigma, ref.sigma), 1e-10);
    EXPECT_LT(rel_max_diff(m.raw2, ref.raw2), 1e-10);
}

TEST(Moments, MergeEqualsSinglePass) {
    std::mt19937_64 rng(34);
    const Matrix x = gen::gaussian_matrix(rng, 300, 4, 1.0, 1.5);
    MomentAccumulator a(4), b(4), c(4);
    a.add_rows(x.topRows(17));
    b.add_rows(x.middleRows(17, 200));
    c.add_rows(x.bottomRows(83));
    MomentAccumulator left = a;
    left.merge(b);
    left.merge(c);
    MomentAccumulator right = c;
    right.merge(b);
    right.merge(a);
    const auto whole = accumulate_moments(x);
    EXPECT_EQ(left.count(), 300u);
    EXPECT_LT(rel_max_diff(left.finish().sigma, whole.sigma), 1e-12);
    EXPECT_LT(rel_max_diff(right.finish().raw2, whole.raw2), 1e-12);

    MomentAccumulator empty(4);
    empty.merge(a);
    EXPECT_EQ(empty.count(), 17u);
}

TEST(Moments, RowOrderInvariance) {
    std::mt19937_64 rng(35);
    const Matrix x = gen::gaussian_matrix(rng, 777, 6);
    std::vector<Eigen::Index> perm(777);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(777, 6);
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.row(i) = x.row(perm[i]);
    const auto a = accumulate_moments(x);
    const auto b = accumulate_moments(shuffled);
    EXPECT_LT(rel_max_diff(a.sigma, b.sigma), 1e-12);
    EXPECT_LT(rel_max_diff(a.raw2, b.raw2), 1e-12);
    EXPECT_EQ(b.sigma, b.sigma.transpose());
    EXPECT_EQ(b.raw2, b.raw2.transpose());
}

TEST(Moments, RawMomentIdentity) {
    std::mt19937_64 rng(36);
    const Matrix x = gen::gaussian_matrix(rng, 400, 5, -2.0, 3.0);
    const auto m = accumulate_moments(x);
    const double n = static_cast<double>(m.n);
    const Matrix rebuilt = m.sigma * (n - 1) / n + m.mu * m.mu.transpose();
    EXPECT_LT(rel_max_diff(rebuilt, m.raw2), 1e-9);
    EXPECT_LT(rel_max_diff(m.proxy_matrix(), m.mu * m.mu.transpose() + m.sigma), 1e-15);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m.raw2).eigenvalues().minCoeff(), -1e-12);
}

TEST(SliceMoments, IdentityBlocks) {
    MomentSet m{Vector::Zero(4), Matrix::Identity(4, 4), Matrix::Identity(4, 4), 10};
    const std::vector<Eigen::Index> s{0, 1}, r{2, 3};
    const auto sm = slice_moments(m, s, r);
    EXPECT_EQ(sm.e_ss, Matrix::Identity(2, 2));
    EXPECT_EQ(sm.e_sr, Matrix::Zero(2, 2));
    EXPECT_EQ(sm.e_rr, Matrix::Identity(2, 2));
}

TEST(SliceMoments, BlocksMatchDirectComputation) {
    std::mt19937_64 rng(37);
    const Matrix x = gen::gaussian_matrix(rng, 50, 6, 0.5, 1.0);
    Matrix direct = Matrix::Zero(6, 6);
    for (Eigen::Index n = 0; n < 50; ++n)
        for (Eigen::Index i = 0; i < 6; ++i)
            for (Eigen::Index j = 0; j < 6; ++j) direct(i, j) += x(n, i) * x(n, j) / 50.0;
    const std::vector<Eigen::Index> s{1, 4, 5}, r{0, 2};
    const auto sm = cross_moments(x, s, r);
    for (std::size_t a = 0; a < s.size(); ++a) {
        for (std::size_t b = 0; b < s.size(); ++b) EXPECT_NEAR(sm.e_ss(a, b), direct(s[a], s[b]), 1e-12);
        for (std::size_t b = 0; b < r.size(); ++b) EXPECT_NEAR(sm.e_sr(a, b), direct(s[a], r[b]), 1e-12);
    }
    for (std::size_t a = 0; a < r.size(); ++a)
        for (std::size_t b = 0; b < r.size(); ++b) EXPECT_NEAR(sm.e_rr(a, b), direct(r[a], r[b]), 1e-12);
    const auto full = accumulate_moments(x);
    for (std::size_t a = 0; a < s.size(); ++a) EXPECT_DOUBLE_EQ(sm.mu_s[a], full.mu[s[a]]);
}

TEST(SliceMoments, RejectsOverlapAndRange) {
    MomentSet m{Vector::Zero(4), Matrix::Identity(4, 4), Matrix::Identity(4, 4), 10};
    const std::vector<Eigen::Index> s{0, 1}, overlap{1, 2}, out_of_range{4};
    EXPECT_THROW(slice_moments(m, s, overlap), ValidationError);
    EXPECT_THROW(slice_moments(m, s, out_of_range), ValidationError);
}

TEST(ErrorCrossMoment, ZeroWhenExact) {
    std::mt19937_64 rng(38);
    const Matrix x = gen::gaussian_matrix(rng, 20, 3);
    EXPECT_EQ(error_cross_moment(x, x), Matrix::Zero(3, 3));
}

TEST(ErrorCrossMoment, MatchesLoops) {
    std::mt19937_64 rng(39);
    const Matrix fp = gen::gaussian_matrix(rng, 30, 3);
    const Matrix q = fp + gen::gaussian_matrix(rng, 30, 3, 0.0, 0.1);
    Matrix ref = Matrix::Zero(3, 3);
    for (Eigen::Index n = 0; n < 30; ++n)
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 3; ++j) ref(i, j) += (q(n, i) - fp(n, i)) * q(n, j) / 30.0;
    EXPECT_LT(rel_max_diff(error_cross_moment(fp, q), ref), 1e-13);
}
