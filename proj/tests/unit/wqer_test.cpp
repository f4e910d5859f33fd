#include "erq/oracle.hpp"
#include "erq/wqer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace erq;

TEST(Proxy, ZeroAndIsotropic) {
    const Matrix m = Matrix::Identity(3, 3);
    EXPECT_EQ(proxy_value(Vector::Zero(3), m), 0.0);
    const Vector d = (Vector(3) << 1.0, -2.0, 0.5).finished();
    EXPECT_DOUBLE_EQ(proxy_value(d, m), 5.25);
    EXPECT_EQ(proxy_gradient(Vector::Zero(3), m), Vector::Zero(3));
    EXPECT_EQ(proxy_gradient(d, m), 2.0 * d);
}

TEST(Proxy, MeanPlusCovarianceExpansion) {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector d = gen::gaussian_vector(rng, 6);
        const Vector mu = gen::gaussian_vector(rng, 6);
        const Matrix sigma = gen::random_spd(rng, 6);
        const double expected = std::pow(mu.dot(d), 2) + d.dot(sigma * d);
        EXPECT_NEAR(proxy_value(d, mu * mu.transpose() + sigma), expected, 1e-12 * (1.0 + expected));
    }
}

TEST(Proxy, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(52);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = gen::uniform_int(rng, 1, 10);
        const Vector d = gen::gaussian_vector(rng, n);
        const Matrix m = gen::random_spd(rng, n);
        const Vector fd = finite_diff_gradient([&](const Vector& v) { return proxy_value(v, m); }, d, 1e-5);
        EXPECT_LT((fd - proxy_gradient(d, m)).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(FlipSet, SignFilterAndTopK) {
    const Vector grad = (Vector(3) << 3.0, -2.0, 1.0).finished();
    const Vector delta = Vector::Ones(3);
    EXPECT_EQ(select_flip_set(delta, grad, 1), std::vector<Eigen::Index>{0});
    EXPECT_EQ(select_flip_set(delta, grad, 2), (std::vector<Eigen::Index>{0, 2}));
    EXPECT_EQ(select_flip_set(delta, grad, 5), (std::vector<Eigen::Index>{0, 2}));
    EXPECT_TRUE(select_flip_set(delta, grad, 0).empty());
    EXPECT_TRUE(select_flip_set(-delta, (Vector(3) << 3.0, 2.0, 1.0).finished(), 3).empty());
}

TEST(FlipSet, TiesAndEligibility) {
    const Vector grad = (Vector(4) << 1.0, 2.0, 2.0, -2.0).finished();
    const Vector delta = (Vector(4) << 1.0, 1.0, 1.0, -1.0).finished();
    EXPECT_EQ(select_flip_set(delta, grad, 1), std::vector<Eigen::Index>{1});
    EXPECT_EQ(select_flip_set(delta, grad, 3), (std::vector<Eigen::Index>{1, 2, 3}));
    EXPECT_EQ(select_flip_set(delta, grad, 1, {1, 0, 1, 1}), std::vector<Eigen::Index>{2});
    // grad * delta == 0 counts as agreeing in sign.
    EXPECT_EQ(select_flip_set(Vector::Zero(2), (Vector(2) << 0.5, -1.0).finished(), 2),
              (std::vector<Eigen::Index>{1, 0}));
}

TEST(RoundingState, NearestStartAndFlip) {
    const UniformParams p{0.5, 2, 3};
    const Vector w = (Vector(4) << 0.2, -0.4, 0.5, 100.0).finished();
    auto s = RoundingState::nearest(w, p);
    EXPECT_EQ(s.codes(), (CodeVector(4) << 2, 1, 3, 7).finished());
    EXPECT_DOUBLE_EQ(s.delta_down[0], -0.2);
    EXPECT_DOUBLE_EQ(s.delta_up[0], 0.3);
    EXPECT_DOUBLE_EQ(s.delta[0], -0.2);
    EXPECT_TRUE(s.flippable(0));
    EXPECT_FALSE(s.flippable(2));  // exact lattice point
    EXPECT_FALSE(s.flippable(3));  // clipped
    s.flip(0);
    EXPECT_EQ(s.codes()[0], 3);
    EXPECT_DOUBLE_EQ(s.delta[0], 0.3);
    s.flip(0);
    EXPECT_DOUBLE_EQ(s.delta[0], -0.2);
}

TEST(Refinement, OneDimensionalIsUnchanged) {
    const auto s = RoundingState::from_candidates((Vector(1) << -0.3).finished(), (Vector(1) << 0.7).finished());
    const auto r = rounding_refinement(s, (Matrix(1, 1) << 2.0).finished(), {});
    EXPECT_EQ(r.state.delta[0], -0.3);
    EXPECT_EQ(r.steps, 0);
    EXPECT_EQ(r.committed_proxy.size(), 1u);
}

TEST(Refinement, CraftedTwoDimensionalCase) {
    // Nearest proxy: 0.16 + 0.16 + 2(0.9)(0.16) = 0.608.
    // Flipping coordinate 0 to -0.6: 0.36 + 0.16 - 2(0.9)(0.24) = 0.088.
    // Flipping back would return to 0.608, so refinement stops there.
    const Matrix m = (Matrix(2, 2) << 1.0, 0.9, 0.9, 1.0).finished();
    const auto s = RoundingState::from_candidates(Vector::Constant(2, -0.6), Vector::Constant(2, 0.4));
    EXPECT_NEAR(proxy_value(s.delta, m), 0.608, 1e-15);
    const auto r = rounding_refinement(s, m, {});
    EXPECT_NEAR(r.state.delta[0], -0.6, 1e-15);
    EXPECT_NEAR(r.state.delta[1], 0.4, 1e-15);
    EXPECT_EQ(r.steps, 1);
    ASSERT_EQ(r.committed_proxy.size(), 2u);
    EXPECT_NEAR(r.committed_proxy[1], 0.088, 1e-15);
    const auto bf = brute_force_rounding(s.delta_down, s.delta_up, m);
    EXPECT_NEAR(bf.best_proxy, 0.088, 1e-15);
}

TEST(Refinement, ZeroIterationsKeepsNearest) {
    std::mt19937_64 rng(53);
    const Vector down = -gen::gaussian_vector(rng, 8).cwiseAbs();
    const Vector up = down.array() + 1.0;
    const auto s = RoundingState::from_candidates(down, up);
    WqerConfig cfg;
    cfg.max_iter = 0;
    EXPECT_EQ(rounding_refinement(s, gen::random_spd(rng, 8), cfg).state.delta, s.delta);
    cfg.max_iter = 100;
    cfg.k = 0;
    EXPECT_EQ(rounding_refinement(s, gen::random_spd(rng, 8), cfg).state.delta, s.delta);
}

TEST(Refinement, CommittedProxyNeverIncreases) {
    std::mt19937_64 rng(54);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = gen::uniform_int(rng, 1, 16);
        Vector down(n);
        for (int j = 0; j < n; ++j) down[j] = -gen::uniform_real(rng, 0.0, 1.0);
        const Vector up = down.array() + 1.0;
        const Vector mu = gen::gaussian_vector(rng, n);
        const Matrix m = mu * mu.transpose() + gen::random_spd(rng, n);
        WqerConfig cfg;
        cfg.k = gen::uniform_int(rng, 1, 3);
        const auto r = rounding_refinement(RoundingState::from_candidates(down, up), m, cfg);
        for (std::size_t i = 1; i < r.committed_proxy.size(); ++i)
            ASSERT_LE(r.committed_proxy[i], r.committed_proxy[i - 1]);
        ASSERT_DOUBLE_EQ(r.committed_proxy.back(), proxy_value(r.state.delta, m));
        ASSERT_LE(r.steps, cfg.max_iter);
    }
}

TEST(Ridge, ScalarCase) {
    SliceMoments sm;
    sm.e_sr = (Matrix(1, 1) << 0.8).finished();
    sm.e_rr = (Matrix(1, 1) << 1.0).finished();
    const Vector c = ridge_correct_remainder((Vector(1) << 0.5).finished(), sm, 1.0);
    EXPECT_DOUBLE_EQ(c[0], -0.2);
}

TEST(Ridge, NothingToCompensate) {
    std::mt19937_64 rng(55);
    SliceMoments sm;
    sm.e_sr = gen::gaussian_matrix(rng, 3, 4);
    sm.e_rr = gen::random_spd(rng, 4);
    EXPECT_EQ(ridge_correct_remainder(Vector::Zero(3), sm, 1.0), Vector::Zero(4));
    sm.e_sr.setZero();
    EXPECT_EQ(ridge_correct_remainder(gen::gaussian_vector(rng, 3), sm, 1.0), Vector::Zero(4));
}

TEST(Partition, CeilHalfRecurrence) {
    EXPECT_EQ(partition_sizes(16), (std::vector<Eigen::Index>{8, 4, 2, 1, 1}));
    EXPECT_EQ(partition_sizes(1), std::vector<Eigen::Index>{1});
    EXPECT_EQ(partition_sizes(5), (std::vector<Eigen::Index>{3, 1, 1}));
    for (Eigen::Index d = 1; d < 300; ++d) {
        const auto sizes = partition_sizes(d);
        ASSERT_EQ(std::accumulate(sizes.begin(), sizes.end(), Eigen::Index{0}), d);
    }
}

namespace {

struct Layer {
    Matrix w;
    Matrix x;
    QuantScheme scheme;
};

Layer random_layer(std::uint64_t seed, Eigen::Index d_out, Eigen::Index d_in, Eigen::Index rows = 512) {
    std::mt19937_64 rng(seed);
    Layer l;
    l.w = gen::gaussian_matrix(rng, d_out, d_in);
    const Vector mu = gen::gaussian_vector(rng, d_in, 0.5);
    l.x = gen::correlated_rows(rng, rows, mu, gen::random_spd(rng, d_in));
    l.scheme = calibrate_scale(l.w, QuantFamily::Uniform, 4, Granularity::PerChannel);
    return l;
}

}  // namespace

TEST(WqerChannel, EmitsEveryColumnOnce) {
    const auto l = random_layer(56, 1, 16);
    const SlicePlan plan(accumulate_moments(l.x), {});
    const auto r = wqer_channel(l.w.row(0).transpose(), std::get<UniformParams>(l.scheme.channel(0)), plan, {});
    ASSERT_EQ(r.trace.size(), 5u);
    std::vector<Eigen::Index> sizes;
    for (const auto& t : r.trace) sizes.push_back(t.slice_size);
    EXPECT_EQ(sizes, (std::vector<Eigen::Index>{8, 4, 2, 1, 1}));
    std::vector<Eigen::Index> expected(16);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(r.emitted, expected);
    for (const auto& t : r.trace) EXPECT_LE(t.proxy_after, t.proxy_before);
}

TEST(WqerChannel, SingleColumnIsNearest) {
    const auto l = random_layer(57, 1, 1);
    const SlicePlan plan(accumulate_moments(l.x), {});
    const auto& p = std::get<UniformParams>(l.scheme.channel(0));
    const auto r = wqer_channel(l.w.row(0).transpose(), p, plan, {});
    EXPECT_EQ(r.trace.size(), 1u);
    EXPECT_EQ(r.codes[0], quantize_one(l.w(0, 0), p));
}

TEST(WqerChannel, ZeroRowStaysAtZeroPoint) {
    const auto l = random_layer(58, 1, 12);
    const SlicePlan plan(accumulate_moments(l.x), {});
    const UniformParams p{0.1, 7, 4};
    const auto r = wqer_channel(Vector::Zero(12), p, plan, {});
    EXPECT_EQ(r.codes, CodeVector::Constant(12, 7));
    EXPECT_EQ(r.dequant, Vector::Zero(12));
}

TEST(WqerLayer, IdenticalRowsGiveIdenticalCodes) {
    auto l = random_layer(59, 2, 10);
    l.w.row(1) = l.w.row(0);
    l.scheme = calibrate_scale(l.w, QuantFamily::Uniform, 4, Granularity::PerChannel);
    const auto r = wqer_layer(l.w, l.scheme, l.x, {});
    EXPECT_EQ(r.codes.row(0), r.codes.row(1));
}

TEST(WqerLayer, ChannelPermutationAndThreadCount) {
    const auto l = random_layer(60, 9, 20);
    const WqerConfig cfg{1, 100, 1.0, true, true};
    const SlicePlan plan(accumulate_moments(l.x), cfg);
    const auto serial = wqer_layer(l.w, l.scheme, plan, cfg, 1);
    const auto threaded = wqer_layer(l.w, l.scheme, plan, cfg, 4);
    EXPECT_EQ(serial.codes, threaded.codes);
    EXPECT_EQ(serial.dequant, threaded.dequant);

    const std::vector<int> perm{4, 8, 0, 3, 1, 7, 2, 6, 5};
    Matrix wp(9, 20);
    QuantScheme sp = l.scheme;
    for (int i = 0; i < 9; ++i) {
        wp.row(i) = l.w.row(perm[i]);
        sp.params[i] = l.scheme.params[perm[i]];
    }
    const auto permuted = wqer_layer(wp, sp, plan, cfg, 3);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(permuted.codes.row(i), serial.codes.row(perm[i]));
}

TEST(WqerLayer, DisabledStagesAreRoundToNearest) {
    const auto l = random_layer(61, 4, 12);
    const WqerConfig off{1, 100, 1.0, false, false};
    const auto r = wqer_layer(l.w, l.scheme, l.x, off);
    EXPECT_EQ(r.codes, codes_for(l.w, l.scheme));
    EXPECT_EQ(r.dequant, apply_scheme(l.w, l.scheme));
}

TEST(WqerLayer, NeverWorseThanRoundToNearest) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto l = random_layer(100 + seed, 8, 24);
        const Matrix rtn = apply_scheme(l.w, l.scheme);
        const double mse_rtn = layer_mse(l.w, l.x, rtn, l.x);
        for (double lambda : {1.0, 10.0}) {
            const WqerConfig cfg{1, 100, lambda, true, true};
            const auto r = wqer_layer(l.w, l.scheme, l.x, cfg);
            EXPECT_LE(layer_mse(l.w, l.x, r.dequant, l.x), mse_rtn) << "seed " << seed << " lambda " << lambda;
        }
    }
}

TEST(SlicePlan, EntriesAreSubmatrices) {
    const auto l = random_layer(62, 1, 11);
    const auto m = accumulate_moments(l.x);
    const SlicePlan plan(m, {});
    Eigen::Index begin = 0;
    for (auto s : partition_sizes(11)) {
        const auto& e = plan.find(begin, s);
        const Eigen::Index r = 11 - begin - s;
        EXPECT_EQ(e.e_ss, m.raw2.block(begin, begin, s, s));
        EXPECT_EQ(e.e_sr, m.raw2.block(begin, begin + s, s, r));
        EXPECT_LT((e.proxy - m.proxy_matrix().block(begin, begin, s, s)).cwiseAbs().maxCoeff(), 1e-14);
        begin += s;
    }
    EXPECT_THROW(plan.find(1, 3), Error);
}
