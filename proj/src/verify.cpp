#include "erq/verify.hpp"

#include "erq/aqer.hpp"
#include "erq/moments.hpp"
#include "erq/oracle.hpp"
#include "erq/quantizers.hpp"
#include "erq/wqer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace erq {

namespace {

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

struct Gaussian {
    Vector mean;
    Matrix factor;  // covariance = factor factor^T
};

Gaussian random_gaussian(std::mt19937_64& rng, Eigen::Index d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Gaussian g{Vector(d), Matrix(d, d)};
    for (Eigen::Index i = 0; i < d; ++i) g.mean[i] = normal(rng);
    for (Eigen::Index i = 0; i < g.factor.size(); ++i) g.factor.data()[i] = normal(rng) / std::sqrt(double(d));
    g.factor.diagonal().array() += 0.5;
    return g;
}

Matrix sample(std::mt19937_64& rng, const Gaussian& g, Eigen::Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(n, g.mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    return (z * g.factor.transpose()).rowwise() + g.mean.transpose();
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index d, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
    return v;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

template <typename Body>
SuiteResult timed(const std::string& name, Body&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r{name, false, "", 0.0};
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

GradientFn gradient_or_default(const VerifyOptions& opt) {
    return opt.gradient ? opt.gradient : GradientFn([](const Vector& d, const Matrix& m) { return proxy_gradient(d, m); });
}

}  // namespace

SuiteResult verify_quantizers(const VerifyOptions&) {
    return timed("quantizers", [](SuiteResult& r) {
        bool ok = true;
        const std::vector<double> x{-0.4, 0.6, 2.7, 5.0};
        const auto q = quantize_uniform(x, UniformParams{1.0, 0, 2});
        ok = ok && q.codes == (CodeVector(4) << 0, 1, 3, 3).finished();
        ok = ok && q.dequant == (Vector(4) << 0, 1, 3, 3).finished();
        const LogSqrt2Params lp{1.0, 4};
        ok = ok && quantize_one(1.0, lp) == 0 && lp.dequant(0) == 1.0;
        ok = ok && quantize_one(0.5, lp) == 2 && lp.dequant(2) == 0.5;
        ok = ok && quantize_one(std::sqrt(0.5), lp) == 1 && std::abs(lp.dequant(1) - std::sqrt(0.5)) < 1e-15;
        for (int b : {3, 4, 8}) {
            const LogSqrt2Params p{0.75, b};
            for (std::int32_t m = 0; m <= p.max_code(); ++m) {
                const double v = p.dequant(m);
                ok = ok && quantize_one(v, p) == m && fake_quant(v, p) == v;
            }
        }
        r.passed = ok;
        r.detail = ok ? "hand cases and log-sqrt2 fixed points exact" : "quantizer mismatch";
    });
}

SuiteResult verify_proxy_fidelity(const VerifyOptions& opt) {
    return timed("proxy_fidelity", [&opt](SuiteResult& r) {
        std::mt19937_64 rng(opt.seed + 11);
        const Eigen::Index d = 32;
        const auto g = random_gaussian(rng, d);
        const Matrix batch = sample(rng, g, 10000);
        const Matrix m = accumulate_moments(batch).proxy_matrix();
        std::vector<double> proxy, real;
        std::uniform_real_distribution<double> mag(0.01, 1.0);
        for (int t = 0; t < 100; ++t) {
            const Vector delta = random_vector(rng, d, mag(rng));
            proxy.push_back(proxy_value(delta, m));
            real.push_back(mc_output_error(delta, batch));
        }
        const double corr = pearson(proxy, real);
        // Exact moments: proxy against the analytic expectation (mu.d)^2 + d Sigma d.
        const Matrix cov = g.factor * g.factor.transpose();
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const Vector delta = random_vector(rng, d, 1.0);
            const double analytic = std::pow(g.mean.dot(delta), 2) + delta.dot(cov * delta);
            const double p = proxy_value(delta, g.mean * g.mean.transpose() + cov);
            worst = std::max(worst, std::abs(p - analytic) / analytic);
        }
        r.passed = corr >= 0.9 && worst <= 1e-9;
        std::ostringstream os;
        os << "pearson=" << corr << " analytic_rel_err=" << worst;
        r.detail = os.str();
    });
}

SuiteResult verify_proxy_gradient(const VerifyOptions& opt) {
    return timed("proxy_gradient", [&opt](SuiteResult& r) {
        std::mt19937_64 rng(opt.seed + 23);
        const auto grad = gradient_or_default(opt);
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const Eigen::Index d = 2 + t % 12;
            const auto g = random_gaussian(rng, d);
            const Matrix m = g.mean * g.mean.transpose() + g.factor * g.factor.transpose();
            const Vector delta = random_vector(rng, d, 0.5);
            const Vector fd = finite_diff_gradient([&m](const Vector& v) { return proxy_value(v, m); }, delta, 1e-5);
            worst = std::max(worst, (grad(delta, m) - fd).cwiseAbs().maxCoeff());
        }
        r.passed = worst < 1e-6;
        r.detail = "max |analytic - fd| = " + sci(worst);
    });
}

SuiteResult verify_aqer_optimality(const VerifyOptions& opt) {
    return timed("aqer_optimality", [&opt](SuiteResult& r) {
        std::mt19937_64 rng(opt.seed + 37);
        bool ok = true;
        double worst = 0.0;
        for (int t = 0; t < 5; ++t) {
            const Eigen::Index d_in = 4 + 4 * t, d_out = 3;
            const auto g = random_gaussian(rng, d_in);
            const Matrix fp = sample(rng, g, 200);
            const auto scheme = calibrate_scale(fp, QuantFamily::Uniform, 3, Granularity::PerTensor);
            const Matrix q = apply_scheme(fp, scheme);
            Matrix w(d_out, d_in);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = random_vector(rng, 1, 1.0)[0];
            const double lambda = 0.1;
            const auto sol = solve_aqer(w, fp, q, lambda);
            const Vector flat = Eigen::Map<const Vector>(sol.delta_w.data(), sol.delta_w.size());
            const auto f = [&](const Vector& v) {
                const Matrix dw = Eigen::Map<const Matrix>(v.data(), d_out, d_in);
                return aqer_objective(w, dw, fp, q, lambda);
            };
            const double g_max = finite_diff_gradient(f, flat, 1e-4).cwiseAbs().maxCoeff();
            const double tol = 1e-6 * (1.0 + w.norm());
            worst = std::max(worst, g_max / tol);
            ok = ok && g_max < tol && f(flat) <= aqer_objective(w, Matrix::Zero(d_out, d_in), fp, q, lambda);
        }
        r.passed = ok;
        r.detail = "worst gradient / tolerance = " + sci(worst);
    });
}

SuiteResult verify_rounding_refinement(const VerifyOptions& opt) {
    return timed("rounding_refinement", [&opt](SuiteResult& r) {
        std::mt19937_64 rng(opt.seed + 41);
        bool ok = true;
        double gap_sum = 0.0;
        int gaps = 0;
        const Eigen::Index d = opt.brute_force_dim;
        for (int t = 0; t < 20; ++t) {
            const auto g = random_gaussian(rng, d);
            const Matrix m = g.mean * g.mean.transpose() + g.factor * g.factor.transpose();
            const UniformParams p{0.1, 8, 4};
            const Vector w = random_vector(rng, d, 0.3);
            const auto start = RoundingState::nearest(w, p);
            const auto refined = rounding_refinement(start, m, WqerConfig{});
            for (std::size_t i = 1; i < refined.committed_proxy.size(); ++i) {
                ok = ok && refined.committed_proxy[i] <= refined.committed_proxy[i - 1];
            }
            const double near = proxy_value(start.delta, m);
            const double mine = proxy_value(refined.state.delta, m);
            const auto best = brute_force_rounding(start.delta_down, start.delta_up, m);
            ok = ok && mine <= near && best.best_proxy <= mine * (1 + 1e-12);
            if (best.best_proxy > 0) {
                gap_sum += mine / best.best_proxy;
                ++gaps;
            }
        }
        r.passed = ok;
        r.detail = "mean refined/optimal proxy ratio = " + sci(gaps ? gap_sum / gaps : 1.0);
    });
}

SuiteResult verify_ridge_optimality(const VerifyOptions& opt) {
    return timed("ridge_optimality", [&opt](SuiteResult& r) {
        std::mt19937_64 rng(opt.seed + 53);
        bool ok = true;
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            const Eigen::Index ds = 2 + t % 5, dr = 3 + t % 7;
            const auto g = random_gaussian(rng, ds + dr);
            const Matrix batch = sample(rng, g, 300);
            std::vector<Eigen::Index> s(ds), rr(dr);
            for (Eigen::Index i = 0; i < ds; ++i) s[i] = i;
            for (Eigen::Index i = 0; i < dr; ++i) rr[i] = ds + i;
            const auto slice = cross_moments(batch, s, rr);
            const Vector delta_s = random_vector(rng, ds, 0.05);
            const double lambda = 0.5;
            const Vector sol = ridge_correct_remainder(delta_s, slice, lambda);
            const Matrix xs = batch.leftCols(ds), xr = batch.rightCols(dr);
            const auto f = [&](const Vector& v) {
                return (xs * delta_s + xr * v).squaredNorm() / double(batch.rows()) + lambda * v.squaredNorm();
            };
            const double scale = 1.0 + (2.0 * slice.e_sr.transpose() * delta_s).cwiseAbs().maxCoeff();
            const double g_max = finite_diff_gradient(f, sol, 1e-4).cwiseAbs().maxCoeff() / scale;
            worst = std::max(worst, g_max);
            ok = ok && g_max < 1e-6;
        }
        r.passed = ok;
        r.detail = "worst relative gradient = " + sci(worst);
    });
}

std::vector<SuiteResult> run_verify_suites(const VerifyOptions& opt) {
    return {verify_quantizers(opt),          verify_proxy_fidelity(opt),      verify_proxy_gradient(opt),
            verify_aqer_optimality(opt),     verify_rounding_refinement(opt), verify_ridge_optimality(opt)};
}

nlohmann::json to_json(const SuiteResult& r) {
    return {{"suite", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}};
}

}  // namespace erq
