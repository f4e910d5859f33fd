#include "erq/wqer.hpp"

#include "erq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace erq {

double proxy_value(const Vector& delta, const Matrix& m) { return delta.dot(m * delta); }

Vector proxy_gradient(const Vector& delta, const Matrix& m) { return 2.0 * (m.transpose() * delta); }

std::vector<Eigen::Index> select_flip_set(const Vector& delta, const Vector& grad, int k,
                                          const std::vector<char>& eligible) {
    std::vector<Eigen::Index> candidates;
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
        if (!eligible.empty() && !eligible[static_cast<std::size_t>(j)]) continue;
        if (grad[j] * delta[j] >= 0.0) candidates.push_back(j);
    }
    const auto take = std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(std::max(k, 0)));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                      [&grad](Eigen::Index a, Eigen::Index b) {
                          const double ma = std::abs(grad[a]), mb = std::abs(grad[b]);
                          return ma > mb || (ma == mb && a < b);
                      });
    candidates.resize(take);
    return candidates;
}

RoundingState RoundingState::nearest(const Vector& w, const UniformParams& p) {
    const Eigen::Index n = w.size();
    RoundingState s;
    s.code_down.resize(n);
    s.code_up.resize(n);
    s.delta_down.resize(n);
    s.delta_up.resize(n);
    s.delta.resize(n);
    s.use_up.assign(static_cast<std::size_t>(n), 0);
    const double zp = static_cast<double>(p.zero_point);
    const double max_code = static_cast<double>(p.max_code());
    for (Eigen::Index j = 0; j < n; ++j) {
        const double v = w[j] / p.scale;
        s.code_down[j] = static_cast<std::int32_t>(std::clamp(std::floor(v) + zp, 0.0, max_code));
        s.code_up[j] = static_cast<std::int32_t>(std::clamp(std::ceil(v) + zp, 0.0, max_code));
        s.delta_down[j] = p.dequant(s.code_down[j]) - w[j];
        s.delta_up[j] = p.dequant(s.code_up[j]) - w[j];
        const std::int32_t near = quantize_one(w[j], p);
        s.use_up[static_cast<std::size_t>(j)] = (near == s.code_up[j] && near != s.code_down[j]) ? 1 : 0;
        s.delta[j] = s.use_up[static_cast<std::size_t>(j)] ? s.delta_up[j] : s.delta_down[j];
    }
    return s;
}

RoundingState RoundingState::from_candidates(const Vector& delta_down, const Vector& delta_up) {
    if (delta_down.size() != delta_up.size()) throw ValidationError("rounding candidates differ in length");
    const Eigen::Index n = delta_down.size();
    RoundingState s;
    s.code_down = CodeVector::Zero(n);
    s.code_up = CodeVector::Ones(n);
    s.delta_down = delta_down;
    s.delta_up = delta_up;
    s.delta.resize(n);
    s.use_up.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
        const bool up = std::abs(delta_up[j]) < std::abs(delta_down[j]);
        s.use_up[static_cast<std::size_t>(j)] = up ? 1 : 0;
        s.delta[j] = up ? delta_up[j] : delta_down[j];
    }
    return s;
}

std::vector<char> RoundingState::eligibility() const {
    std::vector<char> e(static_cast<std::size_t>(size()));
    for (Eigen::Index j = 0; j < size(); ++j) e[static_cast<std::size_t>(j)] = flippable(j) ? 1 : 0;
    return e;
}

void RoundingState::flip(Eigen::Index j) {
    auto& up = use_up[static_cast<std::size_t>(j)];
    up = up ? 0 : 1;
    delta[j] = up ? delta_up[j] : delta_down[j];
}

CodeVector RoundingState::codes() const {
    CodeVector c(size());
    for (Eigen::Index j = 0; j < size(); ++j) c[j] = use_up[static_cast<std::size_t>(j)] ? code_up[j] : code_down[j];
    return c;
}

RefinementResult rounding_refinement(RoundingState state, const Matrix& m, const WqerConfig& cfg) {
    if (m.rows() != state.size() || m.cols() != state.size()) {
        throw ValidationError("proxy matrix dimension does not match the error vector");
    }
    RefinementResult out;
    double current = proxy_value(state.delta, m);
    out.committed_proxy.push_back(current);
    const auto eligible = state.eligibility();
    for (int t = 0; t < cfg.max_iter; ++t) {
        const Vector grad = proxy_gradient(state.delta, m);
        const auto flips = select_flip_set(state.delta, grad, cfg.k, eligible);
        if (flips.empty()) break;
        for (auto j : flips) state.flip(j);
        const double now = proxy_value(state.delta, m);
        if (now > current) {
            for (auto j : flips) state.flip(j);
            break;
        }
        current = now;
        out.committed_proxy.push_back(current);
        ++out.steps;
    }
    out.state = std::move(state);
    return out;
}

Vector ridge_correct_remainder(const Vector& delta_s, const SliceMoments& slice, double lambda2) {
    return ridge_correct_remainder(delta_s, slice.e_sr, RidgeSystem(slice.e_rr, lambda2));
}

Vector ridge_correct_remainder(const Vector& delta_s, const Matrix& e_sr, const RidgeSystem& rr_system) {
    if (e_sr.rows() != delta_s.size() || e_sr.cols() != rr_system.dim()) {
        throw ValidationError("ridge remainder: block shapes do not match the split");
    }
    // (E_rr + lambda I) y = -E_sr^T d_s^T
    return rr_system.solve(Vector(-(e_sr.transpose() * delta_s)));
}

std::vector<Eigen::Index> partition_sizes(Eigen::Index d_in) {
    std::vector<Eigen::Index> sizes;
    for (Eigen::Index remaining = d_in; remaining > 0;) {
        const Eigen::Index s = (remaining + 1) / 2;
        sizes.push_back(s);
        remaining -= s;
    }
    return sizes;
}

SlicePlan::SlicePlan(const MomentSet& moments, const WqerConfig& cfg) : dim_(moments.mu.size()) {
    const Matrix full_proxy = moments.proxy_matrix();
    Eigen::Index begin = 0;
    for (Eigen::Index s : partition_sizes(dim_)) {
        SliceEntry e;
        e.begin = begin;
        e.s_size = s;
        e.r_size = dim_ - begin - s;
        e.proxy = full_proxy.block(begin, begin, s, s);
        e.e_ss = moments.raw2.block(begin, begin, s, s);
        e.e_sr = moments.raw2.block(begin, begin + s, s, e.r_size);
        if (cfg.ridge && e.r_size > 0) {
            e.rr_system = RidgeSystem(moments.raw2.block(begin + s, begin + s, e.r_size, e.r_size), cfg.lambda2);
        }
        slices_.push_back(std::move(e));
        begin += s;
    }
}

const SliceEntry& SlicePlan::find(Eigen::Index begin, Eigen::Index s_size) const {
    for (const auto& e : slices_) {
        if (e.begin == begin && e.s_size == s_size) return e;
    }
    throw Error("no cached slice for columns [" + std::to_string(begin) + ", " + std::to_string(begin + s_size) + ")");
}

ChannelResult wqer_channel(const Vector& w, const UniformParams& p, const SlicePlan& plan, const WqerConfig& cfg) {
    const Eigen::Index d = w.size();
    if (d != plan.dim()) throw ValidationError("weight row length does not match the slice plan");
    ChannelResult out;
    out.codes.resize(d);
    out.dequant.resize(d);
    Vector row = w;  // remaining entries drift under ridge corrections
    Eigen::Index begin = 0;
    int iteration = 0;
    while (begin < d) {
        const Eigen::Index s = (d - begin + 1) / 2;
        const SliceEntry& slice = plan.find(begin, s);

        RoundingState state = RoundingState::nearest(row.segment(begin, s), p);
        IterationTrace tr;
        tr.iteration = iteration;
        tr.slice_size = s;
        tr.proxy_before = proxy_value(state.delta, slice.proxy);
        if (cfg.rounding) {
            auto refined = rounding_refinement(std::move(state), slice.proxy, cfg);
            state = std::move(refined.state);
        }
        tr.proxy_after = proxy_value(state.delta, slice.proxy);
        tr.mse = proxy_value(state.delta, slice.e_ss);
        out.trace.push_back(tr);

        const CodeVector codes = state.codes();
        for (Eigen::Index j = 0; j < s; ++j) {
            out.codes[begin + j] = codes[j];
            out.dequant[begin + j] = p.dequant(codes[j]);
            out.emitted.push_back(begin + j);
        }
        if (cfg.ridge && slice.r_size > 0) {
            row.segment(begin + s, slice.r_size) += ridge_correct_remainder(state.delta, slice.e_sr, slice.rr_system);
        }
        begin += s;
        ++iteration;
    }
    return out;
}

WqerLayerResult wqer_layer(const Matrix& weight, const QuantScheme& scheme, const Matrix& act_q,
                           const WqerConfig& cfg, int jobs) {
    return wqer_layer(weight, scheme, SlicePlan(accumulate_moments(act_q), cfg), cfg, jobs);
}

WqerLayerResult wqer_layer(const Matrix& weight, const QuantScheme& scheme, const SlicePlan& plan,
                           const WqerConfig& cfg, int jobs) {
    if (scheme.family != QuantFamily::Uniform) throw ValidationError("weight quantizers must be uniform");
    if (scheme.granularity == Granularity::PerChannel && scheme.params.size() != static_cast<std::size_t>(weight.rows())) {
        throw ValidationError("one weight quantizer per output channel required");
    }
    WqerLayerResult out;
    out.codes.resize(weight.rows(), weight.cols());
    out.dequant.resize(weight.rows(), weight.cols());
    out.traces.resize(static_cast<std::size_t>(weight.rows()));
    parallel_for(static_cast<std::size_t>(weight.rows()), jobs, [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        const auto& p = std::get<UniformParams>(scheme.channel(i));
        auto res = wqer_channel(weight.row(row).transpose(), p, plan, cfg);
        out.codes.row(row) = res.codes.transpose();
        out.dequant.row(row) = res.dequant.transpose();
        out.traces[i] = std::move(res.trace);
    });
    return out;
}

}  // namespace erq
