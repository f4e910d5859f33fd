#include "erq/moments.hpp"

#include <algorithm>
#include <string>

namespace erq {

namespace {

constexpr Eigen::Index kChunkRows = 512;

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

MomentAccumulator reduce_chunks(const Matrix& rows, Eigen::Index begin, Eigen::Index end) {
    if (end - begin <= kChunkRows) {
        MomentAccumulator acc(rows.cols());
        if (end > begin) acc.add_rows(rows.middleRows(begin, end - begin));
        return acc;
    }
    const Eigen::Index mid = begin + ((end - begin) / 2 / kChunkRows) * kChunkRows;
    auto left = reduce_chunks(rows, begin, std::max(mid, begin + kChunkRows));
    left.merge(reduce_chunks(rows, std::max(mid, begin + kChunkRows), end));
    return left;
}

void check_index_sets(std::span<const Eigen::Index> s, std::span<const Eigen::Index> r, Eigen::Index dim) {
    std::vector<char> seen(static_cast<std::size_t>(dim), 0);
    for (auto set : {s, r}) {
        for (auto idx : set) {
            if (idx < 0 || idx >= dim) throw ValidationError("column index " + std::to_string(idx) + " out of range");
            if (seen[static_cast<std::size_t>(idx)]++) {
                throw ValidationError("overlapping index sets at column " + std::to_string(idx));
            }
        }
    }
}

Matrix block(const Matrix& m, std::span<const Eigen::Index> rows, std::span<const Eigen::Index> cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
        }
    }
    return out;
}

}  // namespace

Matrix MomentSet::proxy_matrix() const { return mu * mu.transpose() + sigma; }

MomentAccumulator::MomentAccumulator(Eigen::Index dim) : mean_(Vector::Zero(dim)), comoment_(Matrix::Zero(dim, dim)) {}

void MomentAccumulator::add_row(std::span<const double> row) {
    if (static_cast<Eigen::Index>(row.size()) != dim()) throw ValidationError("row length does not match accumulator");
    const Eigen::Map<const Vector> x(row.data(), dim());
    ++n_;
    const Vector delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    comoment_.noalias() += delta * (x - mean_).transpose();
}

void MomentAccumulator::add_rows(const Matrix& rows) {
    if (rows.rows() == 0) return;
    if (rows.cols() != dim()) throw ValidationError("row length does not match accumulator");
    MomentAccumulator chunk(dim());
    chunk.n_ = static_cast<std::size_t>(rows.rows());
    chunk.mean_ = rows.colwise().mean().transpose();
    const Matrix centered = rows.rowwise() - chunk.mean_.transpose();
    chunk.comoment_.noalias() = centered.transpose() * centered;
    merge(chunk);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double n = na + nb;
    const Vector delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    comoment_ += other.comoment_;
    comoment_.noalias() += (na * nb / n) * delta * delta.transpose();
    n_ += other.n_;
}

MomentSet MomentAccumulator::finish() const {
    if (n_ < 2) throw ValidationError("moment estimation needs at least 2 rows, got " + std::to_string(n_));
    const Matrix c = symmetrized(comoment_);
    MomentSet m;
    m.n = n_;
    m.mu = mean_;
    m.sigma = c / static_cast<double>(n_ - 1);
    m.raw2 = c / static_cast<double>(n_) + mean_ * mean_.transpose();
    return m;
}

MomentSet accumulate_moments(const Matrix& rows) { return reduce_chunks(rows, 0, rows.rows()).finish(); }

SliceMoments slice_moments(const MomentSet& m, std::span<const Eigen::Index> s, std::span<const Eigen::Index> r) {
    check_index_sets(s, r, m.mu.size());
    SliceMoments out;
    out.s_indices.assign(s.begin(), s.end());
    out.r_indices.assign(r.begin(), r.end());
    out.e_ss = block(m.raw2, s, s);
    out.e_sr = block(m.raw2, s, r);
    out.e_rr = block(m.raw2, r, r);
    out.mu_s.resize(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) out.mu_s[static_cast<Eigen::Index>(i)] = m.mu[s[i]];
    out.proxy_ss = out.mu_s * out.mu_s.transpose() + block(m.sigma, s, s);
    return out;
}

SliceMoments cross_moments(const Matrix& batch, std::span<const Eigen::Index> s, std::span<const Eigen::Index> r) {
    check_index_sets(s, r, batch.cols());
    return slice_moments(accumulate_moments(batch), s, r);
}

Matrix error_cross_moment(const Matrix& fp, const Matrix& quantized) {
    if (fp.rows() != quantized.rows() || fp.cols() != quantized.cols()) {
        throw ValidationError("full-precision and quantized batches differ in shape");
    }
    if (fp.rows() == 0) throw ValidationError("empty calibration batch");
    const Matrix dx = quantized - fp;
    return (dx.transpose() * quantized) / static_cast<double>(fp.rows());
}

}  // namespace erq
