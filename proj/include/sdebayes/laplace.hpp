#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "sdebayes/common.hpp"
#include "sdebayes/field.hpp"
#include "sdebayes/prior.hpp"
#include "sdebayes/rng.hpp"

namespace sdebayes {

struct GevdResult {
    Eigen::VectorXd eigvals;  // descending, zero-padded to the requested rank
    Eigen::MatrixXd vectors;  // C^{-1}-orthonormal columns, one per captured pair
};

namespace detail {

// Modified Gram-Schmidt in the C^{-1} inner product, two sweeps, dropping
// columns that collapse. Returns basis Q and its precision image W = C^{-1}Q.
inline bool precision_orthonormalize(const JointPrior& prior, Eigen::MatrixXd& y,
                                     Eigen::MatrixXd& q, Eigen::MatrixXd& w) {
    const int n = static_cast<int>(y.rows());
    std::vector<Eigen::VectorXd> qs, ws;
    for (int j = 0; j < y.cols(); ++j) {
        Eigen::VectorXd col = y.col(j);
        const double scale0 = col.norm();
        if (!(scale0 > 0.0) || !col.allFinite()) continue;
        for (int sweep = 0; sweep < 2; ++sweep)
            for (std::size_t i = 0; i < qs.size(); ++i) col -= ws[i].dot(col) * qs[i];
        const Eigen::VectorXd z = prior.apply_precision(col);
        const double nrm2 = col.dot(z);
        if (!std::isfinite(nrm2)) return false;
        if (nrm2 <= 0.0 || std::sqrt(nrm2) <= 1e-10 * scale0) continue;  // collapsed column
        const double nrm = std::sqrt(nrm2);
        qs.push_back(col / nrm);
        ws.push_back(z / nrm);
    }
    q.resize(n, static_cast<int>(qs.size()));
    w.resize(n, static_cast<int>(ws.size()));
    for (int j = 0; j < q.cols(); ++j) {
        q.col(j) = qs[j];
        w.col(j) = ws[j];
    }
    return true;
}

}  // namespace detail

// Double-pass randomized solver for H v = lambda C^{-1} v with H symmetric
// positive semidefinite (data Hessian) and C the prior covariance.
template <class Hvp>
GevdResult randomized_gevd(const Hvp& hvp, const JointPrior& prior, int r,
                           int oversample = 10, int power_iters = 1, NormalStream* rng = nullptr) {
    const int n = prior.n();
    if (r < 1) throw config_error("randomized_gevd: rank must be positive");
    if (r + oversample > n) throw config_error("randomized_gevd: sketch exceeds dimension");
    if (power_iters < 0) throw config_error("randomized_gevd: power_iters must be >= 0");
    NormalStream fallback(0x9e3779b97f4a7c15ull);
    NormalStream& gen = rng ? *rng : fallback;
    const int l = r + oversample;

    for (int attempt = 0; attempt < 2; ++attempt) {
        Eigen::MatrixXd y(n, l);
        for (int j = 0; j < l; ++j)
            for (int i = 0; i < n; ++i) y(i, j) = gen.normal();
        for (int it = 0; it <= power_iters; ++it)
            for (int j = 0; j < l; ++j)
                y.col(j) = prior.apply_covariance(hvp(Eigen::VectorXd(y.col(j))));

        Eigen::MatrixXd q, w;
        if (!detail::precision_orthonormalize(prior, y, q, w)) continue;
        const int lq = static_cast<int>(q.cols());
        if (lq == 0) {  // null sketch: data Hessian is (numerically) zero
            GevdResult out;
            out.eigvals = Eigen::VectorXd::Zero(r);
            out.vectors.resize(n, 0);
            return out;
        }
        if ((w.transpose() * q - Eigen::MatrixXd::Identity(lq, lq)).cwiseAbs().maxCoeff() >
            1e-8)
            continue;

        Eigen::MatrixXd hq(n, lq);
        for (int j = 0; j < lq; ++j) hq.col(j) = hvp(Eigen::VectorXd(q.col(j)));
        Eigen::MatrixXd t = q.transpose() * hq;
        t = 0.5 * (t + t.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
        if (es.info() != Eigen::Success) continue;

        // When the sketch collapses below r columns the uncaptured trailing
        // eigenvalues sit beneath numerical resolution; report them as zero
        // (no vector stored), consistent with the null-Hessian case.
        const int keep = std::min(r, lq);
        GevdResult out;
        out.eigvals = Eigen::VectorXd::Zero(r);
        out.vectors.resize(n, keep);
        for (int j = 0; j < keep; ++j) {  // eigensolver sorts ascending
            out.eigvals[j] = es.eigenvalues()[lq - 1 - j];
            out.vectors.col(j) = q * es.eigenvectors().col(lq - 1 - j);
        }
        return out;
    }
    throw numerical_error("randomized_gevd: orthonormalization broke down twice");
}

// Laplace approximation N(m_map, C_LA) with C_LA = C - V D V^T,
// D = diag(lambda/(1+lambda)), stored through the retained eigenpairs.
class LowRankPosterior {
public:
    LowRankPosterior(ParameterField m_map, JointPrior prior, Eigen::VectorXd eigvals,
                     Eigen::MatrixXd vectors, double truncate_below = 0.1)
        : m_map_(std::move(m_map)), prior_(std::move(prior)) {
        if (vectors.cols() > 0 && vectors.rows() != prior_.n())
            throw config_error("LowRankPosterior: eigenvector length mismatch");
        if (static_cast<int>(m_map_.stacked().size()) != prior_.n())
            throw config_error("LowRankPosterior: MAP point size mismatch");
        // keep the leading eigenpairs above the truncation threshold; a spectrum
        // padded with zeros (null data Hessian) may carry fewer stored vectors
        int keep = 0;
        while (keep < eigvals.size() && eigvals[keep] > 0.0 && eigvals[keep] >= truncate_below)
            ++keep;
        if (keep > vectors.cols())
            throw config_error("LowRankPosterior: eigenpair count mismatch");
        for (int j = 1; j < keep; ++j)
            if (eigvals[j] > eigvals[j - 1] * (1.0 + 1e-10))
                throw config_error("LowRankPosterior: eigenvalues not sorted descending");
        lam_ = eigvals.head(keep);
        v_ = vectors.leftCols(keep);
        w_.resize(v_.rows(), keep);
        for (int j = 0; j < keep; ++j) w_.col(j) = prior_.apply_precision(v_.col(j));
        if (keep > 0 &&
            (w_.transpose() * v_ - Eigen::MatrixXd::Identity(keep, keep)).cwiseAbs().maxCoeff() >
                1e-8)
            throw numerical_error("LowRankPosterior: eigenvectors lost orthonormality");
        d_ = (lam_.array() / (lam_.array() + 1.0)).matrix();
        s_ = (1.0 - (lam_.array() + 1.0).inverse().sqrt()).matrix();
    }

    int rank() const { return static_cast<int>(lam_.size()); }
    const Eigen::VectorXd& eigvals() const { return lam_; }
    const Eigen::MatrixXd& eigvecs() const { return v_; }
    const ParameterField& map_point() const { return m_map_; }
    const JointPrior& prior() const { return prior_; }

    Eigen::VectorXd apply_covariance(const Eigen::VectorXd& x) const {
        Eigen::VectorXd out = prior_.apply_covariance(x);
        if (rank() > 0) out -= v_ * d_.cwiseProduct(v_.transpose() * x);
        return out;
    }

    Eigen::VectorXd apply_precision(const Eigen::VectorXd& x) const {
        Eigen::VectorXd out = prior_.apply_precision(x);
        if (rank() > 0) out += w_ * lam_.cwiseProduct(w_.transpose() * x);
        return out;
    }

    // zero-mean fluctuation with covariance C_LA: (I - V S V^T C^{-1}) w
    Eigen::VectorXd sample_fluctuation(NormalStream& rng) const {
        Eigen::VectorXd xi(prior_.n());
        for (int i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
        Eigen::VectorXd w = prior_.noise_to_fluctuation(xi);
        if (rank() > 0) w -= v_ * s_.cwiseProduct(w_.transpose() * w);
        return w;
    }

    ParameterField sample(NormalStream& rng) const {
        return ParameterField::from_stacked(
            m_map_.mesh, m_map_.stacked() + sample_fluctuation(rng));
    }

    // diagonal of C_LA, built densely; intended for modest dimensions
    Eigen::VectorXd pointwise_variance_exact() const {
        const int n = prior_.n();
        Eigen::VectorXd diag(n);
        for (int i = 0; i < n; ++i)
            diag[i] = prior_.apply_covariance(Eigen::VectorXd::Unit(n, i))[i];
        if (rank() > 0) diag -= v_.array().square().matrix() * d_;
        return diag;
    }

    struct VarianceEstimate {
        Eigen::VectorXd variance;
        Eigen::VectorXd std_error;
    };

    VarianceEstimate pointwise_variance_sampled(int n_samples, NormalStream& rng) const {
        if (n_samples < 2) throw config_error("pointwise_variance_sampled: need >= 2 samples");
        const int n = prior_.n();
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sum_sq = Eigen::VectorXd::Zero(n);
        for (int s = 0; s < n_samples; ++s) {
            const Eigen::VectorXd sq = sample_fluctuation(rng).array().square().matrix();
            sum += sq;
            sum_sq += sq.array().square().matrix();
        }
        VarianceEstimate est;
        est.variance = sum / n_samples;
        const Eigen::VectorXd var_of_sq =
            (sum_sq / n_samples - est.variance.array().square().matrix()).cwiseMax(0.0);
        est.std_error = (var_of_sq / n_samples).cwiseSqrt();
        return est;
    }

private:
    ParameterField m_map_;
    JointPrior prior_;
    Eigen::VectorXd lam_, d_, s_;
    Eigen::MatrixXd v_, w_;
};

}  // namespace sdebayes
