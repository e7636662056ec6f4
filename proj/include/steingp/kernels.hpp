#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "steingp/covariance.hpp"
#include "steingp/errors.hpp"

namespace steingp {

struct SEKernelParams {
    double lengthscale = 10.0;
    double variance = 1.0;

    void validate() const {
        if (!(lengthscale > 0.0) || !(variance > 0.0))
            throw DimensionError("SE kernel needs lengthscale > 0 and variance > 0");
    }
};

/// Ordered evaluation grids; points are columns of c-row matrices elsewhere,
/// the 1-D experiment case keeps plain vectors here.
struct TimeGrid {
    Eigen::VectorXd train_times;
    Eigen::VectorXd target_times;

    void validate() const {
        if (train_times.size() == 0) throw DimensionError("empty training grid");
        for (Eigen::Index i = 1; i < train_times.size(); ++i)
            if (!(train_times[i] > train_times[i - 1]))
                throw DimensionError("training grid must be strictly increasing");
        for (Eigen::Index i = 1; i < target_times.size(); ++i)
            if (!(target_times[i] > target_times[i - 1]))
                throw DimensionError("target grid must be strictly increasing");
    }
};

/// k(x, x') = variance * exp(-|x - x'|^2 / (2 lengthscale^2)).
inline double se_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                        const SEKernelParams& p) {
    p.validate();
    if (x.size() != y.size())
        throw DimensionError("se_kernel: point dimensions differ");
    const double d2 = (x - y).squaredNorm();
    return p.variance * std::exp(-d2 / (2.0 * p.lengthscale * p.lengthscale));
}

/// Gram matrix over column-point sets: entry (i,j) = k(a_i, b_j).
inline Eigen::MatrixXd gram(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                            const SEKernelParams& p) {
    p.validate();
    if (A.rows() != B.rows())
        throw DimensionError("gram: point dimensions differ");
    const Eigen::VectorXd a2 = A.colwise().squaredNorm();
    const Eigen::VectorXd b2 = B.colwise().squaredNorm();
    Eigen::MatrixXd d2 = a2.replicate(1, B.cols()) +
                         b2.transpose().replicate(A.cols(), 1) -
                         2.0 * A.transpose() * B;
    d2 = d2.cwiseMax(0.0);
    return p.variance *
           (-d2 / (2.0 * p.lengthscale * p.lengthscale)).array().exp().matrix();
}

inline Eigen::MatrixXd as_point_row(const Eigen::VectorXd& times) {
    return times.transpose();
}

/// Dense symmetric matrix with a cached Cholesky factor. apply multiplies by
/// M itself; solve inverts M + jitter*I.
class DenseSPDOperator final : public CovarianceOperator {
public:
    DenseSPDOperator(Eigen::MatrixXd M, double jitter = 0.0)
        : M_(std::move(M)), jitter_(jitter) {
        if (M_.rows() != M_.cols())
            throw DimensionError("DenseSPDOperator: matrix not square");
        const double scale = M_.cwiseAbs().maxCoeff();
        if ((M_ - M_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1.0))
            throw NotPositiveDefiniteError("matrix is not symmetric");
        Eigen::MatrixXd S = M_;
        if (jitter_ > 0.0)
            S.diagonal().array() += jitter_;
        llt_.compute(S);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefiniteError(
                "Cholesky factorization failed (jitter " + std::to_string(jitter_) + ")");
    }

    Eigen::Index dim() const override { return M_.rows(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "DenseSPDOperator::apply");
        return M_ * x;
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "DenseSPDOperator::solve");
        return llt_.solve(x);
    }

    const Eigen::MatrixXd& matrix() const { return M_; }
    double jitter() const { return jitter_; }

private:
    Eigen::MatrixXd M_;
    double jitter_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline std::shared_ptr<DenseSPDOperator> spd_operator(Eigen::MatrixXd M,
                                                      double jitter = 0.0) {
    return std::make_shared<DenseSPDOperator>(std::move(M), jitter);
}

/// Retries once with jitter 1e-12*trace/n when the plain factorization fails.
/// SE Grams with small lengthscales are numerically singular.
inline std::shared_ptr<DenseSPDOperator> spd_operator_with_fallback(Eigen::MatrixXd M) {
    try {
        return spd_operator(M, 0.0);
    } catch (const NotPositiveDefiniteError&) {
        const double jitter = 1e-12 * M.trace() / static_cast<double>(M.rows());
        return spd_operator(std::move(M), jitter);
    }
}

} // namespace steingp
