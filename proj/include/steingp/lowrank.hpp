#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "steingp/covariance.hpp"
#include "steingp/errors.hpp"

namespace steingp {

/// X = U * V^T with U (rows x k), V (cols x k). k = 0 encodes the zero matrix.
struct LowRankMatrix {
    Eigen::MatrixXd U;
    Eigen::MatrixXd V;

    LowRankMatrix() = default;
    LowRankMatrix(Eigen::MatrixXd u, Eigen::MatrixXd v)
        : U(std::move(u)), V(std::move(v)) {
        if (U.cols() != V.cols())
            throw DimensionError("LowRankMatrix: factor ranks differ");
    }

    static LowRankMatrix zero(Eigen::Index rows, Eigen::Index cols) {
        return LowRankMatrix(Eigen::MatrixXd(rows, 0), Eigen::MatrixXd(cols, 0));
    }

    Eigen::Index rows() const { return U.rows(); }
    Eigen::Index cols() const { return V.rows(); }
    Eigen::Index rank() const { return U.cols(); }
    bool is_zero() const { return rank() == 0; }

    Eigen::MatrixXd dense() const {
        if (is_zero()) return Eigen::MatrixXd::Zero(rows(), cols());
        return U * V.transpose();
    }
};

struct TruncationPolicy {
    double tol = 1e-10;
    Eigen::Index max_rank = -1; // negative: uncapped

    static TruncationPolicy none() { return TruncationPolicy{0.0, -1}; }
    bool is_none() const { return tol == 0.0 && max_rank < 0; }
};

/// Rank reduction via economy QR of both factors and an SVD of the small
/// core. Keeps singular values >= tol * sigma_1 (exact zeros always drop),
/// capped at max_rank. discarded, when given, receives the Frobenius norm of
/// the dropped tail sqrt(sum sigma_i^2).
inline LowRankMatrix truncate(const LowRankMatrix& X, const TruncationPolicy& policy,
                              double* discarded = nullptr) {
    if (discarded) *discarded = 0.0;
    if (X.is_zero() || policy.is_none()) return X;

    Eigen::HouseholderQR<Eigen::MatrixXd> qru(X.U);
    Eigen::HouseholderQR<Eigen::MatrixXd> qrv(X.V);
    const Eigen::Index k = X.rank();
    const Eigen::Index ru = std::min(X.U.rows(), k);
    const Eigen::Index rv = std::min(X.V.rows(), k);
    Eigen::MatrixXd Ru = qru.matrixQR().topRows(ru).triangularView<Eigen::Upper>();
    Eigen::MatrixXd Rv = qrv.matrixQR().topRows(rv).triangularView<Eigen::Upper>();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ru * Rv.transpose(),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double s1 = s.size() > 0 ? s[0] : 0.0;

    Eigen::Index keep = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const bool under_cap = policy.max_rank < 0 || keep < policy.max_rank;
        if (s[i] > 0.0 && s[i] >= policy.tol * s1 && under_cap)
            ++keep;
        else
            break;
    }
    if (discarded) {
        double tail = 0.0;
        for (Eigen::Index i = keep; i < s.size(); ++i) tail += s[i] * s[i];
        *discarded = std::sqrt(tail);
    }
    if (keep == 0) return LowRankMatrix::zero(X.rows(), X.cols());

    const Eigen::VectorXd sq = s.head(keep).array().sqrt();
    Eigen::MatrixXd Qu = qru.householderQ() * Eigen::MatrixXd::Identity(X.U.rows(), ru);
    Eigen::MatrixXd Qv = qrv.householderQ() * Eigen::MatrixXd::Identity(X.V.rows(), rv);
    return LowRankMatrix(Qu * svd.matrixU().leftCols(keep) * sq.asDiagonal(),
                         Qv * svd.matrixV().leftCols(keep) * sq.asDiagonal());
}

/// X1 + scale2 * X2 by factor concatenation, then truncation.
inline LowRankMatrix lr_sum(const LowRankMatrix& X1, const LowRankMatrix& X2,
                            double scale2, const TruncationPolicy& policy) {
    if (X1.rows() != X2.rows() || X1.cols() != X2.cols())
        throw DimensionError("lr_sum: outer dimensions differ");
    if (X2.is_zero() || scale2 == 0.0) return truncate(X1, policy);
    if (X1.is_zero()) {
        LowRankMatrix scaled(scale2 * X2.U, X2.V);
        return truncate(scaled, policy);
    }
    Eigen::MatrixXd U(X1.rows(), X1.rank() + X2.rank());
    U << X1.U, scale2 * X2.U;
    Eigen::MatrixXd V(X1.cols(), X1.rank() + X2.rank());
    V << X1.V, X2.V;
    return truncate(LowRankMatrix(std::move(U), std::move(V)), policy);
}

/// Frobenius inner product <X1, X2> = trace((U1^T U2)(V2^T V1)), computed on
/// the small Gram factors only.
inline double trace_prod(const LowRankMatrix& X1, const LowRankMatrix& X2) {
    if (X1.rows() != X2.rows() || X1.cols() != X2.cols())
        throw DimensionError("trace_prod: outer dimensions differ");
    if (X1.is_zero() || X2.is_zero()) return 0.0;
    Eigen::MatrixXd G1 = X1.U.transpose() * X2.U;
    Eigen::MatrixXd G2 = X1.V.transpose() * X2.V;
    return (G1.array() * G2.array()).sum();
}

inline double norm_f(const LowRankMatrix& X) {
    return std::sqrt(std::max(trace_prod(X, X), 0.0));
}

/// Frobenius norm through orthogonal factors and a small dense core. Unlike
/// the Gram form this keeps full precision when the factor columns nearly
/// cancel, as they do in converged residuals.
inline double stable_norm_f(const LowRankMatrix& X) {
    if (X.is_zero()) return 0.0;
    const Eigen::Index k = X.rank();
    const Eigen::Index ru = std::min(X.U.rows(), k);
    const Eigen::Index rv = std::min(X.V.rows(), k);
    Eigen::HouseholderQR<Eigen::MatrixXd> qru(X.U);
    Eigen::HouseholderQR<Eigen::MatrixXd> qrv(X.V);
    Eigen::MatrixXd Ru = qru.matrixQR().topRows(ru).triangularView<Eigen::Upper>();
    Eigen::MatrixXd Rv = qrv.matrixQR().topRows(rv).triangularView<Eigen::Upper>();
    return (Ru * Rv.transpose()).norm();
}

/// Factored action of K_O X K_I + sigma2 * X: new factors
/// [K_O U, s U] and [K_I V, s V] with s = sqrt(sigma2), then truncation.
inline LowRankMatrix stein_apply(const CovarianceOperator& KO,
                                 const CovarianceOperator& KI, double sigma2,
                                 const LowRankMatrix& X,
                                 const TruncationPolicy& policy) {
    if (X.rows() != KO.dim() || X.cols() != KI.dim())
        throw DimensionError("stein_apply: operand dimensions differ");
    if (X.is_zero()) return X;
    const double s = std::sqrt(sigma2);
    Eigen::MatrixXd U(X.rows(), 2 * X.rank());
    U << KO.apply(X.U), s * X.U;
    Eigen::MatrixXd V(X.cols(), 2 * X.rank());
    V << KI.apply(X.V), s * X.V;
    return truncate(LowRankMatrix(std::move(U), std::move(V)), policy);
}

/// Truncated SVD factorization of a dense matrix.
inline LowRankMatrix from_dense(const Eigen::MatrixXd& M,
                                const TruncationPolicy& policy,
                                double* discarded = nullptr) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double s1 = s.size() > 0 ? s[0] : 0.0;
    Eigen::Index keep = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const bool under_cap = policy.max_rank < 0 || keep < policy.max_rank;
        if (s[i] > 0.0 && s[i] >= policy.tol * s1 && under_cap)
            ++keep;
        else
            break;
    }
    if (discarded) {
        double tail = 0.0;
        for (Eigen::Index i = keep; i < s.size(); ++i) tail += s[i] * s[i];
        *discarded = std::sqrt(tail);
    }
    if (keep == 0) return LowRankMatrix::zero(M.rows(), M.cols());
    const Eigen::VectorXd sq = s.head(keep).array().sqrt();
    return LowRankMatrix(svd.matrixU().leftCols(keep) * sq.asDiagonal(),
                         svd.matrixV().leftCols(keep) * sq.asDiagonal());
}

} // namespace steingp
