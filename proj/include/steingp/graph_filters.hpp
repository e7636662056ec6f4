#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "steingp/covariance.hpp"
#include "steingp/errors.hpp"
#include "steingp/graph.hpp"

namespace steingp {

struct GlobalFilterParams {
    double alpha = 1.0;
    void validate() const {
        if (!(alpha > 0.0)) throw DimensionError("global filter needs alpha > 0");
    }
};

struct LocalAverageParams {
    double alpha = 1.0;
    void validate() const {
        if (!(alpha > 0.0)) throw DimensionError("local average needs alpha > 0");
    }
};

/// Row/column index sets realizing submatrices of implicit operators.
struct Selection {
    std::vector<int> rows;
    std::vector<int> cols;

    void validate(int n) const {
        auto check = [n](const std::vector<int>& idx, const char* side) {
            std::set<int> seen;
            for (int i : idx) {
                if (i < 0 || i >= n)
                    throw SelectionError(std::string(side) + " index out of range: " +
                                         std::to_string(i));
                if (!seen.insert(i).second)
                    throw SelectionError(std::string(side) + " index duplicated: " +
                                         std::to_string(i));
            }
        };
        check(rows, "row");
        check(cols, "col");
    }
};

namespace detail {

inline SparseMat sparse_identity(int n) {
    SparseMat I(n, n);
    I.setIdentity();
    return I;
}

/// I + alpha * L, the positive definite core of the global filter.
inline SparseMat shifted_laplacian(const Graph& g, double alpha) {
    SparseMat S = detail::sparse_identity(g.node_count()) +
                  SparseMat(alpha * laplacian_matrix(g));
    S.makeCompressed();
    return S;
}

inline Eigen::MatrixXd scatter_cols(const Eigen::MatrixXd& x,
                                    const std::vector<int>& idx, int n) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, x.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) z.row(idx[j]) = x.row(j);
    return z;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& z,
                                   const std::vector<int>& idx) {
    Eigen::MatrixXd out(idx.size(), z.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = z.row(idx[i]);
    return out;
}

} // namespace detail

/// K_O = (I + alpha L)^{-2}. apply is two sparse Cholesky solves with
/// S = I + alpha L; solve is two multiplications by S.
class GlobalFilterOperator final : public CovarianceOperator {
public:
    GlobalFilterOperator(const Graph& g, GlobalFilterParams p) {
        p.validate();
        S_ = detail::shifted_laplacian(g, p.alpha);
        llt_.compute(S_);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefiniteError("shifted Laplacian failed to factorize");
    }

    Eigen::Index dim() const override { return S_.rows(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "GlobalFilterOperator::apply");
        return llt_.solve(llt_.solve(x));
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "GlobalFilterOperator::solve");
        return S_ * (S_ * x);
    }

private:
    SparseMat S_;
    Eigen::SimplicialLLT<SparseMat> llt_;
};

inline std::shared_ptr<CovarianceOperator> global_filter_operator(
    const Graph& g, GlobalFilterParams p) {
    return std::make_shared<GlobalFilterOperator>(g, p);
}

/// K_O = (I+aD)^{-1}(I+aW)^2(I+aD)^{-1}, assembled explicitly and factorized.
/// I+aW need not be positive definite; only the assembled product must be.
/// Factorization failure signals alpha beyond the stability edge for this
/// graph and is surfaced, not jittered away.
class LocalAverageOperator final : public CovarianceOperator {
public:
    LocalAverageOperator(const Graph& g, LocalAverageParams p) {
        p.validate();
        const int n = g.node_count();
        const SparseMat W(g.adjacency());
        SparseMat J = detail::sparse_identity(n) + SparseMat(p.alpha * W);
        Eigen::VectorXd dinv =
            (1.0 + p.alpha * g.degrees().array()).inverse().matrix();
        SparseMat F = J * SparseMat(dinv.asDiagonal());
        K_ = SparseMat(F.transpose() * F);
        K_.makeCompressed();
        llt_.compute(K_);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefiniteError(
                "local average covariance is not positive definite at alpha = " +
                std::to_string(p.alpha));
    }

    Eigen::Index dim() const override { return K_.rows(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "LocalAverageOperator::apply");
        return K_ * x;
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "LocalAverageOperator::solve");
        return llt_.solve(x);
    }

private:
    SparseMat K_;
    Eigen::SimplicialLLT<SparseMat> llt_;
};

inline std::shared_ptr<CovarianceOperator> local_average_operator(
    const Graph& g, LocalAverageParams p) {
    return std::make_shared<LocalAverageOperator>(g, p);
}

/// Submatrix R (I+aL)^{-2} C of the global filter without forming the
/// inverse. apply scatters, solves twice, gathers. solve goes through the
/// block system [[0, -R],[C, S^2]] [x; z] = [b; 0], whose first block carries
/// the Schur complement (R S^{-2} C)^{-1} b; the block matrix is LU
/// factorized once.
class SubmatrixGlobalOperator final : public CovarianceOperator {
public:
    SubmatrixGlobalOperator(const Graph& g, GlobalFilterParams p, Selection s) {
        p.validate();
        s.validate(g.node_count());
        if (s.rows != s.cols)
            throw SelectionError("submatrix operator needs rows == cols");
        idx_ = s.rows;
        n_ = g.node_count();
        S_ = detail::shifted_laplacian(g, p.alpha);
        llt_.compute(S_);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefiniteError("shifted Laplacian failed to factorize");

        const int p_sz = static_cast<int>(idx_.size());
        SparseMat S2 = SparseMat(S_ * S_);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(S2.nonZeros() + 2 * p_sz);
        for (int i = 0; i < p_sz; ++i) {
            trip.emplace_back(i, p_sz + idx_[i], -1.0); // -R block
            trip.emplace_back(p_sz + idx_[i], i, 1.0);  // C block
        }
        for (int k = 0; k < S2.outerSize(); ++k)
            for (SparseMat::InnerIterator it(S2, k); it; ++it)
                trip.emplace_back(p_sz + static_cast<int>(it.row()),
                                  p_sz + static_cast<int>(it.col()), it.value());
        SparseMat block(p_sz + n_, p_sz + n_);
        block.setFromTriplets(trip.begin(), trip.end());
        block.makeCompressed();
        lu_.compute(block);
        if (lu_.info() != Eigen::Success)
            throw SelectionError("block system is singular for this selection");
    }

    Eigen::Index dim() const override { return static_cast<Eigen::Index>(idx_.size()); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "SubmatrixGlobalOperator::apply");
        Eigen::MatrixXd z = detail::scatter_cols(x, idx_, n_);
        return detail::gather_rows(llt_.solve(llt_.solve(z)), idx_);
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const override {
        check_rows(b, "SubmatrixGlobalOperator::solve");
        const int p_sz = static_cast<int>(idx_.size());
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(p_sz + n_, b.cols());
        rhs.topRows(p_sz) = b;
        Eigen::MatrixXd full = lu_.solve(rhs);
        return full.topRows(p_sz);
    }

private:
    std::vector<int> idx_;
    int n_ = 0;
    SparseMat S_;
    Eigen::SimplicialLLT<SparseMat> llt_;
    Eigen::SparseLU<SparseMat> lu_;
};

inline std::shared_ptr<CovarianceOperator> submatrix_global_operator(
    const Graph& g, GlobalFilterParams p, Selection s) {
    return std::make_shared<SubmatrixGlobalOperator>(g, p, std::move(s));
}

/// Submatrix of the local average covariance. With F = (I+aW)(I+aD)^{-1}
/// (sparsity preserved), the selected block is (FC)^T (FC); its sparse
/// Cholesky factor serves the solves.
class SubmatrixLocalOperator final : public CovarianceOperator {
public:
    SubmatrixLocalOperator(const Graph& g, LocalAverageParams p, Selection s) {
        p.validate();
        s.validate(g.node_count());
        if (s.rows != s.cols)
            throw SelectionError("submatrix operator needs rows == cols");
        idx_ = s.rows;
        const int n = g.node_count();
        const SparseMat W(g.adjacency());
        SparseMat J = detail::sparse_identity(n) + SparseMat(p.alpha * W);
        Eigen::VectorXd dinv =
            (1.0 + p.alpha * g.degrees().array()).inverse().matrix();
        SparseMat F = J * SparseMat(dinv.asDiagonal());

        const int p_sz = static_cast<int>(idx_.size());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(idx_.size());
        for (int j = 0; j < p_sz; ++j) trip.emplace_back(idx_[j], j, 1.0);
        SparseMat C(n, p_sz);
        C.setFromTriplets(trip.begin(), trip.end());
        G_ = SparseMat(F * C);
        K_ = SparseMat(G_.transpose() * G_);
        K_.makeCompressed();
        llt_.compute(K_);
        if (llt_.info() != Eigen::Success)
            throw NotPositiveDefiniteError(
                "selected local average block failed to factorize at alpha = " +
                std::to_string(p.alpha));
    }

    Eigen::Index dim() const override { return static_cast<Eigen::Index>(idx_.size()); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "SubmatrixLocalOperator::apply");
        return G_.transpose() * (G_ * x);
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "SubmatrixLocalOperator::solve");
        return llt_.solve(x);
    }

private:
    std::vector<int> idx_;
    SparseMat G_;
    SparseMat K_;
    Eigen::SimplicialLLT<SparseMat> llt_;
};

inline std::shared_ptr<CovarianceOperator> submatrix_local_operator(
    const Graph& g, LocalAverageParams p, Selection s) {
    return std::make_shared<SubmatrixLocalOperator>(g, p, std::move(s));
}

/// Degree-weighted average covariance blocks for a training/target node
/// split. Training block Sigma11 = D1 is diagonal; the cross block is
/// M = W12 (I - D2^{-1} W22)^{-1}, applied transposed through the cached
/// factorization of G = I - W22 D2^{-1}. D1 and D2 are FULL-graph degrees
/// restricted to each side (D2 sums the rows of [W21 W22]).
class DwaModel {
public:
    DwaModel(const Graph& g, const NodePartition& part) {
        const int n = g.node_count();
        const int n1 = static_cast<int>(part.input_nodes.size());
        const int n2 = static_cast<int>(part.output_nodes.size());
        if (n1 + n2 != n)
            throw DegeneratePartitionError("partition does not cover the graph");
        std::vector<int> side(n, -1), pos(n, -1);
        for (int i = 0; i < n1; ++i) {
            side[part.input_nodes[i]] = 0;
            pos[part.input_nodes[i]] = i;
        }
        for (int j = 0; j < n2; ++j) {
            if (side[part.output_nodes[j]] != -1)
                throw DegeneratePartitionError("partition sides overlap");
            side[part.output_nodes[j]] = 1;
            pos[part.output_nodes[j]] = j;
        }

        std::vector<Eigen::Triplet<double>> t11, t12, t22;
        const SparseRowMat& W = g.adjacency();
        for (int u = 0; u < n; ++u)
            for (SparseRowMat::InnerIterator it(W, u); it; ++it) {
                const int v = static_cast<int>(it.col());
                if (side[u] == 0 && side[v] == 0)
                    t11.emplace_back(pos[u], pos[v], it.value());
                else if (side[u] == 0 && side[v] == 1)
                    t12.emplace_back(pos[u], pos[v], it.value());
                else if (side[u] == 1 && side[v] == 1)
                    t22.emplace_back(pos[u], pos[v], it.value());
            }
        W11_.resize(n1, n1);
        W11_.setFromTriplets(t11.begin(), t11.end());
        W12_.resize(n1, n2);
        W12_.setFromTriplets(t12.begin(), t12.end());
        W22_.resize(n2, n2);
        W22_.setFromTriplets(t22.begin(), t22.end());
        W21_ = SparseMat(W12_.transpose());

        D1_ = detail::gather_rows(g.degrees(), part.input_nodes);
        D2_ = detail::gather_rows(g.degrees(), part.output_nodes);
        if ((D1_.array() <= 0.0).any())
            throw DegeneratePartitionError("a training node has no neighbors");
        if ((D2_.array() <= 0.0).any())
            throw DegeneratePartitionError("a target node has no neighbors");

        Eigen::VectorXd d2inv = D2_.cwiseInverse();
        G_ = detail::sparse_identity(n2) - SparseMat(W22_ * SparseMat(d2inv.asDiagonal()));
        G_.makeCompressed();
        lu_.compute(G_);
        if (lu_.info() != Eigen::Success)
            throw DegeneratePartitionError("target-side system I - W22 D2^{-1} is singular");
    }

    DwaModel(const DwaModel&) = delete;
    DwaModel& operator=(const DwaModel&) = delete;

    const SparseMat& W11() const { return W11_; }
    const SparseMat& W12() const { return W12_; }
    const SparseMat& W21() const { return W21_; }
    const SparseMat& W22() const { return W22_; }
    const Eigen::VectorXd& D1() const { return D1_; }
    const Eigen::VectorXd& D2() const { return D2_; }
    bool simple_case() const { return W22_.nonZeros() == 0; }

    Eigen::Index train_count() const { return D1_.size(); }
    Eigen::Index target_count() const { return D2_.size(); }

    /// M^T x = (I - W22 D2^{-1})^{-1} (W21 x), blockwise.
    Eigen::MatrixXd cross_apply(const Eigen::MatrixXd& x) const {
        if (x.rows() != train_count())
            throw DimensionError("cross_apply: block rows != training node count");
        return lu_.solve(W21_ * x);
    }

private:
    SparseMat W11_, W12_, W21_, W22_;
    Eigen::VectorXd D1_, D2_;
    SparseMat G_;
    Eigen::SparseLU<SparseMat> lu_;
};

inline std::shared_ptr<const DwaModel> dwa_model(const Graph& g,
                                                 const NodePartition& part) {
    return std::make_shared<const DwaModel>(g, part);
}

struct DwaOperators {
    std::shared_ptr<const CovarianceOperator> KO;
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> cross_apply;
};

inline DwaOperators dwa_output_operators(std::shared_ptr<const DwaModel> m) {
    DwaOperators ops;
    ops.KO = std::make_shared<DiagonalOperator>(m->D1());
    ops.cross_apply = [m](const Eigen::MatrixXd& x) { return m->cross_apply(x); };
    return ops;
}

struct GershgorinReport {
    bool certified = false;
    double min_margin = 0.0;
};

/// Certifies positive semidefiniteness of the assembled simple-case
/// covariance [[D1, W12],[W21, D2]]: every circle center deg(v_i) dominates
/// its cross-block radius.
inline GershgorinReport gershgorin_psd_check(const DwaModel& m) {
    if (!m.simple_case())
        throw UnsupportedCaseError("Gershgorin certification covers only W22 = 0");
    GershgorinReport rep;
    rep.min_margin = std::numeric_limits<double>::infinity();
    const Eigen::VectorXd r1 =
        m.W12() * Eigen::VectorXd::Ones(m.target_count());
    const Eigen::VectorXd r2 =
        m.W21() * Eigen::VectorXd::Ones(m.train_count());
    for (Eigen::Index i = 0; i < m.train_count(); ++i)
        rep.min_margin = std::min(rep.min_margin, m.D1()[i] - r1[i]);
    for (Eigen::Index j = 0; j < m.target_count(); ++j)
        rep.min_margin = std::min(rep.min_margin, m.D2()[j] - r2[j]);
    rep.certified = rep.min_margin >= 0.0;
    return rep;
}

} // namespace steingp
