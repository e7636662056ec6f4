#pragma once

#include <memory>
#include <string>

#include <Eigen/Dense>

#include "steingp/errors.hpp"

namespace steingp {

/// Symmetric positive (semi)definite operator. apply and solve accept blocks
/// of column vectors so low-rank factors move in one pass. Implementations
/// are immutable after construction; concurrent calls are safe.
class CovarianceOperator {
public:
    virtual ~CovarianceOperator() = default;
    virtual Eigen::Index dim() const = 0;
    virtual Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const = 0;
    virtual Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const = 0;

protected:
    void check_rows(const Eigen::MatrixXd& x, const char* who) const {
        if (x.rows() != dim())
            throw DimensionError(std::string(who) + ": block has " +
                                 std::to_string(x.rows()) + " rows, operator dim is " +
                                 std::to_string(dim()));
    }
};

class DiagonalOperator final : public CovarianceOperator {
public:
    explicit DiagonalOperator(Eigen::VectorXd diag) : d_(std::move(diag)) {
        if ((d_.array() <= 0.0).any())
            throw NotPositiveDefiniteError("diagonal operator needs positive entries");
    }

    Eigen::Index dim() const override { return d_.size(); }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "DiagonalOperator::apply");
        return d_.asDiagonal() * x;
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "DiagonalOperator::solve");
        return d_.cwiseInverse().asDiagonal() * x;
    }

    const Eigen::VectorXd& diagonal() const { return d_; }

private:
    Eigen::VectorXd d_;
};

class IdentityOperator final : public CovarianceOperator {
public:
    explicit IdentityOperator(Eigen::Index n) : n_(n) {}
    Eigen::Index dim() const override { return n_; }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const override {
        check_rows(x, "IdentityOperator::apply");
        return x;
    }
    Eigen::MatrixXd solve(const Eigen::MatrixXd& x) const override {
        check_rows(x, "IdentityOperator::solve");
        return x;
    }

private:
    Eigen::Index n_;
};

/// Dense materialization, for oracles and small-scale reports only.
inline Eigen::MatrixXd materialize(const CovarianceOperator& op) {
    return op.apply(Eigen::MatrixXd::Identity(op.dim(), op.dim()));
}

} // namespace steingp
