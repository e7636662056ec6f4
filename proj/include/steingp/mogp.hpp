#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "steingp/errors.hpp"
#include "steingp/graph.hpp"
#include "steingp/graph_filters.hpp"
#include "steingp/kernels.hpp"
#include "steingp/lowrank.hpp"
#include "steingp/stein_solvers.hpp"

namespace steingp {

enum class OutputModel { GlobalFilter, LocalAverage, Dwa };

inline std::string to_string(OutputModel m) {
    switch (m) {
        case OutputModel::GlobalFilter: return "global_filter";
        case OutputModel::LocalAverage: return "local_average";
        case OutputModel::Dwa: return "dwa";
    }
    return "?";
}

inline OutputModel output_model_from_string(const std::string& s) {
    if (s == "global_filter") return OutputModel::GlobalFilter;
    if (s == "local_average") return OutputModel::LocalAverage;
    if (s == "dwa") return OutputModel::Dwa;
    throw ParseError("unknown output model: " + s);
}

struct OutputCovarianceSpec {
    OutputModel model = OutputModel::GlobalFilter;
    double alpha = 1.0;
};

/// Everything needed to compute a posterior mean. Input points are columns
/// of train_inputs/target_inputs (1-D time grids become single-row
/// matrices). Training outputs Y have one row per training node, one column
/// per training input.
struct RegressionTask {
    std::shared_ptr<const Graph> graph;
    NodePartition partition; // DWA only: inputs = training nodes, outputs = targets
    OutputCovarianceSpec output;
    SEKernelParams kernel;
    double sigma2 = 5e-3;
    Eigen::MatrixXd train_inputs;
    Eigen::MatrixXd target_inputs;
    LowRankMatrix Y;
    std::vector<int> train_node_ids;
    std::vector<int> target_node_ids;
    Eigen::VectorXd target_col_labels;
};

struct PosteriorMean {
    LowRankMatrix M; // target nodes x target inputs
    std::vector<int> node_ids;
    Eigen::VectorXd col_labels;

    Eigen::MatrixXd dense() const { return M.dense(); }
};

struct AssembledProblem {
    SteinProblem problem;
    Eigen::MatrixXd KI_cross; // train inputs x target inputs
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> cross_output_apply;
    std::shared_ptr<const DwaModel> dwa; // null for the filter models
};

/// Builds the Stein problem and the two cross maps of the prediction step.
/// Filter models keep training and target nodes equal, so the output cross
/// map is K_O itself; the DWA model contributes its diagonal training block
/// and the transposed stationary cross block.
inline AssembledProblem assemble_problem(const RegressionTask& task) {
    if (!task.graph) throw DimensionError("task has no graph");
    task.kernel.validate();
    if (task.train_inputs.cols() != task.Y.cols())
        throw DimensionError("training outputs and inputs disagree on count");

    AssembledProblem a;
    Eigen::MatrixXd KI = gram(task.train_inputs, task.train_inputs, task.kernel);
    a.problem.KI = spd_operator_with_fallback(std::move(KI));
    a.KI_cross = gram(task.train_inputs, task.target_inputs, task.kernel);
    a.problem.sigma2 = task.sigma2;
    a.problem.rhs = task.Y;

    switch (task.output.model) {
        case OutputModel::GlobalFilter: {
            auto KO = global_filter_operator(*task.graph, {task.output.alpha});
            a.cross_output_apply = [KO](const Eigen::MatrixXd& U) {
                return KO->apply(U);
            };
            a.problem.KO = KO;
            break;
        }
        case OutputModel::LocalAverage: {
            auto KO = local_average_operator(*task.graph, {task.output.alpha});
            a.cross_output_apply = [KO](const Eigen::MatrixXd& U) {
                return KO->apply(U);
            };
            a.problem.KO = KO;
            break;
        }
        case OutputModel::Dwa: {
            a.dwa = dwa_model(*task.graph, task.partition);
            DwaOperators ops = dwa_output_operators(a.dwa);
            a.problem.KO = ops.KO;
            a.cross_output_apply = ops.cross_apply;
            break;
        }
    }
    a.problem.validate();
    return a;
}

enum class SolverChoice { Dense, Eig, Kpik, Lrpcg };

inline std::string to_string(SolverChoice s) {
    switch (s) {
        case SolverChoice::Dense: return "dense";
        case SolverChoice::Eig: return "eig";
        case SolverChoice::Kpik: return "kpik";
        case SolverChoice::Lrpcg: return "lrpcg";
    }
    return "?";
}

inline SolverChoice solver_from_string(const std::string& s) {
    if (s == "dense") return SolverChoice::Dense;
    if (s == "eig") return SolverChoice::Eig;
    if (s == "kpik") return SolverChoice::Kpik;
    if (s == "lrpcg") return SolverChoice::Lrpcg;
    throw ParseError("unknown solver: " + s);
}

/// Runs the chosen solver and maps the factored solution to predictions
/// M* = (output cross map applied to U) (K_I*^T V)^T. A non-converged solve
/// still predicts from its last iterate; the report says so.
inline std::pair<PosteriorMean, SolverReport> posterior_mean(
    const RegressionTask& task, SolverChoice choice, const SolverConfig& cfg) {
    AssembledProblem a = assemble_problem(task);
    LowRankMatrix X;
    SolverReport rep;
    switch (choice) {
        case SolverChoice::Kpik:
            std::tie(X, rep) = kpik_solve(a.problem, cfg);
            break;
        case SolverChoice::Lrpcg:
            std::tie(X, rep) = lrpcg_solve(a.problem, cfg);
            break;
        case SolverChoice::Dense: {
            const auto t0 = std::chrono::steady_clock::now();
            Eigen::MatrixXd Xd = dense_kron_solve(a.problem);
            rep.runtime_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            rep.solver_name = "dense";
            X = from_dense(Xd, cfg.trunc);
            rep.solution_rank = static_cast<int>(X.rank());
            rep.rel_residual = rel_residual(a.problem, X);
            rep.converged = rep.rel_residual <= cfg.rel_residual_tol;
            break;
        }
        case SolverChoice::Eig: {
            const auto t0 = std::chrono::steady_clock::now();
            Eigen::MatrixXd Xd = eig_stein_solve(a.problem);
            rep.runtime_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            rep.solver_name = "eig";
            X = from_dense(Xd, cfg.trunc);
            rep.solution_rank = static_cast<int>(X.rank());
            rep.rel_residual = rel_residual(a.problem, X);
            rep.converged = rep.rel_residual <= cfg.rel_residual_tol;
            break;
        }
    }

    PosteriorMean pm;
    pm.node_ids = task.target_node_ids;
    pm.col_labels = task.target_col_labels;
    const Eigen::Index m_star = static_cast<Eigen::Index>(task.target_node_ids.size());
    if (X.is_zero())
        pm.M = LowRankMatrix::zero(m_star, a.KI_cross.cols());
    else
        pm.M = LowRankMatrix(a.cross_output_apply(X.U), a.KI_cross.transpose() * X.V);
    return {std::move(pm), std::move(rep)};
}

/// Direct dense posterior mean over the vectorized Kronecker system; the
/// reference every solver path is compared against. Desk scale only.
inline PosteriorMean dense_gp_oracle(const RegressionTask& task) {
    AssembledProblem a = assemble_problem(task);
    const Eigen::Index m = a.problem.KO->dim();
    const Eigen::Index n = a.problem.KI->dim();
    if (m * n > 4000)
        throw SizeGuardError("dense_gp_oracle: training size exceeds 4000");

    Eigen::MatrixXd K =
        detail::kron(materialize(*a.problem.KI), materialize(*a.problem.KO));
    K.diagonal().array() += task.sigma2;
    Eigen::VectorXd w = K.ldlt().solve(detail::vec(task.Y.dense()));

    // Cross covariance: K_I* (x) K_O*, transposed onto the solve.
    Eigen::MatrixXd KO_cross =
        a.cross_output_apply(Eigen::MatrixXd::Identity(m, m)).transpose();
    Eigen::MatrixXd Kc = detail::kron(a.KI_cross, KO_cross);
    Eigen::VectorXd mu = Kc.transpose() * w;

    PosteriorMean pm;
    pm.node_ids = task.target_node_ids;
    pm.col_labels = task.target_col_labels;
    const Eigen::Index m_star = KO_cross.cols();
    const Eigen::Index n_star = a.KI_cross.cols();
    Eigen::MatrixXd M = detail::unvec(mu, m_star, n_star);
    pm.M = LowRankMatrix(std::move(M),
                         Eigen::MatrixXd::Identity(n_star, n_star));
    return pm;
}

/// Dense posterior covariance for the filter models at desk scale:
/// K** - K*^T (K + sigma2 I)^{-1} K* over the vectorized system.
inline Eigen::MatrixXd dense_posterior_covariance(const RegressionTask& task) {
    if (task.output.model == OutputModel::Dwa)
        throw UnsupportedCaseError(
            "posterior covariance needs the unspecified target block of the "
            "stationary model");
    AssembledProblem a = assemble_problem(task);
    const Eigen::Index m = a.problem.KO->dim();
    const Eigen::Index n = a.problem.KI->dim();
    const Eigen::Index m_star = m;
    const Eigen::Index n_star = a.KI_cross.cols();
    if (m * n > 4000 || m_star * n_star > 4000)
        throw SizeGuardError("dense_posterior_covariance: size guard exceeded");

    Eigen::MatrixXd KO_d = materialize(*a.problem.KO);
    Eigen::MatrixXd KI_d = materialize(*a.problem.KI);
    Eigen::MatrixXd KI_ss = gram(task.target_inputs, task.target_inputs, task.kernel);

    Eigen::MatrixXd K = detail::kron(KI_d, KO_d);
    K.diagonal().array() += task.sigma2;
    Eigen::MatrixXd Kc = detail::kron(a.KI_cross, KO_d);
    Eigen::MatrixXd Kss = detail::kron(KI_ss, KO_d);
    return Kss - Kc.transpose() * K.ldlt().solve(Kc);
}

} // namespace steingp
