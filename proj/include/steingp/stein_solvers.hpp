#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "steingp/covariance.hpp"
#include "steingp/errors.hpp"
#include "steingp/lowrank.hpp"
#include "steingp/random.hpp"

namespace steingp {

/// K_O X K_I + sigma2 X = C with low-rank C. KO acts on rows (output
/// nodes), KI on columns (training inputs).
struct SteinProblem {
    std::shared_ptr<const CovarianceOperator> KO;
    std::shared_ptr<const CovarianceOperator> KI;
    double sigma2 = 0.0;
    LowRankMatrix rhs;

    void validate() const {
        if (!KO || !KI) throw DimensionError("SteinProblem: operators missing");
        if (!(sigma2 > 0.0))
            throw DimensionError("SteinProblem: sigma2 must be positive");
        if (rhs.rows() != KO->dim() || rhs.cols() != KI->dim())
            throw DimensionError("SteinProblem: rhs is " + std::to_string(rhs.rows()) +
                                 "x" + std::to_string(rhs.cols()) + ", operators are " +
                                 std::to_string(KO->dim()) + " and " +
                                 std::to_string(KI->dim()));
    }
};

struct SolverConfig {
    double rel_residual_tol = 1e-8;
    int max_iter = 50;
    TruncationPolicy trunc{1e-10, -1};
    int precond_kpik_steps = 2;
};

struct SolverReport {
    std::string solver_name;
    int iterations = 0;
    int solution_rank = 0;
    double runtime_seconds = 0.0;
    double rel_residual = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;

    // diagnostics beyond the metrics row
    double galerkin_residual = std::numeric_limits<double>::quiet_NaN();
    double inner_solve_residual = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> residual_history;
    std::string note;
};

/// C - (K_O X K_I + sigma2 X) in factored form, no truncation.
inline LowRankMatrix residual_lowrank(const SteinProblem& p, const LowRankMatrix& X) {
    const TruncationPolicy none = TruncationPolicy::none();
    if (X.is_zero()) return p.rhs;
    LowRankMatrix KX = stein_apply(*p.KO, *p.KI, p.sigma2, X, none);
    return lr_sum(p.rhs, KX, -1.0, none);
}

inline double rel_residual(const SteinProblem& p, const LowRankMatrix& X) {
    const double rn = stable_norm_f(residual_lowrank(p, X));
    const double cn = stable_norm_f(p.rhs);
    return cn > 0.0 ? rn / cn : rn;
}

namespace detail {

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

inline Eigen::VectorXd vec(const Eigen::MatrixXd& M) {
    return Eigen::VectorXd::Map(M.data(), M.size());
}

inline Eigen::MatrixXd unvec(const Eigen::VectorXd& v, Eigen::Index rows,
                             Eigen::Index cols) {
    return Eigen::MatrixXd::Map(v.data(), rows, cols);
}

/// Power-iteration estimate of the spectral radius, geometric mean of the
/// trailing growth factors.
inline double spectral_radius_estimate(const Eigen::MatrixXd& M, int iters = 100) {
    if (M.rows() == 0) return 0.0;
    Rng rng(0x5eed5eedULL);
    Eigen::VectorXd v = rng.gaussian_matrix(M.rows(), 1);
    v.normalize();
    std::vector<double> growth;
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd w = M * v;
        const double nrm = w.norm();
        if (nrm == 0.0) return 0.0;
        growth.push_back(nrm);
        v = w / nrm;
    }
    double logsum = 0.0;
    const int tail = std::min<int>(20, static_cast<int>(growth.size()));
    for (int k = 0; k < tail; ++k)
        logsum += std::log(growth[growth.size() - 1 - k]);
    return std::exp(logsum / tail);
}

} // namespace detail

/// Dense oracle: factorizes K_I (x) K_O + sigma2 I on the vectorized system.
/// Desk scale only.
inline Eigen::MatrixXd dense_kron_solve(const SteinProblem& p) {
    p.validate();
    const Eigen::Index m = p.KO->dim();
    const Eigen::Index n = p.KI->dim();
    if (m * n > 4000)
        throw SizeGuardError("dense_kron_solve: problem size " +
                             std::to_string(m * n) + " exceeds 4000");
    Eigen::MatrixXd K = detail::kron(materialize(*p.KI), materialize(*p.KO));
    K.diagonal().array() += p.sigma2;
    Eigen::VectorXd x = K.ldlt().solve(detail::vec(p.rhs.dense()));
    return detail::unvec(x, m, n);
}

/// Dense solver through the eigendecompositions of both operators: the
/// transformed system decouples into Hadamard divisions. Needs K_O positive
/// definite.
inline Eigen::MatrixXd eig_stein_solve(const SteinProblem& p) {
    p.validate();
    Eigen::MatrixXd KO = materialize(*p.KO);
    Eigen::MatrixXd KI = materialize(*p.KI);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esO(0.5 * (KO + KO.transpose()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esI(0.5 * (KI + KI.transpose()));
    if (esO.eigenvalues().minCoeff() <= 0.0)
        throw NotPositiveDefiniteError(
            "eigendecomposition solver needs positive definite output covariance");
    const Eigen::MatrixXd& UO = esO.eigenvectors();
    const Eigen::MatrixXd& UI = esI.eigenvectors();
    Eigen::MatrixXd Q = UO.transpose() * p.rhs.dense() * UI;
    for (Eigen::Index i = 0; i < Q.rows(); ++i)
        for (Eigen::Index j = 0; j < Q.cols(); ++j)
            Q(i, j) /= esI.eigenvalues()[j] + p.sigma2 / esO.eigenvalues()[i];
    return UO * esO.eigenvalues().cwiseInverse().asDiagonal() * Q * UI.transpose();
}

/// Fixed-point iteration for X = A X B + C: plain X_{k+1} = A X_k B + C, or
/// the squared variant that doubles the powers of A and B each step.
/// Requires rho(A) rho(B) < 1.
inline Eigen::MatrixXd smith_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                   const Eigen::MatrixXd& C, bool squared,
                                   double tol = 1e-12, int max_iter = 1000) {
    if (A.rows() != A.cols() || B.rows() != B.cols())
        throw DimensionError("smith_solve: A and B must be square");
    if (C.rows() != A.rows() || C.cols() != B.rows())
        throw DimensionError("smith_solve: C dimensions do not match A, B");
    const double rho = detail::spectral_radius_estimate(A) *
                       detail::spectral_radius_estimate(B);
    if (rho >= 1.0 - 1e-12)
        throw NonContractiveError("smith_solve: spectral radius product " +
                                  std::to_string(rho) + " is not below 1");
    Eigen::MatrixXd X = C;
    Eigen::MatrixXd Ak = A;
    Eigen::MatrixXd Bk = B;
    for (int k = 0; k < max_iter; ++k) {
        Eigen::MatrixXd Xn = squared ? (Ak * X * Bk + X).eval() : (A * X * B + C).eval();
        const double delta = (Xn - X).norm();
        X.swap(Xn);
        if (delta <= tol * std::max(X.norm(), 1e-300)) return X;
        if (squared) {
            Ak = (Ak * Ak).eval();
            Bk = (Bk * Bk).eval();
        }
    }
    throw ConvergenceError("smith_solve: no convergence within " +
                           std::to_string(max_iter) + " iterations");
}

namespace detail {

/// Appends to basis B the component of cand outside span(B): two
/// Gram-Schmidt passes, then a rank-revealing QR with an absolute deflation
/// cutoff taken from the candidate's incoming scale. Returns the accepted
/// orthonormal block.
inline Eigen::MatrixXd orth_extend(Eigen::MatrixXd& B, Eigen::MatrixXd cand,
                                   double deflate_tol) {
    if (cand.cols() == 0) return cand;
    double scale = 0.0;
    for (Eigen::Index j = 0; j < cand.cols(); ++j)
        scale = std::max(scale, cand.col(j).norm());
    if (scale == 0.0) return Eigen::MatrixXd(cand.rows(), 0);
    if (B.cols() > 0) {
        cand -= B * (B.transpose() * cand).eval();
        cand -= B * (B.transpose() * cand).eval();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cand);
    const Eigen::MatrixXd& R = qr.matrixQR();
    Eigen::Index rank = 0;
    const Eigen::Index rmax = std::min(cand.rows(), cand.cols());
    for (Eigen::Index i = 0; i < rmax; ++i) {
        if (std::abs(R(i, i)) >= deflate_tol * scale)
            ++rank;
        else
            break;
    }
    if (rank == 0) return Eigen::MatrixXd(cand.rows(), 0);
    Eigen::MatrixXd Q =
        qr.householderQ() * Eigen::MatrixXd::Identity(cand.rows(), rank);
    Eigen::MatrixXd merged(B.rows() > 0 ? B.rows() : cand.rows(), B.cols() + rank);
    if (B.cols() > 0)
        merged << B, Q;
    else
        merged = Q;
    B.swap(merged);
    return Q;
}

/// Galerkin-projected symmetric Sylvester solve T_A Y + Y T_B = Chat via two
/// eigendecompositions. Returns false on nonpositive denominators (the
/// instability mode of the projected solves).
inline bool projected_sylvester(const Eigen::MatrixXd& TA, const Eigen::MatrixXd& TB,
                                const Eigen::MatrixXd& Chat, Eigen::MatrixXd& Y,
                                double& galerkin_rel) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esA(TA);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esB(TB);
    Eigen::MatrixXd Ct = esA.eigenvectors().transpose() * Chat * esB.eigenvectors();
    for (Eigen::Index i = 0; i < Ct.rows(); ++i)
        for (Eigen::Index j = 0; j < Ct.cols(); ++j) {
            const double denom = esA.eigenvalues()[i] + esB.eigenvalues()[j];
            if (!(denom > 0.0)) return false;
            Ct(i, j) /= denom;
        }
    Y = esA.eigenvectors() * Ct * esB.eigenvectors().transpose();
    const double cn = Chat.norm();
    galerkin_rel = cn > 0.0 ? (TA * Y + Y * TB - Chat).norm() / cn : 0.0;
    return true;
}

/// Extended-Krylov Galerkin solver core. The Stein equation is carried in
/// Sylvester orientation A X' + X' B = C' with A = sigma2 K_I^{-1},
/// B = K_O, C' = (K_I^{-1} V_C) U_C^T, X' = X^T. Two bases grow per
/// iteration, each by one forward and one inverse block per side.
/// fixed_steps > 0 runs exactly that many extensions with a single candidate
/// extraction at the end (the preconditioner mode); otherwise every
/// iteration extracts a truncated candidate and checks the true Stein
/// residual against cfg.rel_residual_tol.
inline LowRankMatrix kpik_core(const SteinProblem& p, const SolverConfig& cfg,
                               int fixed_steps, SolverReport& rep) {
    const Eigen::Index m = p.KO->dim();
    const Eigen::Index n = p.KI->dim();
    rep.solver_name = "kpik";
    if (p.rhs.is_zero()) {
        rep.converged = true;
        rep.rel_residual = 0.0;
        return LowRankMatrix::zero(m, n);
    }

    const auto applyA = [&](const Eigen::MatrixXd& x) {
        return (p.sigma2 * p.KI->solve(x)).eval();
    };
    const auto applyAinv = [&](const Eigen::MatrixXd& x) {
        return (p.KI->apply(x) / p.sigma2).eval();
    };

    // Seeds: the Sylvester right-hand side factors.
    const Eigen::MatrixXd C1 = p.KI->solve(p.rhs.V);
    const Eigen::MatrixXd& C2 = p.rhs.U;
    {
        const double vn = p.rhs.V.norm();
        rep.inner_solve_residual =
            vn > 0.0 ? (p.KI->apply(C1) - p.rhs.V).norm() / vn : 0.0;
    }

    const double deflate_tol = std::max(cfg.trunc.tol, 1e-12);
    Eigen::MatrixXd Vb(n, 0), Wb(m, 0);
    Eigen::MatrixXd AV(n, 0), BW(m, 0);
    Eigen::MatrixXd fA, gA, fB, gB; // chain carriers

    const double normC = stable_norm_f(p.rhs);
    LowRankMatrix best = LowRankMatrix::zero(m, n);
    double best_rel = std::numeric_limits<double>::infinity();
    const int max_steps = fixed_steps > 0 ? fixed_steps : cfg.max_iter;

    for (int it = 1; it <= max_steps; ++it) {
        // A side (time dimension): forward A-chain, inverse chain.
        Eigen::MatrixXd candfA = (it == 1) ? C1 : (fA.cols() ? applyA(fA) : fA);
        Eigen::MatrixXd candgA =
            (it == 1) ? applyAinv(C1) : (gA.cols() ? applyAinv(gA) : gA);
        fA = orth_extend(Vb, candfA, deflate_tol);
        gA = orth_extend(Vb, candgA, deflate_tol);
        // B side (output dimension).
        Eigen::MatrixXd candfB = (it == 1) ? C2 : (fB.cols() ? p.KO->apply(fB) : fB);
        Eigen::MatrixXd candgB =
            (it == 1) ? p.KO->solve(C2) : (gB.cols() ? p.KO->solve(gB) : gB);
        fB = orth_extend(Wb, candfB, deflate_tol);
        gB = orth_extend(Wb, candgB, deflate_tol);

        const Eigen::Index newA = fA.cols() + gA.cols();
        const Eigen::Index newB = fB.cols() + gB.cols();
        bool stagnated = false;
        if (newA == 0 && newB == 0) {
            // No fresh directions on either side. In tolerance mode the last
            // iteration already solved on this exact basis, so stop. In
            // fixed-step mode no candidate exists yet: fall through and solve
            // on what the basis spans instead of returning nothing.
            stagnated = true;
            if (fixed_steps <= 0 || Vb.cols() == 0 || Wb.cols() == 0) {
                rep.note = "basis stagnated before reaching the tolerance";
                break;
            }
            rep.note = "basis stagnated; solved on the spanned subspace";
        }
        if (newA > 0) {
            Eigen::MatrixXd fresh(n, newA);
            if (fA.cols() && gA.cols())
                fresh << fA, gA;
            else
                fresh = fA.cols() ? fA : gA;
            AV.conservativeResize(n, AV.cols() + newA);
            AV.rightCols(newA) = applyA(fresh);
        }
        if (newB > 0) {
            Eigen::MatrixXd fresh(m, newB);
            if (fB.cols() && gB.cols())
                fresh << fB, gB;
            else
                fresh = fB.cols() ? fB : gB;
            BW.conservativeResize(m, BW.cols() + newB);
            BW.rightCols(newB) = p.KO->apply(fresh);
        }

        rep.iterations = it;

        const bool full = Vb.cols() >= n && Wb.cols() >= m;
        const bool last = it == max_steps || full || stagnated;
        if (fixed_steps > 0 && !last) continue;

        Eigen::MatrixXd TA = Vb.transpose() * AV;
        TA = 0.5 * (TA + TA.transpose()).eval();
        Eigen::MatrixXd TB = Wb.transpose() * BW;
        TB = 0.5 * (TB + TB.transpose()).eval();
        Eigen::MatrixXd Chat = (Vb.transpose() * C1) * (Wb.transpose() * C2).transpose();

        Eigen::MatrixXd Y;
        double galerkin = std::numeric_limits<double>::quiet_NaN();
        if (!projected_sylvester(TA, TB, Chat, Y, galerkin)) {
            rep.note = "projected system produced a nonpositive spectral shift";
            break;
        }
        rep.galerkin_residual = galerkin;

        // X = W Y^T V^T; truncate through the SVD of the small core.
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& s = svd.singularValues();
        const double s1 = s.size() ? s[0] : 0.0;
        Eigen::Index keep = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            const bool under_cap = cfg.trunc.max_rank < 0 || keep < cfg.trunc.max_rank;
            if (s[i] > 0.0 && s[i] >= cfg.trunc.tol * s1 && under_cap)
                ++keep;
            else
                break;
        }
        LowRankMatrix cand = LowRankMatrix::zero(m, n);
        if (keep > 0) {
            const Eigen::VectorXd sq = s.head(keep).array().sqrt();
            cand = LowRankMatrix(Wb * svd.matrixV().leftCols(keep) * sq.asDiagonal(),
                                 Vb * svd.matrixU().leftCols(keep) * sq.asDiagonal());
        }

        if (fixed_steps > 0) {
            rep.solution_rank = static_cast<int>(cand.rank());
            return cand;
        }

        const double rel =
            normC > 0.0 ? stable_norm_f(residual_lowrank(p, cand)) / normC : 0.0;
        rep.residual_history.push_back(rel);
        if (rel < best_rel) {
            best_rel = rel;
            best = cand;
        }
        if (rel <= cfg.rel_residual_tol) {
            rep.converged = true;
            break;
        }
        if (full) {
            rep.note = "bases reached full dimension";
            break;
        }
    }

    rep.rel_residual = best_rel;
    rep.solution_rank = static_cast<int>(best.rank());
    return best;
}

} // namespace detail

/// Inexact Krylov-plus-inverse-Krylov projection solver.
inline std::pair<LowRankMatrix, SolverReport> kpik_solve(const SteinProblem& p,
                                                         const SolverConfig& cfg) {
    p.validate();
    SolverReport rep;
    const auto t0 = std::chrono::steady_clock::now();
    LowRankMatrix X = detail::kpik_core(p, cfg, 0, rep);
    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(X), std::move(rep)};
}

/// Low-rank preconditioned conjugate gradients; every iterate is truncated
/// and inner products are Frobenius trace products. The preconditioner is a
/// fixed number of extended-Krylov projection steps on the current residual.
/// On a nonpositive curvature or preconditioner inner product the solve
/// restarts once from the current iterate before giving up.
inline std::pair<LowRankMatrix, SolverReport> lrpcg_solve(const SteinProblem& p,
                                                          const SolverConfig& cfg) {
    p.validate();
    SolverReport rep;
    rep.solver_name = "lrpcg";
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index m = p.KO->dim();
    const Eigen::Index n = p.KI->dim();

    const auto finish = [&](LowRankMatrix X) {
        rep.solution_rank = static_cast<int>(X.rank());
        rep.runtime_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        return std::make_pair(std::move(X), std::move(rep));
    };

    if (p.rhs.is_zero()) {
        rep.converged = true;
        rep.rel_residual = 0.0;
        return finish(LowRankMatrix::zero(m, n));
    }

    const auto precond = [&](const LowRankMatrix& R) {
        if (cfg.precond_kpik_steps <= 0 || R.is_zero()) return R;
        SteinProblem sub{p.KO, p.KI, p.sigma2, R};
        SolverReport sub_rep;
        LowRankMatrix Z = detail::kpik_core(sub, cfg, cfg.precond_kpik_steps, sub_rep);
        // A degenerate projection step must never zero out the search
        // direction; unpreconditioned CG is always a valid fallback.
        if (Z.is_zero()) return R;
        return Z;
    };

    // A converged iterate usually carries rank the tolerance never asked for:
    // per-iteration truncation is relative to the iterate itself, not to the
    // target accuracy, so directions that stopped mattering survive. Return
    // the shortest singular-value prefix that still meets the tolerance; the
    // report carries the recomputed residual of what is actually returned.
    const auto compress_converged = [&](LowRankMatrix X, double rel) {
        rep.rel_residual = rel;
        if (X.rank() <= 1) return X;
        const LowRankMatrix S = truncate(X, TruncationPolicy{1e-15, -1});
        if (S.is_zero()) return X;
        const auto prefix = [&S](Eigen::Index k) {
            return LowRankMatrix(S.U.leftCols(k), S.V.leftCols(k));
        };
        Eigen::Index lo = 1, hi = S.rank();
        if (rel_residual(p, prefix(hi)) > cfg.rel_residual_tol) return X;
        while (lo < hi) {
            const Eigen::Index mid = lo + (hi - lo) / 2;
            if (rel_residual(p, prefix(mid)) <= cfg.rel_residual_tol)
                hi = mid;
            else
                lo = mid + 1;
        }
        LowRankMatrix Xc = prefix(hi);
        rep.rel_residual = rel_residual(p, Xc);
        return Xc;
    };
    const auto amult = [&](const LowRankMatrix& x) {
        return stein_apply(*p.KO, *p.KI, p.sigma2, x, cfg.trunc);
    };

    const double normC = stable_norm_f(p.rhs);
    LowRankMatrix X = LowRankMatrix::zero(m, n);
    LowRankMatrix R = truncate(p.rhs, cfg.trunc);
    LowRankMatrix Z = precond(R);
    LowRankMatrix P = Z;
    double rz = trace_prod(R, Z);
    bool restarted = false;

    for (int it = 1; it <= cfg.max_iter; ++it) {
        rep.iterations = it;
        LowRankMatrix T = amult(P);
        const double pt = trace_prod(P, T);
        bool bad_step = !(pt > 0.0) || !(rz > 0.0) || !std::isfinite(rz / pt);
        LowRankMatrix R_prev = R;
        if (!bad_step) {
            const double alpha = rz / pt;
            X = lr_sum(X, P, alpha, cfg.trunc);
            R = lr_sum(R, T, -alpha, cfg.trunc);
        }

        const double rel = rel_residual(p, X);
        rep.residual_history.push_back(rel);
        rep.rel_residual = rel;
        if (rel <= cfg.rel_residual_tol) {
            rep.converged = true;
            return finish(compress_converged(std::move(X), rel));
        }

        if (bad_step) {
            if (restarted) {
                rep.note = "nonpositive curvature twice; stopped at the best iterate";
                return finish(std::move(X));
            }
            restarted = true;
            R = residual_lowrank(p, X);
            R = truncate(R, cfg.trunc);
            Z = precond(R);
            P = Z;
            rz = trace_prod(R, Z);
            continue;
        }

        Z = precond(R);
        const double rz_new = trace_prod(R, Z);
        if (!(rz_new > 0.0)) {
            if (restarted) {
                rep.note = "preconditioned inner product lost positivity twice";
                return finish(std::move(X));
            }
            restarted = true;
            R = truncate(residual_lowrank(p, X), cfg.trunc);
            Z = precond(R);
            P = Z;
            rz = trace_prod(R, Z);
            continue;
        }
        // The projection-step preconditioner is a different map on every
        // residual it sees, so the classic ratio form loses conjugacy and
        // stalls in waves. The difference form <R - R_prev, Z> / rz stays
        // conjugate under a changing preconditioner; clamp at zero to fall
        // back to a plain preconditioned descent direction.
        double beta = (rz_new - trace_prod(R_prev, Z)) / rz;
        if (!(beta > 0.0) || !std::isfinite(beta)) beta = 0.0;
        P = lr_sum(Z, P, beta, cfg.trunc);
        rz = rz_new;
    }

    rep.note = rep.note.empty() ? "iteration budget exhausted" : rep.note;
    return finish(std::move(X));
}

} // namespace steingp
