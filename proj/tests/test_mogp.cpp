#include <catch2/catch_amalgamated.hpp>

#include "steingp/mogp.hpp"
#include "test_helpers.hpp"

using namespace steingp;

namespace {

Eigen::VectorXd linspace(double lo, double hi, int n) {
    return Eigen::VectorXd::LinSpaced(n, lo, hi);
}

/// Filter-model task: every node is both a training and a target node;
/// training happens at n_train times, prediction at n_target new times.
RegressionTask filter_task(std::shared_ptr<const Graph> g, OutputModel model,
                           double alpha, int n_train, int n_target,
                           std::uint64_t seed) {
    RegressionTask t;
    t.graph = std::move(g);
    t.output.model = model;
    t.output.alpha = alpha;
    // Lengthscale near the grid spacing keeps the time Gram well conditioned.
    t.kernel = SEKernelParams{0.8, 1.0};
    t.sigma2 = 5e-3;
    t.train_inputs = as_point_row(linspace(0.0, 10.0, n_train));
    t.target_inputs = as_point_row(linspace(0.5, 10.5, n_target));
    const int m = t.graph->node_count();
    t.Y = from_dense(testutil::random_matrix(m, n_train, seed),
                     TruncationPolicy::none());
    t.train_node_ids.resize(m);
    t.target_node_ids.resize(m);
    for (int i = 0; i < m; ++i) t.train_node_ids[i] = t.target_node_ids[i] = i;
    t.target_col_labels = linspace(0.5, 10.5, n_target);
    return t;
}

RegressionTask dwa_task(std::shared_ptr<const Graph> g, const NodePartition& part,
                        int n_train, int n_target, std::uint64_t seed) {
    RegressionTask t;
    t.graph = std::move(g);
    t.partition = part;
    t.output.model = OutputModel::Dwa;
    t.kernel = SEKernelParams{0.7, 1.0};
    t.sigma2 = 1e-2;
    t.train_inputs = as_point_row(linspace(0.0, 8.0, n_train));
    t.target_inputs = as_point_row(linspace(0.0, 8.0, n_target));
    const int n1 = static_cast<int>(part.input_nodes.size());
    t.Y = from_dense(testutil::random_matrix(n1, n_train, seed),
                     TruncationPolicy::none());
    t.train_node_ids = part.input_nodes;
    t.target_node_ids = part.output_nodes;
    t.target_col_labels = linspace(0.0, 8.0, n_target);
    return t;
}

/// Naive vectorized GP posterior mean, assembled from scratch: dense output
/// covariance, dense Gram matrices, one big factorization.
Eigen::MatrixXd naive_posterior(const Eigen::MatrixXd& KO,
                                const Eigen::MatrixXd& KO_cross,
                                const Eigen::MatrixXd& KI,
                                const Eigen::MatrixXd& KI_cross, double sigma2,
                                const Eigen::MatrixXd& Y) {
    Eigen::MatrixXd K = testutil::naive_kron(KI, KO);
    K.diagonal().array() += sigma2;
    const Eigen::VectorXd w = K.partialPivLu().solve(testutil::naive_vec(Y));
    const Eigen::MatrixXd Kc = testutil::naive_kron(KI_cross, KO_cross);
    return testutil::naive_unvec(Kc.transpose() * w, KO_cross.cols(),
                                 KI_cross.cols());
}

} // namespace

TEST_CASE("problem assembly wires dimensions and blocks") {
    auto g = std::make_shared<Graph>(testutil::random_connected_graph(15, 10, 2));
    RegressionTask t = filter_task(g, OutputModel::GlobalFilter, 1.0, 12, 5, 1);
    AssembledProblem a = assemble_problem(t);
    CHECK(a.problem.KO->dim() == 15);
    CHECK(a.problem.KI->dim() == 12);
    CHECK(a.problem.sigma2 == t.sigma2);
    CHECK(a.KI_cross.rows() == 12);
    CHECK(a.KI_cross.cols() == 5);
    CHECK(a.dwa == nullptr);
    // The output cross map of a filter model is K_O itself.
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(15, 15);
    CHECK((a.cross_output_apply(I) - materialize(*a.problem.KO)).norm() <= 1e-12);

    NodePartition part = partition_nodes(*g, 0.6, 3);
    RegressionTask td = dwa_task(g, part, 9, 9, 2);
    AssembledProblem ad = assemble_problem(td);
    const auto n1 = static_cast<Eigen::Index>(part.input_nodes.size());
    const auto n2 = static_cast<Eigen::Index>(part.output_nodes.size());
    CHECK(ad.problem.KO->dim() == n1);
    REQUIRE(ad.dwa != nullptr);
    const Eigen::MatrixXd In1 = Eigen::MatrixXd::Identity(n1, n1);
    CHECK(ad.cross_output_apply(In1).rows() == n2);

    RegressionTask bad = filter_task(g, OutputModel::GlobalFilter, 1.0, 12, 5, 1);
    bad.train_inputs = as_point_row(linspace(0.0, 1.0, 7));
    CHECK_THROWS_AS(assemble_problem(bad), DimensionError);
}

TEST_CASE("dense reference matches a from-scratch vectorized posterior") {
    auto g = std::make_shared<Graph>(
        testutil::random_connected_graph(12, 9, 5, /*weighted=*/true));
    const double alpha = 0.8;
    RegressionTask t = filter_task(g, OutputModel::GlobalFilter, alpha, 10, 6, 7);

    const Eigen::MatrixXd L(laplacian_matrix(*g));
    const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(12, 12) + alpha * L;
    const Eigen::MatrixXd KO = (S * S).inverse();
    const Eigen::MatrixXd KI = gram(t.train_inputs, t.train_inputs, t.kernel);
    const Eigen::MatrixXd KI_cross = gram(t.train_inputs, t.target_inputs, t.kernel);
    const Eigen::MatrixXd mu =
        naive_posterior(KO, KO, KI, KI_cross, t.sigma2, t.Y.dense());

    const PosteriorMean pm = dense_gp_oracle(t);
    REQUIRE(pm.dense().rows() == 12);
    REQUIRE(pm.dense().cols() == 6);
    CHECK(testutil::rel_fro(pm.dense(), mu) <= 1e-10);
}

TEST_CASE("dense reference matches the from-scratch posterior for dwa") {
    auto g = std::make_shared<Graph>(
        testutil::random_connected_graph(14, 12, 9, /*weighted=*/true));
    NodePartition part = partition_nodes(*g, 0.5, 4);
    RegressionTask t = dwa_task(g, part, 8, 5, 3);
    t.target_inputs = as_point_row(linspace(1.0, 7.0, 5));
    t.target_col_labels = linspace(1.0, 7.0, 5);

    const int n1 = static_cast<int>(part.input_nodes.size());
    const int n2 = static_cast<int>(part.output_nodes.size());
    const Eigen::MatrixXd W(g->adjacency());
    Eigen::MatrixXd W21(n2, n1), W22(n2, n2);
    Eigen::VectorXd D1(n1), D2(n2);
    for (int i = 0; i < n1; ++i) D1[i] = W.row(part.input_nodes[i]).sum();
    for (int j = 0; j < n2; ++j) {
        D2[j] = W.row(part.output_nodes[j]).sum();
        for (int i = 0; i < n1; ++i)
            W21(j, i) = W(part.output_nodes[j], part.input_nodes[i]);
        for (int i = 0; i < n2; ++i)
            W22(j, i) = W(part.output_nodes[j], part.output_nodes[i]);
    }
    const Eigen::MatrixXd KO = D1.asDiagonal();
    const Eigen::MatrixXd G =
        Eigen::MatrixXd::Identity(n2, n2) - W22 * D2.cwiseInverse().asDiagonal();
    // Cross block between targets and training nodes.
    const Eigen::MatrixXd KO_cross =
        (G.partialPivLu().solve(W21)).transpose();
    const Eigen::MatrixXd KI = gram(t.train_inputs, t.train_inputs, t.kernel);
    const Eigen::MatrixXd KI_cross = gram(t.train_inputs, t.target_inputs, t.kernel);
    const Eigen::MatrixXd mu =
        naive_posterior(KO, KO_cross, KI, KI_cross, t.sigma2, t.Y.dense());

    const PosteriorMean pm = dense_gp_oracle(t);
    CHECK(testutil::rel_fro(pm.dense(), mu) <= 1e-10);
}

TEST_CASE("every solver path reproduces the dense reference") {
    auto g = std::make_shared<Graph>(
        testutil::random_connected_graph(18, 14, 11, /*weighted=*/true));
    SolverConfig cfg;
    cfg.trunc = TruncationPolicy{1e-13, -1};

    const auto check_all = [&](const RegressionTask& t) {
        const Eigen::MatrixXd ref = dense_gp_oracle(t).dense();
        for (SolverChoice c : {SolverChoice::Dense, SolverChoice::Eig,
                               SolverChoice::Kpik, SolverChoice::Lrpcg}) {
            auto [pm, rep] = posterior_mean(t, c, cfg);
            INFO(to_string(c) << " rel_residual = " << rep.rel_residual);
            CHECK(rep.converged);
            CHECK(testutil::rel_fro(pm.dense(), ref) <= 1e-6);
            CHECK(pm.node_ids == t.target_node_ids);
            CHECK((pm.col_labels - t.target_col_labels).norm() == 0.0);
            if (c == SolverChoice::Dense || c == SolverChoice::Eig)
                CHECK(rep.iterations == 0);
        }
    };

    check_all(filter_task(g, OutputModel::GlobalFilter, 1.2, 14, 6, 21));
    check_all(filter_task(g, OutputModel::LocalAverage, 0.7, 14, 6, 22));
    NodePartition part = partition_nodes(*g, 0.6, 5);
    check_all(dwa_task(g, part, 12, 7, 23));
}

TEST_CASE("posterior covariance is symmetric positive semidefinite") {
    auto g = std::make_shared<Graph>(testutil::random_connected_graph(10, 6, 13));
    RegressionTask t = filter_task(g, OutputModel::GlobalFilter, 1.0, 8, 4, 31);
    const Eigen::MatrixXd C = dense_posterior_covariance(t);
    REQUIRE(C.rows() == 10 * 4);
    CHECK((C - C.transpose()).norm() <= 1e-10 * C.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);

    // Observing at the target times themselves must shrink the variance
    // below the prior scale.
    RegressionTask t0 = filter_task(g, OutputModel::GlobalFilter, 1.0, 8, 4, 31);
    t0.target_inputs = t0.train_inputs.leftCols(4);
    const Eigen::MatrixXd C0 = dense_posterior_covariance(t0);
    const Eigen::MatrixXd prior =
        testutil::naive_kron(gram(t0.target_inputs, t0.target_inputs, t0.kernel),
                             materialize(*assemble_problem(t0).problem.KO));
    CHECK(C0.trace() < prior.trace());
}

TEST_CASE("posterior covariance refuses the stationary model") {
    auto g = std::make_shared<Graph>(testutil::random_connected_graph(10, 6, 17));
    NodePartition part = partition_nodes(*g, 0.5, 2);
    RegressionTask t = dwa_task(g, part, 6, 6, 37);
    CHECK_THROWS_AS(dense_posterior_covariance(t), UnsupportedCaseError);
}

TEST_CASE("non-converged solves still deliver finite predictions") {
    auto g = std::make_shared<Graph>(
        testutil::random_connected_graph(20, 15, 41, /*weighted=*/true));
    RegressionTask t = filter_task(g, OutputModel::GlobalFilter, 1.0, 16, 5, 43);
    t.sigma2 = 1e-6; // hard: tiny regularization
    SolverConfig cfg;
    cfg.max_iter = 1;
    cfg.precond_kpik_steps = 0; // plain CG: one step cannot reach 1e-12
    cfg.rel_residual_tol = 1e-12;
    auto [pm, rep] = posterior_mean(t, SolverChoice::Lrpcg, cfg);
    CHECK_FALSE(rep.converged);
    CHECK(pm.dense().allFinite());
    CHECK(pm.dense().rows() == 20);
    CHECK(pm.dense().cols() == 5);
}

TEST_CASE("name round trips") {
    for (auto c : {SolverChoice::Dense, SolverChoice::Eig, SolverChoice::Kpik,
                   SolverChoice::Lrpcg})
        CHECK(solver_from_string(to_string(c)) == c);
    for (auto m : {OutputModel::GlobalFilter, OutputModel::LocalAverage,
                   OutputModel::Dwa})
        CHECK(output_model_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(solver_from_string("cholesky"), ParseError);
    CHECK_THROWS_AS(output_model_from_string("filter"), ParseError);
}
