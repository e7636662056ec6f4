#include <catch2/catch_amalgamated.hpp>

#include "steingp/data_gen.hpp"
#include "test_helpers.hpp"

using namespace steingp;

TEST_CASE("interface dynamics match a dense per-step recomputation") {
    Graph g = testutil::random_connected_graph(50, 40, 7, /*weighted=*/true);
    AllenCahnParams p;
    p.n_steps = 10;
    p.seed = 123;
    const DataMatrix d = allen_cahn_generate(g, p);
    REQUIRE(d.values.rows() == 50);
    REQUIRE(d.values.cols() == 10);
    CHECK(d.values.col(0).minCoeff() >= -1.0);
    CHECK(d.values.col(0).maxCoeff() <= 1.0);
    CHECK(d.row_ids.front() == 0);
    CHECK(d.row_ids.back() == 49);
    CHECK(d.col_times[0] == 0.0);
    CHECK(d.col_times[9] == 9.0);

    // Dense oracle: same recurrence, dense LU instead of the sparse path.
    const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(50, 50) +
                              p.tau * p.eps * p.diff *
                                  Eigen::MatrixXd(laplacian_matrix(g));
    const auto lu = S.partialPivLu();
    Eigen::VectorXd u = d.values.col(0);
    for (int k = 1; k < p.n_steps; ++k) {
        u = lu.solve(u + (p.tau / p.eps) * (u - u.array().cube().matrix()).eval());
        CHECK((d.values.col(k) - u).norm() <= 1e-10 * std::max(1.0, u.norm()));
    }
}

TEST_CASE("interface dynamics are reproducible and stable") {
    Graph g = testutil::random_connected_graph(30, 20, 3);
    AllenCahnParams p;
    p.n_steps = 300;
    p.seed = 9;
    const DataMatrix a = allen_cahn_generate(g, p);
    const DataMatrix b = allen_cahn_generate(g, p);
    CHECK((a.values - b.values).norm() == 0.0);

    p.seed = 10;
    const DataMatrix c = allen_cahn_generate(g, p);
    CHECK((a.values - c.values).norm() > 0.0);

    CHECK(a.values.allFinite());
    CHECK(a.values.cwiseAbs().maxCoeff() < 10.0);
}

TEST_CASE("random-walk fixed point is the degree-proportional vector") {
    Graph g = testutil::random_connected_graph(80, 60, 5, /*weighted=*/true);
    const Eigen::VectorXd s = stationary_vector(g, 1e-10);
    const Eigen::VectorXd expected = g.degrees() / g.degrees().sum();
    CHECK((s - expected).norm() <= 1e-7);
    CHECK(std::abs(s.sum() - 1.0) <= 1e-12); // the iteration preserves mass
}

TEST_CASE("bipartite graphs make the walk oscillate") {
    Graph c4(4, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}, {0, 3, 1.0}});
    CHECK_THROWS_AS(stationary_vector(c4, 1e-8, 10000), ConvergenceError);
    CHECK_THROWS_WITH(stationary_vector(c4, 1e-8, 10000),
                      Catch::Matchers::ContainsSubstring("stalled"));
}

TEST_CASE("stationary snapshots are the vector plus calibrated noise") {
    Graph g = testutil::random_connected_graph(200, 150, 11);
    const Eigen::VectorXd s = stationary_vector(g, 1e-10);

    // Same tolerance means the same deterministic iteration, bit for bit.
    const DataMatrix clean = stationary_generate(g, 5, 0.0, 42, 1e-10);
    for (int j = 0; j < 5; ++j)
        CHECK((clean.values.col(j) - s).norm() == 0.0);

    const double noise_std = 1e-3;
    const DataMatrix noisy = stationary_generate(g, 50, noise_std, 42, 1e-10);
    const Eigen::MatrixXd noise = noisy.values - s.replicate(1, 50);
    const double sample_std =
        std::sqrt(noise.array().square().sum() / (noise.size() - 1.0));
    CHECK(std::abs(sample_std / noise_std - 1.0) <= 0.05);

    const DataMatrix again = stationary_generate(g, 50, noise_std, 42, 1e-10);
    CHECK((again.values - noisy.values).norm() == 0.0);

    CHECK_THROWS_AS(stationary_generate(g, 0, 0.1, 1), DimensionError);
    CHECK_THROWS_AS(stationary_generate(g, 5, -0.1, 1), DimensionError);
}

TEST_CASE("time split column selection") {
    TimeSplit strided{0.1, TimeSplitLayout::Strided};
    const std::vector<int> s = train_column_indices(100, strided);
    REQUIRE(s.size() == 10);
    for (int j = 0; j < 10; ++j) CHECK(s[j] == 10 * j);

    TimeSplit prefix{0.1, TimeSplitLayout::Prefix};
    const std::vector<int> p = train_column_indices(100, prefix);
    REQUIRE(p.size() == 10);
    for (int j = 0; j < 10; ++j) CHECK(p[j] == j);

    const std::vector<int> all = train_column_indices(7, TimeSplit{1.0});
    REQUIRE(all.size() == 7);

    CHECK_THROWS_AS(train_column_indices(10, TimeSplit{0.0}), DimensionError);
    CHECK_THROWS_AS(train_column_indices(10, TimeSplit{1.5}), DimensionError);
}

TEST_CASE("dataset split for the stationary model uses time as input") {
    Graph g = testutil::random_connected_graph(40, 30, 13);
    auto gp = std::make_shared<Graph>(g);
    NodePartition part = partition_nodes(g, 0.3, 1);
    DataMatrix d = stationary_generate(g, 60, 1e-3, 8);

    RegressionTask t = split_dataset(d, gp, part, TimeSplit{0.1}, OutputModel::Dwa);
    const auto n1 = static_cast<Eigen::Index>(part.input_nodes.size());
    REQUIRE(t.train_inputs.rows() == 1);
    REQUIRE(t.train_inputs.cols() == 6);
    for (int j = 0; j < 6; ++j) CHECK(t.train_inputs(0, j) == d.col_times[10 * j]);
    CHECK(t.target_inputs.cols() == 60);
    CHECK(t.Y.rows() == n1);
    CHECK(t.Y.cols() == 6);
    CHECK(t.train_node_ids == part.input_nodes);
    CHECK(t.target_node_ids == part.output_nodes);
    CHECK((t.target_col_labels - d.col_times).norm() == 0.0);

    // Training outputs are the selected rows and columns of the raw matrix.
    const Eigen::MatrixXd Y = t.Y.dense();
    for (Eigen::Index i = 0; i < n1; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(std::abs(Y(i, j) - d.values(part.input_nodes[i], 10 * j)) <= 1e-9);
}

TEST_CASE("dataset split for filter models uses node signals as input") {
    Graph g = testutil::random_connected_graph(25, 15, 19);
    auto gp = std::make_shared<Graph>(g);
    NodePartition part = partition_nodes(g, 0.2, 2);
    AllenCahnParams p;
    p.n_steps = 40;
    p.seed = 4;
    DataMatrix d = allen_cahn_generate(g, p);

    RegressionTask t = split_dataset(d, gp, part, TimeSplit{0.25, TimeSplitLayout::Prefix},
                                     OutputModel::GlobalFilter);
    const auto n_in = static_cast<Eigen::Index>(part.input_nodes.size());
    REQUIRE(t.train_inputs.rows() == n_in);
    REQUIRE(t.train_inputs.cols() == 10);
    CHECK(t.target_inputs.rows() == n_in);
    CHECK(t.target_inputs.cols() == 40);
    CHECK(t.Y.rows() == 25);
    CHECK(t.Y.cols() == 10);
    CHECK(t.train_node_ids == d.row_ids);
    CHECK(t.target_node_ids == d.row_ids);

    // Input points are the signal columns restricted to the training nodes.
    for (Eigen::Index i = 0; i < n_in; ++i)
        for (int j = 0; j < 10; ++j)
            CHECK(t.train_inputs(i, j) == d.values(part.input_nodes[i], j));
}

TEST_CASE("training compression reports rank and rejects bad values") {
    const Eigen::MatrixXd Y = testutil::random_lowrank(20, 15, 3, 21).dense();
    double err = -1.0;
    const LowRankMatrix L = compress_training_outputs(Y, {1e-10, -1}, &err);
    CHECK(L.rank() == 3);
    CHECK(err <= 1e-10 * Y.norm());
    CHECK(testutil::rel_fro(L.dense(), Y) <= 1e-12);

    Eigen::MatrixXd bad = Y;
    bad(2, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(compress_training_outputs(bad, {1e-10, -1}), DimensionError);
}

TEST_CASE("data matrices survive a save/load round trip") {
    testutil::TempDir dir("data_gen");
    DataMatrix d;
    d.values = testutil::random_matrix(6, 4, 33);
    d.row_ids = {3, 1, 4, 1, 5, 9};
    d.col_times = Eigen::VectorXd::LinSpaced(4, 0.5, 3.5);
    const std::string path = dir.file("m.csv");
    save_data_matrix(d, path);

    const DataMatrix r = load_data_matrix(path);
    CHECK((r.values - d.values).norm() == 0.0); // 17 digits round-trip exactly
    CHECK(r.row_ids == d.row_ids);
    CHECK((r.col_times - d.col_times).norm() == 0.0);
}

TEST_CASE("data matrix loader reports malformed input with line numbers") {
    testutil::TempDir dir("data_gen");
    const std::string ragged = dir.file("ragged.csv");
    testutil::write_file(ragged, "1,2,3\n4,5,6\n7,8\n");
    CHECK_THROWS_WITH(load_data_matrix(ragged),
                      Catch::Matchers::ContainsSubstring("line 3"));

    const std::string bad = dir.file("bad.csv");
    testutil::write_file(bad, "1,2\n3,oops\n");
    CHECK_THROWS_WITH(load_data_matrix(bad),
                      Catch::Matchers::ContainsSubstring("line 2"));

    const std::string empty = dir.file("empty.csv");
    testutil::write_file(empty, "");
    CHECK_THROWS_AS(load_data_matrix(empty), ParseError);

    // A sidecar that disagrees with the matrix shape is rejected.
    const std::string mism = dir.file("mism.csv");
    testutil::write_file(mism, "1,2\n3,4\n");
    testutil::write_file(mism + ".index",
                         "# rows: node ids\n0 1 2\n# cols: time labels\n0 1\n");
    CHECK_THROWS_WITH(load_data_matrix(mism),
                      Catch::Matchers::ContainsSubstring("sidecar"));
}

TEST_CASE("loading without a sidecar falls back to default labels") {
    testutil::TempDir dir("data_gen");
    const std::string path = dir.file("plain.csv");
    testutil::write_file(path, "1.5,2.5\n3.5,4.5\n");
    const DataMatrix d = load_data_matrix(path);
    REQUIRE(d.values.rows() == 2);
    CHECK(d.row_ids == std::vector<int>{0, 1});
    CHECK(d.col_times[1] == 1.0);
}
