#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "steingp/kernels.hpp"
#include "test_helpers.hpp"

using namespace steingp;

TEST_CASE("squared-exponential kernel matches its closed form") {
    SEKernelParams p{2.0, 1.5};
    Eigen::VectorXd x(3), y(3);
    x << 1.0, 0.0, -1.0;
    y << 2.0, 2.0, 0.0;
    const double d2 = (x - y).squaredNorm();
    CHECK(se_kernel(x, y, p) ==
          Catch::Approx(1.5 * std::exp(-d2 / (2.0 * 4.0))).epsilon(1e-14));
    CHECK(se_kernel(x, x, p) == Catch::Approx(1.5).epsilon(1e-14));
    CHECK(se_kernel(x, y, p) == Catch::Approx(se_kernel(y, x, p)).epsilon(1e-15));
}

TEST_CASE("longer lengthscale increases correlation") {
    Eigen::VectorXd x(1), y(1);
    x << 0.0;
    y << 3.0;
    const double near = se_kernel(x, y, SEKernelParams{1.0, 1.0});
    const double far = se_kernel(x, y, SEKernelParams{10.0, 1.0});
    CHECK(far > near);
}

TEST_CASE("gram matrix equals pairwise evaluation") {
    SEKernelParams p{1.7, 0.8};
    const Eigen::MatrixXd A = testutil::random_matrix(4, 6, 21);
    const Eigen::MatrixXd B = testutil::random_matrix(4, 5, 22);
    const Eigen::MatrixXd G = gram(A, B, p);
    REQUIRE(G.rows() == 6);
    REQUIRE(G.cols() == 5);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(G(i, j) ==
                  Catch::Approx(se_kernel(A.col(i), B.col(j), p)).margin(1e-14));
}

TEST_CASE("gram of a point set with itself is symmetric positive semidefinite") {
    SEKernelParams p{1.0, 2.0};
    const Eigen::MatrixXd A = testutil::random_matrix(3, 12, 5);
    const Eigen::MatrixXd G = gram(A, A, p);
    CHECK((G - G.transpose()).norm() <= 1e-13 * G.norm());
    CHECK(G.diagonal().isApproxToConstant(2.0, 1e-12));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("time grid validation") {
    TimeGrid ok;
    ok.train_times = Eigen::Vector3d(0.0, 1.0, 2.0);
    ok.target_times = Eigen::Vector2d(0.5, 1.5);
    CHECK_NOTHROW(ok.validate());
    TimeGrid bad = ok;
    bad.train_times = Eigen::Vector3d(0.0, 2.0, 2.0);
    CHECK_THROWS_AS(bad.validate(), DimensionError);
    CHECK_THROWS_AS((SEKernelParams{0.0, 1.0}.validate()), DimensionError);
    CHECK_THROWS_AS((SEKernelParams{1.0, -1.0}.validate()), DimensionError);
}

TEST_CASE("as_point_row turns a time vector into 1-d points") {
    Eigen::VectorXd t(3);
    t << 5.0, 6.0, 7.0;
    const Eigen::MatrixXd P = as_point_row(t);
    REQUIRE(P.rows() == 1);
    REQUIRE(P.cols() == 3);
    CHECK(P(0, 1) == 6.0);
}

TEST_CASE("dense SPD operator: apply and solve invert each other") {
    const Eigen::MatrixXd M = testutil::random_spd(12, 33, 0.5, 3.0);
    auto op = spd_operator(M);
    REQUIRE(op->dim() == 12);
    const Eigen::MatrixXd X = testutil::random_matrix(12, 3, 44);
    CHECK((op->solve(op->apply(X)) - X).norm() <= 1e-8 * X.norm());
    CHECK((op->apply(op->solve(X)) - X).norm() <= 1e-8 * X.norm());
    CHECK((op->apply(X) - M * X).norm() <= 1e-13 * (M * X).norm());
}

TEST_CASE("dense SPD operator rejects bad matrices") {
    Eigen::MatrixXd asym = testutil::random_matrix(5, 5, 1);
    CHECK_THROWS_AS(spd_operator(asym), NotPositiveDefiniteError);
    CHECK_THROWS_WITH(spd_operator(asym),
                      Catch::Matchers::ContainsSubstring("symmetric"));

    Eigen::MatrixXd indef = testutil::random_spd(6, 2);
    indef -= 10.0 * Eigen::MatrixXd::Identity(6, 6);
    CHECK_THROWS_AS(spd_operator(indef), NotPositiveDefiniteError);

    Eigen::MatrixXd rect = testutil::random_matrix(4, 5, 3);
    CHECK_THROWS_AS(spd_operator(rect), DimensionError);
}

TEST_CASE("fallback jitter rescues a numerically semidefinite gram") {
    // Duplicated points make the gram exactly singular.
    Eigen::MatrixXd A(2, 6);
    A << 0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2;
    const Eigen::MatrixXd G = gram(A, A, SEKernelParams{1.0, 1.0});
    auto op = spd_operator_with_fallback(G);
    CHECK(op->jitter() > 0.0);
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(6);
    CHECK(op->apply(x).allFinite());
    CHECK(op->solve(x).allFinite());
}
