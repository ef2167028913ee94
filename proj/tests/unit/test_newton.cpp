#include <doctest.h>

#include <cmath>

#include "eqf/errors.hpp"
#include "eqf/newton.hpp"

using namespace eqf;

TEST_CASE("newton finds sqrt 2") {
    auto f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x(0) * x(0) - 2.0); };
    NewtonOptions o;
    o.tol = 1e-12;
    const NewtonResult r = newton_solve(f, Eigen::VectorXd::Constant(1, 1.0), o);
    CHECK(r.x(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.residual < 1e-10);
}

TEST_CASE("fd jacobian matches the analytic one") {
    auto f = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd y(2);
        y << std::sin(x(0)) * x(1), x(0) * x(0) + 3.0 * x(1);
        return y;
    };
    Eigen::VectorXd x(2);
    x << 0.7, -1.3;
    Eigen::Matrix2d exact;
    exact << std::cos(0.7) * -1.3, std::sin(0.7), 1.4, 3.0;
    for (int threads : {1, 2}) {
        const Eigen::MatrixXd j = fd_jacobian(f, x, f(x), FdStep{}, threads);
        CHECK((j - exact).cwiseAbs().maxCoeff() < 1e-3);
    }
}

TEST_CASE("fd step has an absolute floor") {
    const FdStep s{1e-4, 1e-6};
    CHECK(s.at(10.0) == doctest::Approx(1e-3));
    CHECK(s.at(0.0) == doctest::Approx(1e-6));
}

TEST_CASE("no root: divergence error") {
    auto f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x(0) * x(0) + 1.0); };
    NewtonOptions o;
    o.max_iter = 20;
    CHECK_THROWS_AS(newton_solve(f, Eigen::VectorXd::Constant(1, 0.5), o), Error);
}

TEST_CASE("constant map: singular jacobian") {
    auto f = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, 1.0); };
    CHECK_THROWS_AS(newton_solve(f, Eigen::VectorXd::Constant(1, 0.0), NewtonOptions{}),
                    SingularJacobianError);
}

TEST_CASE("parallel_for visits every index once") {
    std::vector<int> seen(37, 0);
    parallel_for(37, 4, [&](int i) { seen[static_cast<std::size_t>(i)] += 1; });
    for (int v : seen) CHECK(v == 1);
}
