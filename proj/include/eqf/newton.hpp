#pragma once

#include <functional>

#include <Eigen/Dense>

namespace eqf {

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Forward-difference increments: dy_i = max(rel * |x_i|, abs_floor).
struct FdStep {
    double rel = 1e-4;
    double abs_floor = 1e-6;

    double at(double xi) const;
};

struct NewtonOptions {
    double tol = 1e-8;        ///< converged when the full Newton step norm <= tol
    int max_iter = 30;
    int max_halvings = 8;     ///< backtracking halvings when the residual grows
    FdStep fd;
    int threads = 1;          ///< concurrent Jacobian columns
};

struct NewtonResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residual_vector;
    Eigen::MatrixXd jacobian;  ///< FD Jacobian at the last iterate before the final step
    double residual = 0.0;     ///< |f(x)| at the returned x
    double last_step = 0.0;
    int iterations = 0;
};

/// Forward-difference Jacobian of f at x, given fx = f(x). Columns are
/// independent and evaluated on up to `threads` workers.
Eigen::MatrixXd fd_jacobian(const VectorFunction& f, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& fx, const FdStep& step, int threads = 1);

/// Newton's method with a forward-difference Jacobian and residual-based
/// backtracking. Throws DivergenceError when max_iter is exhausted and
/// SingularJacobianError when the Jacobian cannot be factorized.
NewtonResult newton_solve(const VectorFunction& f, const Eigen::VectorXd& x0,
                          const NewtonOptions& opts);

/// Runs body(i) for i in [0, n) on up to `threads` std::threads.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

}  // namespace eqf
