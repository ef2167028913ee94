#include "eqf/newton.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "eqf/errors.hpp"

namespace eqf {

double FdStep::at(double xi) const { return std::max(rel * std::abs(xi), abs_floor); }

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
    if (n <= 0) return;
    const int workers = std::clamp(threads, 1, n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

Eigen::MatrixXd fd_jacobian(const VectorFunction& f, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& fx, const FdStep& step, int threads) {
    const auto n = static_cast<int>(x.size());
    Eigen::MatrixXd jac(fx.size(), n);
    parallel_for(n, threads, [&](int j) {
        Eigen::VectorXd xp = x;
        const double dy = step.at(x(j));
        xp(j) += dy;
        jac.col(j) = (f(xp) - fx) / dy;
    });
    return jac;
}

NewtonResult newton_solve(const VectorFunction& f, const Eigen::VectorXd& x0,
                          const NewtonOptions& opts) {
    NewtonResult out;
    out.x = x0;
    Eigen::VectorXd fx = f(out.x);
    double res = fx.norm();

    for (int it = 1; it <= opts.max_iter; ++it) {
        Eigen::MatrixXd jac = fd_jacobian(f, out.x, fx, opts.fd, opts.threads);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible()) {
            // Report the first column that is (numerically) dependent on the others.
            int col = 0;
            for (int j = 0; j < jac.cols(); ++j) {
                if (jac.col(j).norm() == 0.0) { col = j; break; }
            }
            std::ostringstream os;
            os << "newton: singular finite-difference Jacobian (column " << col << ")";
            throw SingularJacobianError(col, os.str());
        }
        const Eigen::VectorXd full = -lu.solve(fx);
        out.last_step = full.norm();
        out.jacobian = std::move(jac);

        double damping = 1.0;
        Eigen::VectorXd trial = out.x + full;
        Eigen::VectorXd f_trial = f(trial);
        for (int k = 0; k < opts.max_halvings && !(f_trial.norm() < res) && res > 0.0; ++k) {
            damping *= 0.5;
            trial = out.x + damping * full;
            f_trial = f(trial);
        }
        if (!(f_trial.norm() < res) && damping < 1.0) {
            // No decrease at any damping; take the undamped step rather than stall.
            trial = out.x + full;
            f_trial = f(trial);
        }
        out.x = trial;
        fx = f_trial;
        res = fx.norm();
        out.iterations = it;
        if (out.last_step <= opts.tol) {
            out.residual_vector = fx;
            out.residual = res;
            return out;
        }
    }
    std::ostringstream os;
    os << "newton: no convergence after " << opts.max_iter << " iterations (residual " << res
       << ", last step " << out.last_step << ")";
    throw DivergenceError(res, opts.max_iter, os.str());
}

}  // namespace eqf
