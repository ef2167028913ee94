#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "eqf/micro_sim.hpp"
#include "eqf/newton.hpp"

namespace eqf {

/// Coarse variable x (n = 1 for the traffic sigma, n = 2 for pedestrian (m, m')).
using MacroState = Eigen::VectorXd;

/// Lifting L: R^n -> R^N and restriction R: R^N -> R^n for one model.
/// R(L(x)) need not equal x.
struct OperatorPair {
    std::function<MicroState(const MacroState&)> lift;
    std::function<MacroState(const MicroState&)> restrict;
    Eigen::Index macro_dim = 0;
    Eigen::Index micro_dim = 0;
};

/// A microscopic system together with its lifting and restriction, at fixed
/// parameter values.
struct CoarseModel {
    MicroSystem system;
    OperatorPair ops;
};

struct EqFreeConfig {
    double t_skip = 100.0;   ///< healing time
    double t0 = 100.0;       ///< evolve time of the fixed-point map
    double delta = 1.0;      ///< burst length for derivative estimates
    double micro_dt = kDefaultMicroDt;
    FdStep fd;               ///< fd_step: relative 1e-4, absolute floor 1e-6
    double newton_tol = 1e-8;
    int newton_max_iter = 30;
    int threads = 1;

    /// Throws ConfigError unless all durations and tolerances are positive.
    void validate() const;
    NewtonOptions newton() const;
};

/// R M(t, L x) at several times along one trajectory. `times` must be
/// non-decreasing; the result has one entry per time.
std::vector<MacroState> restrict_along(const CoarseModel& model, const EqFreeConfig& cfg,
                                       const MacroState& x, const std::vector<double>& times);

/// Explicit stepper R M(t, L x).
MacroState phi_explicit(const CoarseModel& model, const EqFreeConfig& cfg, double t,
                        const MacroState& x);

/// Implicit stepper: the y solving R M(t_skip, L y) = R M(t_skip + t, L x),
/// Newton seeded at y = x.
MacroState phi_implicit(const CoarseModel& model, const EqFreeConfig& cfg, double t,
                        const MacroState& x);

struct Equilibrium {
    MacroState unhealed;   ///< the Newton unknown x
    MacroState healed;     ///< R M(t_skip, L x)
    int newton_iters = 0;
    double residual = 0.0;
};

/// Solves R M(t_skip + t0, L x) = R M(t_skip, L x).
Equilibrium find_equilibrium(const CoarseModel& model, const EqFreeConfig& cfg,
                             const MacroState& x_guess);

/// Fixed-point residual R M(t_skip + t0, L x) - R M(t_skip, L x).
MacroState equilibrium_residual(const CoarseModel& model, const EqFreeConfig& cfg,
                                const MacroState& x);

struct StabilityResult {
    std::vector<std::complex<double>> eigenvalues;
    Eigen::MatrixXd a;   ///< d/dx R M(t_skip + t0, L x)
    Eigen::MatrixXd b;   ///< d/dx R M(t_skip, L x)
    double max_modulus() const;
    bool stable(double band = 0.0) const { return max_modulus() < 1.0 - band; }
};

/// Eigenvalues of A v = lambda B v. Throws SingularJacobianError naming the
/// offending column when B is numerically singular.
StabilityResult stability(const CoarseModel& model, const EqFreeConfig& cfg, const MacroState& x_eq);

/// Eigenvalues of the pencil (A, B) via B^{-1} A.
StabilityResult generalized_eigenvalues(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct ProjectiveResult {
    std::vector<MacroState> trajectory;   ///< x_0, x_1, ...
    std::optional<std::string> error;     ///< set when Newton failed mid-trajectory
};

/// Coarse forward Euler: F(x_k) from a burst of length delta, then
/// R M(t_skip, L x_{k+1}) - R M(t_skip, L x_k) = dt_macro * F(x_k) for x_{k+1}.
ProjectiveResult projective_integrate(const CoarseModel& model, const EqFreeConfig& cfg,
                                      const MacroState& x0, double dt_macro, int n_steps);

/// Finds y with R M(t_skip, L y) = x_target and returns u = M(t_skip, L y).
MicroState match_restriction(const CoarseModel& model, const EqFreeConfig& cfg,
                             const MacroState& x_target);

struct HealingProfile {
    std::vector<double> t;        ///< sample times after t_skip
    std::vector<double> d;        ///< |R M(t_skip + t, u0) - R M(t_skip + t, u1)|
    std::vector<double> s_heal;   ///< sample times in [0, t_skip]
    std::vector<double> d_heal;   ///< same quantity during healing
    double epsilon_hat = 0.0;     ///< slope of log d over [t_skip, t_skip + horizon]
    double gamma_hat = 0.0;       ///< minus slope of log d over [0, t_skip]
    double offset = 0.0;          ///< intercept of the post-healing fit, log C - gamma t_skip
    double prefactor() const;     ///< C = exp(offset + gamma_hat * t_skip)
    double t_skip = 0.0;
};

/// Divergence of two micro states under the same dynamics, sampled every
/// `sample_dt` time units, with log-linear fits of the healing and
/// post-healing phases.
HealingProfile healing_diagnostic(const CoarseModel& model, const EqFreeConfig& cfg,
                                  const MicroState& u0, const MicroState& u1, double horizon,
                                  double sample_dt = 1.0);

}  // namespace eqf
