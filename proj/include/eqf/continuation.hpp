#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eqf/eqfree.hpp"

namespace eqf {

/// A model whose micro dynamics depend on named parameters.
struct ModelFamily {
    std::function<CoarseModel(const ParameterSet&)> instantiate;
    /// Called once per accepted continuation point with its parameters and
    /// unhealed macro state. Optional.
    std::function<void(const ParameterSet&, const MacroState&, const EqFreeConfig&)> accept;
};

enum class Stability { Stable, Unstable, Marginal };

const char* to_string(Stability s);

struct BranchPoint {
    double param = 0.0;
    MacroState x_unhealed;
    MacroState x_healed;
    std::vector<std::complex<double>> eigenvalues;
    Stability stability = Stability::Marginal;
    int newton_iters = 0;
    double residual = 0.0;
    double arclength = 0.0;   ///< cumulative |(dp, dx)| from the first point
    double step = 0.0;        ///< arclength step that produced this point (0 for the first)

    bool stable() const { return stability == Stability::Stable; }
    double max_modulus() const;
    /// Imaginary part of the leading eigenvalue (0 for a real one).
    double leading_imag() const;
};

enum class EventType { Fold, Hopf, StabilityChange };

const char* to_string(EventType t);

struct BranchEvent {
    EventType type = EventType::Fold;
    double param = 0.0;
    MacroState x;             ///< interpolated unhealed state at the event
    double arclength = 0.0;   ///< strictly inside (points[before], points[after])
    std::size_t before = 0;
    std::size_t after = 0;
};

struct Branch {
    std::vector<BranchPoint> points;
    double step = 0.0;
    std::vector<BranchEvent> events;
    std::string stop_reason;
};

struct ContinuationOptions {
    double step = 0.01;            ///< arclength s; its sign sets the bootstrap direction in p
    int n_points = 100;
    double p_min = -1e300;
    double p_max = 1e300;
    int max_halvings = 3;
    double stability_band = 1e-3;
    double param_weight = 1.0;     ///< weight of p in the secant and arclength metric
    /// Stop once the first macro component leaves [x_min, x_max].
    double x_min = -1e300;
    double x_max = 1e300;
};

/// Pseudo-arclength continuation of coarse equilibria in parameter `name`.
/// (p_start, x_start) is refined with find_equilibrium first; the second
/// point comes from natural continuation at p_start + step.
Branch continue_branch(const ModelFamily& family, const ParameterSet& base,
                       const std::string& name, const EqFreeConfig& cfg, double p_start,
                       const MacroState& x_start, const ContinuationOptions& opts);

/// Classifies by max |lambda| with a marginal band around 1.
Stability classify(const std::vector<std::complex<double>>& eigenvalues, double band);

/// Folds (sign change of dp along the branch, refined on a quadratic
/// interpolant of p(s)) and stability changes (max |lambda| crossing 1,
/// refined by a secant step in arclength). A crossing with a complex
/// leading pair is reported as Hopf.
std::vector<BranchEvent> detect_events(const Branch& branch, double stability_band = 1e-3);

/// Points of a two-parameter curve.
struct CurvePoint {
    double p1 = 0.0;
    double p2 = 0.0;
    MacroState x;
    int newton_iters = 0;
};

struct Curve {
    std::vector<CurvePoint> points;
    std::string stop_reason;
};

struct TwoParamOptions {
    double step = 0.02;
    int n_points = 20;
    double p2_min = -1e300;
    double p2_max = 1e300;
    int max_halvings = 3;
    FdStep outer_fd{1e-4, 1e-5};   ///< FD step of the extended-system Jacobian
    double tol = 1e-6;             ///< Newton step tolerance of the extended system
};

/// Continues a fold in (p1, p2): unknowns (x, p1, p2), equations
/// {R M(t_skip+t0, L x) - R M(t_skip, L x) = 0, det(A - B) = 0, arclength}.
/// The seed is refined at fixed p2 first.
Curve fold_continue_2par(const ModelFamily& family, const ParameterSet& base,
                         const std::string& p1_name, const std::string& p2_name,
                         const EqFreeConfig& cfg, double p1_seed, const MacroState& x_seed,
                         const TwoParamOptions& opts);

/// Scalar onset indicator whose zero set is the curve being traced.
using OnsetTest = std::function<double(double p1, double p2)>;

struct OnsetOptions {
    double step = 0.02;
    int n_points = 10;
    double p2_min = -1e300;
    double p2_max = 1e300;
    double search_width = 0.1;    ///< half-width of the corrector line search
    double tol = 1e-4;            ///< bisection tolerance along the search line
    double p1_scale = 1.0;        ///< units of p1 relative to p2 in the geometry
};

/// Traces {test(p1, p2) = 0}: linear predictor along the curve, corrector by
/// bracketing and bisection on the line through the prediction orthogonal
/// to it. The first predictor direction is +p2 (or -p2 for negative step).
Curve onset_continue_2par(const OnsetTest& test, double p1_seed, double p2_seed,
                          const OnsetOptions& opts);

/// Hopf test from coarse eigenvalues: max |lambda| - 1 at the equilibrium
/// reached from x_guess by find_equilibrium.
OnsetTest coarse_hopf_test(const ModelFamily& family, const ParameterSet& base,
                           const std::string& p1_name, const std::string& p2_name,
                           const EqFreeConfig& cfg, const MacroState& x_guess);

/// Hopf curve of coarse equilibria in (p1, p2) starting at a located onset.
Curve hopf_continue_2par(const ModelFamily& family, const ParameterSet& base,
                         const std::string& p1_name, const std::string& p2_name,
                         const EqFreeConfig& cfg, double p1_seed, double p2_seed,
                         const MacroState& x_eq, const OnsetOptions& opts);

/// Locates the zero of `f` in [a, b] by bisection (f(a) f(b) <= 0 required).
double bisect(const std::function<double(double)>& f, double a, double b, double tol,
              int max_iter = 60);

}  // namespace eqf
