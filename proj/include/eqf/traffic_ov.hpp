#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "eqf/continuation.hpp"
#include "eqf/eqfree.hpp"
#include "eqf/micro_sim.hpp"

/// Optimal-velocity car-following model on a ring road:
///   tau x_n'' + x_n' = V(x_{n+1} - x_n),  V(d) = v0 (tanh(d - h) + tanh(h)),
/// with x_{n+N} = x_n + L. State layout: (x_1..x_N, v_1..v_N).
namespace eqf::traffic {

struct OVParams {
    double tau = 0.588;
    double v0 = 0.9;
    double h = 1.2;
    int n_cars = 60;
    double ring_length = 60.0;
    double mu = 1.0;   ///< lifting scale

    double mean_headway() const { return ring_length / n_cars; }
    void validate() const;

    /// Reads tau, v0, h, N, L, mu from `p`; absent names keep their defaults.
    static OVParams from(const ParameterSet& p);
    ParameterSet to_parameter_set() const;
};

double optimal_velocity(double headway, const OVParams& p);
double optimal_velocity_slope(double headway, const OVParams& p);

void ov_rhs(const MicroState& u, const OVParams& p, MicroState& du);
MicroSystem make_system(const OVParams& p);

/// Headways x_{n+1} - x_n with the +L wrap on the last car.
Eigen::VectorXd headways(const MicroState& u, const OVParams& p);

/// Sample standard deviation of the headways (n = 1 macro state).
MacroState restrict_sigma(const MicroState& u, const OVParams& p);

/// A microscopic state used as the template of the lifting.
struct ReferenceProfile {
    Eigen::VectorXd headways;
    Eigen::VectorXd velocities;
    double sigma_ref = 0.0;

    /// Builds a profile from a micro state; sigma_ref is its restriction.
    static ReferenceProfile from_state(const MicroState& u, const OVParams& p);
    /// Throws LiftingDomainError if sigma_ref is not positive or the
    /// headways do not close the ring.
    void validate(const OVParams& p) const;
};

/// Scales the reference headway deviations to mu * sigma and assigns each
/// car the optimal velocity of its new headway. Positions start at x_1 = 0.
/// Throws LiftingDomainError naming the first non-positive headway.
MicroState lift_mu(const MacroState& sigma, const ReferenceProfile& ref, const OVParams& p);

/// Critical v0 of the uniform flow for each h: the smallest v0 at which a
/// Fourier mode theta_k = 2 pi k / N of the linearization crosses Re = 0.
std::vector<std::pair<double, double>> analytic_hopf_curve(const OVParams& p,
                                                           const std::vector<double>& h_values);

/// Growth rate max Re(lambda) of the linearized uniform flow for mode k.
double uniform_flow_growth_rate(const OVParams& p, int k);

/// Long-run jam: starts from a single-wave headway perturbation of
/// amplitude 0.5 plus seeded noise of size 1e-3 and integrates `duration`.
ReferenceProfile generate_reference(const OVParams& p, double duration, double dt,
                                    unsigned seed = 1);

/// Single Fourier mode k of small amplitude: the shape of the least stable
/// perturbation of uniform flow, used near sigma = 0.
ReferenceProfile sinusoidal_reference(const OVParams& p, double amplitude = 1e-2, int k = 1);

/// Plain-text columns (index, headway, velocity) with a '#' header of params.
void write_reference(std::ostream& os, const ReferenceProfile& ref, const OVParams& p);
ReferenceProfile read_reference(std::istream& is);

CoarseModel make_coarse_model(const OVParams& p, const ReferenceProfile& ref);

/// Builds micro states directly from headways (x_1 = 0) and velocities.
MicroState state_from_headways(const Eigen::VectorXd& headways, const Eigen::VectorXd& velocities);

/// Parameterized OV family for continuation. When `refresh` is set, each
/// accepted equilibrium replaces the reference profile by its healed micro
/// state M(t_skip + t0, L x), so the lifting follows the branch.
class OVFamily {
public:
    OVFamily(OVParams base, ReferenceProfile ref, bool refresh);

    ModelFamily family();
    const ReferenceProfile& reference() const { return *ref_; }
    void set_reference(ReferenceProfile ref);
    /// Reference in use when the k-th accepted point was computed.
    const std::vector<ReferenceProfile>& history() const { return *history_; }

private:
    OVParams base_;
    std::shared_ptr<ReferenceProfile> ref_;
    std::shared_ptr<std::vector<ReferenceProfile>> history_;
    bool refresh_;
};

/// Simulates from `u0` and returns sigma averaged over the final `window`
/// time units.
double long_run_sigma(const OVParams& p, const MicroState& u0, double duration, double window,
                      double dt);

}  // namespace eqf::traffic
