#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqf/eqfree.hpp"
#include "eqf/micro_sim.hpp"

/// Two counterflowing crowds in a corridor of height H, periodic in x with
/// length `length`, split at x = 0 by a wall of thickness t with a door of
/// width w. Red walks towards -x, blue towards +x.
///
/// Force on pedestrian i:
///   (v_desired e_i - v_i) / tau
///   + sum_j A exp((2R - d_ij) / B) n_ij
///   + sum_walls A_wall exp((R - d_iw) / B_wall) n_iw
/// e_i points at the door opening until the door is behind the pedestrian.
/// Once a pedestrian is past the door it no longer interacts with the other
/// crowd, so walkers returning around the ring do not block the queue.
///
/// State layout for n = 2 N pedestrians (red first, then blue):
///   (x_1..x_n, y_1..y_n, vx_1..vx_n, vy_1..vy_n).
namespace eqf::ped {

struct PedParams {
    int n_per_crowd = 100;
    double w = 0.7;            ///< door width
    double r_v0 = 1.0;         ///< red desired speed / blue desired speed
    double v0 = 1.0;           ///< blue desired speed
    double length = 40.0;      ///< ring length of the corridor
    double height = 3.0;
    double thickness = 0.4;    ///< door wall thickness
    double radius = 0.17;
    double a = 5.0;            ///< pair repulsion strength
    double b = 0.1;            ///< pair repulsion range
    double a_wall = 5.0;
    double b_wall = 0.1;
    double tau = 0.5;          ///< relaxation time
    double kappa_width = 2.0;  ///< lambda_kappa of the door kernel

    void validate() const;
    /// Reads N, w, r_v0, v0, length, height, thickness, radius, A, B,
    /// A_wall, B_wall, tau, kappa_width; absent names keep their defaults.
    static PedParams from(const ParameterSet& ps);
    ParameterSet to_parameter_set() const;

    Eigen::Index count() const { return 2 * static_cast<Eigen::Index>(n_per_crowd); }
    /// Pair interactions are dropped beyond this distance (force < A e^-10).
    double cutoff() const { return 2.0 * radius + 10.0 * b; }
    /// +1 for blue, -1 for red.
    double direction(Eigen::Index i) const { return i < n_per_crowd ? -1.0 : 1.0; }
    double desired_speed(Eigen::Index i) const { return i < n_per_crowd ? r_v0 * v0 : v0; }
};

/// Names accepted by PedParams::from.
std::vector<std::string> parameter_names();

/// Maps x into [-length/2, length/2).
double wrap(double x, double length);
double pair_force(double d, const PedParams& p);
double wall_force(double d, const PedParams& p);
/// Whether a pedestrian walking in direction s at x is past the door.
bool passed(double x, double s, const PedParams& p);
/// Unit vector of the desired walking direction.
Eigen::Vector2d desired_direction(double x, double y, double s, const PedParams& p);
/// Sum of wall forces at (x, y): side walls and both door jambs.
Eigen::Vector2d wall_forces(double x, double y, const PedParams& p);

void sf_rhs(const MicroState& u, const PedParams& p, MicroState& du);
/// RK4-ready system; the post-step map wraps x onto the ring.
MicroSystem make_system(const PedParams& p);

/// Thrown when a crowd carries no weight near the door.
class DegenerateStateError : public Error {
public:
    using Error::Error;
};

/// (m, m') with m = (m_red + m_blue) / 2, m_c the kappa-weighted mean x of
/// crowd c, kappa(x) = exp(-x^2 / (2 lambda^2)); m' by the quotient rule.
MacroState restrict_m(const MicroState& u, const PedParams& p);

/// Density p(d) = a d + b in the distance d >= start from the door, per unit
/// corridor length.
struct DensityLine {
    double a = 0.0;
    double b = 1.0;
    double start = 0.0;

    double at(double d) const { return a * d + b; }
    /// Integral of p over [start, d].
    double mass(double d) const;
    /// End of the span holding `n` pedestrians. Throws LiftingDomainError
    /// when p reaches 0 first.
    double span_end(double n) const;
    /// Distance at which the mass reaches q n (inverse CDF).
    double quantile(double q, double n) const;
};

/// Uniform density of a crowd packed in lanes of spacing 2.1 R, starting at
/// t/2 + 2R from the door.
DensityLine packed_density(const PedParams& p);
/// Queue distances pooled over several snapshots.
struct DensitySamples {
    std::vector<double> distances;
    int snapshots = 0;
};

/// Least-squares line through a histogram of the samples over [start, q95]
/// (pedestrians squeezed into the door below start and the sparse tail beyond
/// the 95% quantile are left out), rescaled so that the span holds `crowd`
/// pedestrians.
DensityLine fit_density(const DensitySamples& samples, double start, double crowd, int bins = 20);
/// Bins of one packed row (2.1 R) over [start, q95], between 4 and 20. Finer
/// bins resolve the rows of a clogged crowd instead of its density.
int density_bins(const DensitySamples& samples, double start, const PedParams& p);
/// Relative L1 mismatch between that histogram and `line`, both normalized
/// to unit mass.
double density_l1_error(const DensitySamples& samples, const DensityLine& line, int bins = 20);
/// Distances from the door of the pedestrians of crowd c (0 red, 1 blue)
/// still in front of it.
std::vector<double> queue_distances(const MicroState& u, const PedParams& p, int crowd);

struct LiftOptions {
    unsigned seed = 1;
    double jitter = 0.02;   ///< lateral jitter amplitude
    double tol = 1e-9;      ///< secant tolerance on m
};

/// Places both crowds on their lines by stratified quantiles, lanes across
/// the corridor with seeded jitter shared by the two crowds, then retreats
/// one crowd (red for m > 0, blue for m < 0) until m matches. Velocities 0.
MicroState lift_linear(const MacroState& x, const DensityLine& red, const DensityLine& blue,
                       const PedParams& p, const LiftOptions& opts = {});

/// Swaps crowds and reflects x -> -x, vx -> -vx.
MicroState mirror(const MicroState& u, const PedParams& p);

CoarseModel make_coarse_model(const PedParams& p, const DensityLine& red, const DensityLine& blue,
                              const LiftOptions& opts = {});

/// Simulates `duration` from a packed lift at m = `m_start` and pools both
/// crowds' queue distances once per time unit over the second half.
std::pair<DensitySamples, DensitySamples> sample_queues(const PedParams& p, double duration,
                                                        double m_start, double dt,
                                                        const LiftOptions& opts = {});
std::pair<DensityLine, DensityLine> fit_densities(const PedParams& p, double duration,
                                                  double m_start, double dt,
                                                  const LiftOptions& opts = {});

/// RK4 step of the pedestrian dynamics; the stiffest pair contact has
/// omega dt well below the stability limit at this step.
inline constexpr double kPedestrianMicroDt = 0.02;

struct PoincareOptions {
    double t_cap = 400.0;       ///< time allowed for the two crossings
    double sample_dt = 0.05;    ///< sampling interval of m'
    double hysteresis = 0.02;   ///< a maximum counts only this far above the preceding minimum
    double time_tol = 1e-6;     ///< bisection tolerance of the crossing time
};

struct PoincareResult {
    bool blocked = false;
    MacroState x_next;               ///< coarse state at the second crossing
    double crossing_time = 0.0;      ///< time of the second crossing
    double first_crossing = 0.0;
    double amplitude = 0.0;          ///< (max - min) / 2 over the returned cycle
    MicroState u_next;               ///< micro state at the second crossing
};

/// Lifts x0, evolves, and returns the second crossing of {m' = 0, m'' < 0};
/// the first crossing is healing. Works on any model whose restriction
/// yields (m, m').
PoincareResult poincare_map(const CoarseModel& model, const EqFreeConfig& cfg,
                            const MacroState& x0, const PoincareOptions& opts);
/// Same, starting from a micro state.
PoincareResult poincare_map_from(const CoarseModel& model, const EqFreeConfig& cfg,
                                 const MicroState& u0, const PoincareOptions& opts);

/// Iterates the map `iterations` times and returns the last result. Stops
/// early when blocked.
PoincareResult iterate_map(const CoarseModel& model, const EqFreeConfig& cfg, const MacroState& x0,
                           const PoincareOptions& opts, int iterations);

struct AmplitudeSettings {
    PoincareOptions map;
    int iterations = 8;            ///< map iterations per probe
    int average = 4;               ///< amplitude is averaged over this many final iterates
    double m_start = 0.3;          ///< coarse state the first lift starts from
    bool fitted_density = false;   ///< fit density lines instead of packed crowds
    double fit_time = 500.0;
    double refit_distance = 0.02;  ///< refit when w or r_v0 moves further than this
    double micro_dt = kPedestrianMicroDt;
    LiftOptions lift;
};

/// Oscillation amplitude of the coarse map as a function of the parameters,
/// with density lines cached between nearby parameter points.
class AmplitudeProbe {
public:
    AmplitudeProbe(PedParams base, AmplitudeSettings settings);

    PedParams params(const ParameterSet& overrides) const;
    CoarseModel model(const PedParams& p);
    /// Iterates the map from (m_start, 0). The returned amplitude is the mean
    /// over the last `average` iterates, 0 when any iterate is blocked.
    PoincareResult probe(const ParameterSet& overrides);
    double amplitude(const ParameterSet& overrides) { return probe(overrides).amplitude; }
    const AmplitudeSettings& settings() const { return settings_; }

private:
    std::pair<DensityLine, DensityLine> densities(const PedParams& p);

    PedParams base_;
    AmplitudeSettings settings_;
    bool cached_ = false;
    PedParams cache_params_;
    std::pair<DensityLine, DensityLine> cache_;
};

/// Plain-text rows (crowd, id, x, y, vx, vy) under a '#' header with the
/// parameters and time.
void write_snapshot(std::ostream& os, const MicroState& u, const PedParams& p, double t);

}  // namespace eqf::ped
