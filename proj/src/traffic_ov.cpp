#include "eqf/traffic_ov.hpp"

#include <cmath>
#include <complex>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "eqf/errors.hpp"

namespace eqf::traffic {

namespace {

OVParams overlay(OVParams q, const ParameterSet& p) {
    q.tau = p.get_or("tau", q.tau);
    q.v0 = p.get_or("v0", q.v0);
    q.h = p.get_or("h", q.h);
    q.n_cars = static_cast<int>(std::lround(p.get_or("N", q.n_cars)));
    q.ring_length = p.get_or("L", q.ring_length);
    q.mu = p.get_or("mu", q.mu);
    q.validate();
    return q;
}

double sample_std(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

void OVParams::validate() const {
    if (!(tau > 0.0)) throw ConfigError("traffic: tau must be > 0");
    if (n_cars < 2) throw ConfigError("traffic: N must be >= 2");
    if (!(ring_length > 0.0)) throw ConfigError("traffic: L must be > 0");
    if (!std::isfinite(v0) || !std::isfinite(h) || !std::isfinite(mu))
        throw ConfigError("traffic: v0, h and mu must be finite");
}

OVParams OVParams::from(const ParameterSet& p) { return overlay(OVParams{}, p); }

ParameterSet OVParams::to_parameter_set() const {
    ParameterSet s;
    s.set("tau", tau);
    s.set("v0", v0);
    s.set("h", h);
    s.set("N", n_cars);
    s.set("L", ring_length);
    s.set("mu", mu);
    return s;
}

double optimal_velocity(double headway, const OVParams& p) {
    return p.v0 * (std::tanh(headway - p.h) + std::tanh(p.h));
}

double optimal_velocity_slope(double headway, const OVParams& p) {
    const double c = std::cosh(headway - p.h);
    return p.v0 / (c * c);
}

void ov_rhs(const MicroState& u, const OVParams& p, MicroState& du) {
    const int n = p.n_cars;
    const double th = std::tanh(p.h);
    const double inv_tau = 1.0 / p.tau;
    for (int i = 0; i < n; ++i) {
        double d = (i + 1 < n ? u(i + 1) : u(0) + p.ring_length) - u(i);
        du(i) = u(n + i);
        du(n + i) = (p.v0 * (std::tanh(d - p.h) + th) - u(n + i)) * inv_tau;
    }
}

MicroSystem make_system(const OVParams& p) {
    p.validate();
    MicroSystem sys;
    sys.dim = 2 * p.n_cars;
    sys.rhs = [p](const MicroState& u, MicroState& du) { ov_rhs(u, p, du); };
    return sys;
}

Eigen::VectorXd headways(const MicroState& u, const OVParams& p) {
    const int n = p.n_cars;
    Eigen::VectorXd hw(n);
    for (int i = 0; i + 1 < n; ++i) hw(i) = u(i + 1) - u(i);
    hw(n - 1) = u(0) + p.ring_length - u(n - 1);
    return hw;
}

MacroState restrict_sigma(const MicroState& u, const OVParams& p) {
    MacroState x(1);
    x(0) = sample_std(headways(u, p));
    return x;
}

ReferenceProfile ReferenceProfile::from_state(const MicroState& u, const OVParams& p) {
    ReferenceProfile r;
    r.headways = traffic::headways(u, p);
    r.velocities = u.tail(p.n_cars);
    r.sigma_ref = sample_std(r.headways);
    return r;
}

void ReferenceProfile::validate(const OVParams& p) const {
    if (headways.size() != p.n_cars || velocities.size() != p.n_cars)
        throw LiftingDomainError(-1, "traffic: reference profile size does not match N");
    if (!(sigma_ref > 0.0))
        throw LiftingDomainError(-1, "traffic: reference profile must have sigma > 0");
    if (std::abs(headways.sum() - p.ring_length) > 1e-9 * p.ring_length)
        throw LiftingDomainError(-1, "traffic: reference headways do not sum to L");
}

MicroState state_from_headways(const Eigen::VectorXd& hw, const Eigen::VectorXd& velocities) {
    const auto n = hw.size();
    MicroState u(2 * n);
    u(0) = 0.0;
    for (Eigen::Index i = 1; i < n; ++i) u(i) = u(i - 1) + hw(i - 1);
    u.tail(n) = velocities;
    return u;
}

MicroState lift_mu(const MacroState& sigma, const ReferenceProfile& ref, const OVParams& p) {
    if (sigma.size() != 1) throw LiftingDomainError(-1, "traffic: macro state must be 1-D");
    const double mean = ref.headways.mean();
    const double scale = p.mu * sigma(0) / ref.sigma_ref;
    const Eigen::VectorXd hw = (scale * (ref.headways.array() - mean) + mean).matrix();
    Eigen::VectorXd v(hw.size());
    for (Eigen::Index i = 0; i < hw.size(); ++i) {
        if (!(hw(i) > 0.0)) {
            std::ostringstream os;
            os << "traffic: lifted headway " << i << " is " << hw(i) << " (sigma " << sigma(0) << ")";
            throw LiftingDomainError(i, os.str());
        }
        v(i) = optimal_velocity(hw(i), p);
    }
    return state_from_headways(hw, v);
}

std::vector<std::pair<double, double>> analytic_hopf_curve(const OVParams& p,
                                                           const std::vector<double>& h_values) {
    // Re lambda = 0 for mode theta requires V' = 1 / (tau (1 + cos theta)); the
    // smallest such V' over k != 0 comes from the mode with the largest cos.
    const double theta = 2.0 * std::numbers::pi / p.n_cars;
    const double slope = 1.0 / (p.tau * (1.0 + std::cos(theta)));
    std::vector<std::pair<double, double>> out;
    for (double h : h_values) {
        const double c = std::cosh(p.mean_headway() - h);
        out.emplace_back(h, slope * c * c);
    }
    return out;
}

double uniform_flow_growth_rate(const OVParams& p, int k) {
    const double theta = 2.0 * std::numbers::pi * k / p.n_cars;
    const std::complex<double> e(std::cos(theta) - 1.0, std::sin(theta));
    const double a = optimal_velocity_slope(p.mean_headway(), p);
    const std::complex<double> disc = std::sqrt(1.0 + 4.0 * p.tau * a * e);
    const std::complex<double> l1 = (-1.0 + disc) / (2.0 * p.tau);
    const std::complex<double> l2 = (-1.0 - disc) / (2.0 * p.tau);
    return std::max(l1.real(), l2.real());
}

ReferenceProfile generate_reference(const OVParams& p, double duration, double dt, unsigned seed) {
    p.validate();
    const int n = p.n_cars;
    std::mt19937 rng(seed);
    std::normal_distribution<double> noise(0.0, 1e-3);
    Eigen::VectorXd hw(n);
    for (int i = 0; i < n; ++i)
        hw(i) = p.mean_headway() * (1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * i / n)) + noise(rng);
    hw.array() += p.mean_headway() - hw.mean();
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = optimal_velocity(hw(i), p);
    const MicroState u = integrate(make_system(p), state_from_headways(hw, v), duration, dt);
    return ReferenceProfile::from_state(u, p);
}

ReferenceProfile sinusoidal_reference(const OVParams& p, double amplitude, int k) {
    const int n = p.n_cars;
    Eigen::VectorXd hw(n), v(n);
    for (int i = 0; i < n; ++i) {
        hw(i) = p.mean_headway() + amplitude * std::sin(2.0 * std::numbers::pi * k * i / n);
        v(i) = optimal_velocity(hw(i), p);
    }
    ReferenceProfile r;
    r.headways = hw;
    r.velocities = v;
    r.sigma_ref = sample_std(hw);
    return r;
}

void write_reference(std::ostream& os, const ReferenceProfile& ref, const OVParams& p) {
    os << std::setprecision(17);
    os << "# ov-reference tau=" << p.tau << " v0=" << p.v0 << " h=" << p.h << " N=" << p.n_cars
       << " L=" << p.ring_length << " mu=" << p.mu << " sigma=" << ref.sigma_ref << "\n";
    os << "# index,headway,velocity\n";
    for (Eigen::Index i = 0; i < ref.headways.size(); ++i)
        os << i << "," << ref.headways(i) << "," << ref.velocities(i) << "\n";
}

ReferenceProfile read_reference(std::istream& is) {
    std::vector<double> hw, v;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        long idx;
        double a, b;
        char c1, c2;
        if (!(ls >> idx >> c1 >> a >> c2 >> b) || c1 != ',' || c2 != ',')
            throw ConfigError("reference profile: malformed row", lineno);
        if (idx != static_cast<long>(hw.size()))
            throw ConfigError("reference profile: rows out of order", lineno);
        hw.push_back(a);
        v.push_back(b);
    }
    ReferenceProfile r;
    r.headways = Eigen::Map<Eigen::VectorXd>(hw.data(), static_cast<Eigen::Index>(hw.size()));
    r.velocities = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    r.sigma_ref = sample_std(r.headways);
    return r;
}

CoarseModel make_coarse_model(const OVParams& p, const ReferenceProfile& ref) {
    ref.validate(p);
    CoarseModel m;
    m.system = make_system(p);
    m.ops.lift = [p, ref](const MacroState& x) { return lift_mu(x, ref, p); };
    m.ops.restrict = [p](const MicroState& u) { return restrict_sigma(u, p); };
    m.ops.macro_dim = 1;
    m.ops.micro_dim = 2 * p.n_cars;
    return m;
}

OVFamily::OVFamily(OVParams base, ReferenceProfile ref, bool refresh)
    : base_(base),
      ref_(std::make_shared<ReferenceProfile>(std::move(ref))),
      history_(std::make_shared<std::vector<ReferenceProfile>>()),
      refresh_(refresh) {
    ref_->validate(base_);
}

void OVFamily::set_reference(ReferenceProfile ref) {
    ref.validate(base_);
    *ref_ = std::move(ref);
}

ModelFamily OVFamily::family() {
    ModelFamily f;
    const OVParams base = base_;
    auto ref = ref_;
    auto history = history_;
    f.instantiate = [base, ref](const ParameterSet& ps) {
        return make_coarse_model(overlay(base, ps), *ref);
    };
    const bool refresh = refresh_;
    f.accept = [base, ref, history, refresh](const ParameterSet& ps, const MacroState& x,
                                             const EqFreeConfig& cfg) {
        history->push_back(*ref);
        if (!refresh || !(x(0) > 0.0)) return;
        const OVParams p = overlay(base, ps);
        const CoarseModel m = make_coarse_model(p, *ref);
        const MicroState u = integrate(m.system, m.ops.lift(x), cfg.t_skip + cfg.t0, cfg.micro_dt);
        ReferenceProfile next = ReferenceProfile::from_state(u, p);
        // A relaxed state too close to uniform flow cannot anchor the scaling.
        if (next.sigma_ref > 1e-6) *ref = std::move(next);
    };
    return f;
}

double long_run_sigma(const OVParams& p, const MicroState& u0, double duration, double window,
                      double dt) {
    if (!(window > 0.0) || window > duration) throw Error("long_run_sigma: bad window");
    const MicroSystem sys = make_system(p);
    MicroState u = integrate(sys, u0, duration - window, dt);
    const int samples = std::max(1, static_cast<int>(std::lround(window)));
    const double step = window / samples;
    double acc = 0.0;
    for (int k = 0; k < samples; ++k) {
        u = integrate(sys, u, step, dt);
        acc += restrict_sigma(u, p)(0);
    }
    return acc / samples;
}

}  // namespace eqf::traffic
