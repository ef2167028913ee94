#include "eqf/micro_sim.hpp"

#include <cmath>
#include <sstream>

namespace eqf {

ParameterSet::ParameterSet(std::initializer_list<std::pair<const std::string, double>> init)
    : values_(init) {}

double ParameterSet::get(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

double ParameterSet::get_or(const std::string& name, double fallback) const {
    auto it = values_.find(name);
    return it == values_.end() ? fallback : it->second;
}

void ParameterSet::set(const std::string& name, double value) {
    if (!std::isfinite(value)) throw ConfigError("parameter '" + name + "' is not finite");
    values_[name] = value;
}

void ParameterSet::require(std::initializer_list<const char*> names) const {
    std::string missing;
    for (const char* n : names) {
        if (!has(n)) missing += missing.empty() ? n : std::string(", ") + n;
    }
    if (!missing.empty()) throw ConfigError("missing parameter(s): " + missing);
}

namespace {

struct Rk4Workspace {
    explicit Rk4Workspace(Eigen::Index n) : k1(n), k2(n), k3(n), k4(n), tmp(n) {}
    MicroState k1, k2, k3, k4, tmp;
};

void rk4_step(const MicroSystem& sys, MicroState& u, double h, Rk4Workspace& w) {
    sys.rhs(u, w.k1);
    w.tmp = u + (0.5 * h) * w.k1;
    sys.rhs(w.tmp, w.k2);
    w.tmp = u + (0.5 * h) * w.k2;
    sys.rhs(w.tmp, w.k3);
    w.tmp = u + h * w.k3;
    sys.rhs(w.tmp, w.k4);
    u += (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
}

}  // namespace

MicroState integrate(const MicroSystem& system, const MicroState& u0, double t, double dt) {
    return integrate(system, u0, t, dt, StepObserver{});
}

MicroState integrate(const MicroSystem& system, const MicroState& u0, double t, double dt,
                     const StepObserver& observer) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error("integrate: duration must be finite and >= 0");
    if (!(dt > 0.0)) throw Error("integrate: step size must be > 0");
    if (u0.size() != system.dim) {
        std::ostringstream os;
        os << "integrate: state dimension " << u0.size() << " != system dimension " << system.dim;
        throw Error(os.str());
    }

    MicroState u = u0;
    if (t == 0.0) return u;

    Rk4Workspace work(system.dim);
    // Step count is fixed up front so that the elapsed time is exactly t and
    // repeated calls take identical steps.
    const auto full_steps = static_cast<long long>(std::floor(t / dt * (1.0 + 1e-14)));
    double elapsed = 0.0;
    for (long long i = 0; i <= full_steps; ++i) {
        double h = dt;
        if (i == full_steps) {
            h = t - static_cast<double>(full_steps) * dt;
            if (h <= 1e-12 * dt) break;
        }
        rk4_step(system, u, h, work);
        if (system.post_step) system.post_step(u);
        elapsed = (i == full_steps) ? t : static_cast<double>(i + 1) * dt;
        if (!u.allFinite()) {
            std::ostringstream os;
            os << "integrate: non-finite state at t = " << elapsed;
            throw BlowUpError(elapsed, os.str());
        }
        if (observer) observer(elapsed, u);
    }
    return u;
}

}  // namespace eqf
