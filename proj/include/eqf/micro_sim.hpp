#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "eqf/errors.hpp"

namespace eqf {

/// Full microscopic phase point. Second-order models store (positions, velocities).
using MicroState = Eigen::VectorXd;

/// Named real parameters of a model, e.g. {"v0", 0.9}, {"h", 1.2}.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(std::initializer_list<std::pair<const std::string, double>> init);

    double get(const std::string& name) const;
    double get_or(const std::string& name, double fallback) const;
    void set(const std::string& name, double value);
    bool has(const std::string& name) const { return values_.count(name) != 0; }

    /// Throws ConfigError listing every missing name.
    void require(std::initializer_list<const char*> names) const;

    const std::map<std::string, double>& values() const { return values_; }

    bool operator==(const ParameterSet&) const = default;

private:
    std::map<std::string, double> values_;
};

/// Right-hand side of u' = f(u). Writes f(u) into `du` (already sized).
using RhsFunction = std::function<void(const MicroState& u, MicroState& du)>;

/// Optional map applied after every accepted step (e.g. recycling agents
/// that left the domain). Must be deterministic.
using PostStepFunction = std::function<void(MicroState& u)>;

struct MicroSystem {
    RhsFunction rhs;
    Eigen::Index dim = 0;
    PostStepFunction post_step;
};

/// Called after every step with the elapsed time and the current state.
using StepObserver = std::function<void(double t, const MicroState& u)>;

/// M(t, u0): classical fixed-step RK4. The final step is shortened so the
/// elapsed time is exactly `t`. Throws BlowUpError on a non-finite state.
MicroState integrate(const MicroSystem& system, const MicroState& u0, double t, double dt);

MicroState integrate(const MicroSystem& system, const MicroState& u0, double t, double dt,
                     const StepObserver& observer);

/// Default micro step in model time units.
inline constexpr double kDefaultMicroDt = 1e-2;

}  // namespace eqf
