#include "eqf/eqfree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "eqf/errors.hpp"

namespace eqf {

void EqFreeConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string("eqfree: ") + name + " must be finite and > 0");
    };
    positive(t_skip, "t_skip");
    positive(t0, "t0");
    positive(delta, "delta");
    positive(micro_dt, "micro_dt");
    positive(fd.rel, "fd_rel");
    positive(fd.abs_floor, "fd_abs");
    positive(newton_tol, "newton_tol");
    if (newton_max_iter < 1) throw ConfigError("eqfree: newton_max_iter must be >= 1");
}

NewtonOptions EqFreeConfig::newton() const {
    NewtonOptions o;
    o.tol = newton_tol;
    o.max_iter = newton_max_iter;
    o.fd = fd;
    o.threads = threads;
    return o;
}

std::vector<MacroState> restrict_along(const CoarseModel& model, const EqFreeConfig& cfg,
                                       const MacroState& x, const std::vector<double>& times) {
    std::vector<MacroState> out;
    out.reserve(times.size());
    MicroState u = model.ops.lift(x);
    double now = 0.0;
    for (double t : times) {
        if (t < now) throw Error("restrict_along: times must be non-decreasing");
        u = integrate(model.system, u, t - now, cfg.micro_dt);
        now = t;
        out.push_back(model.ops.restrict(u));
    }
    return out;
}

MacroState phi_explicit(const CoarseModel& model, const EqFreeConfig& cfg, double t,
                        const MacroState& x) {
    return restrict_along(model, cfg, x, {t}).front();
}

MacroState phi_implicit(const CoarseModel& model, const EqFreeConfig& cfg, double t,
                        const MacroState& x) {
    const MacroState target = restrict_along(model, cfg, x, {cfg.t_skip + t}).front();
    auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return restrict_along(model, cfg, y, {cfg.t_skip}).front() - target;
    };
    return newton_solve(f, x, cfg.newton()).x;
}

MacroState equilibrium_residual(const CoarseModel& model, const EqFreeConfig& cfg,
                                const MacroState& x) {
    const auto r = restrict_along(model, cfg, x, {cfg.t_skip, cfg.t_skip + cfg.t0});
    return r[1] - r[0];
}

Equilibrium find_equilibrium(const CoarseModel& model, const EqFreeConfig& cfg,
                             const MacroState& x_guess) {
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return equilibrium_residual(model, cfg, x);
    };
    const NewtonResult nr = newton_solve(f, x_guess, cfg.newton());
    Equilibrium eq;
    eq.unhealed = nr.x;
    eq.healed = restrict_along(model, cfg, nr.x, {cfg.t_skip}).front();
    eq.newton_iters = nr.iterations;
    eq.residual = nr.residual;
    return eq;
}

double StabilityResult::max_modulus() const {
    double m = 0.0;
    for (const auto& l : eigenvalues) m = std::max(m, std::abs(l));
    return m;
}

StabilityResult generalized_eigenvalues(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
    const double scale = std::max(b.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    qr.setThreshold(1e-10);
    if (qr.rank() < b.cols() || b.cwiseAbs().maxCoeff() == 0.0 ||
        std::abs(qr.matrixQR().diagonal().tail(1)(0)) < 1e-10 * scale) {
        const int col = static_cast<int>(qr.colsPermutation().indices()(b.cols() - 1));
        std::ostringstream os;
        os << "stability: B = d/dx R M(t_skip, L x) is numerically singular (column " << col << ")";
        throw SingularJacobianError(col, os.str());
    }
    const Eigen::MatrixXd m = qr.solve(a);
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    StabilityResult out;
    out.a = a;
    out.b = b;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.eigenvalues.push_back(es.eigenvalues()(i));
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end(),
              [](const auto& l, const auto& r) { return std::abs(l) > std::abs(r); });
    return out;
}

StabilityResult stability(const CoarseModel& model, const EqFreeConfig& cfg, const MacroState& x_eq) {
    const std::vector<double> times{cfg.t_skip, cfg.t_skip + cfg.t0};
    const auto base = restrict_along(model, cfg, x_eq, times);
    const auto n = static_cast<int>(x_eq.size());
    const auto m = base[0].size();
    Eigen::MatrixXd a(m, n), b(m, n);
    parallel_for(n, cfg.threads, [&](int j) {
        MacroState xp = x_eq;
        const double dy = cfg.fd.at(x_eq(j));
        xp(j) += dy;
        const auto r = restrict_along(model, cfg, xp, times);
        b.col(j) = (r[0] - base[0]) / dy;
        a.col(j) = (r[1] - base[1]) / dy;
    });
    return generalized_eigenvalues(a, b);
}

ProjectiveResult projective_integrate(const CoarseModel& model, const EqFreeConfig& cfg,
                                      const MacroState& x0, double dt_macro, int n_steps) {
    ProjectiveResult out;
    out.trajectory.push_back(x0);
    MacroState x = x0;
    for (int k = 0; k < n_steps; ++k) {
        try {
            const auto r = restrict_along(model, cfg, x, {cfg.t_skip, cfg.t_skip + cfg.delta});
            const MacroState rate = (r[1] - r[0]) / cfg.delta;
            const MacroState target = r[0] + dt_macro * rate;
            auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
                return restrict_along(model, cfg, y, {cfg.t_skip}).front() - target;
            };
            x = newton_solve(f, x + dt_macro * rate, cfg.newton()).x;
        } catch (const Error& e) {
            std::ostringstream os;
            os << "projective step " << k + 1 << ": " << e.what();
            out.error = os.str();
            return out;
        }
        out.trajectory.push_back(x);
    }
    return out;
}

MicroState match_restriction(const CoarseModel& model, const EqFreeConfig& cfg,
                             const MacroState& x_target) {
    auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return restrict_along(model, cfg, y, {cfg.t_skip}).front() - x_target;
    };
    const NewtonResult nr = newton_solve(f, x_target, cfg.newton());
    return integrate(model.system, model.ops.lift(nr.x), cfg.t_skip, cfg.micro_dt);
}

namespace {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

// Least squares fit of log(d) against t over samples with d above the noise floor.
LineFit fit_log_linear(const std::vector<double>& t, const std::vector<double>& d) {
    double dmax = 0.0;
    for (double v : d) dmax = std::max(dmax, v);
    const double floor = std::max(1e-14 * dmax, std::numeric_limits<double>::min());
    double st = 0, sy = 0, stt = 0, sty = 0;
    int n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(d[i] > floor)) continue;
        const double y = std::log(d[i]);
        st += t[i];
        sy += y;
        stt += t[i] * t[i];
        sty += t[i] * y;
        ++n;
    }
    LineFit fit;
    if (n < 2) return fit;
    const double den = n * stt - st * st;
    if (den == 0.0) return fit;
    fit.slope = (n * sty - st * sy) / den;
    fit.intercept = (sy - fit.slope * st) / n;
    return fit;
}

}  // namespace

double HealingProfile::prefactor() const { return std::exp(offset + gamma_hat * t_skip); }

HealingProfile healing_diagnostic(const CoarseModel& model, const EqFreeConfig& cfg,
                                  const MicroState& u0, const MicroState& u1, double horizon,
                                  double sample_dt) {
    if (!(sample_dt > 0.0) || !(horizon >= 0.0)) throw Error("healing_diagnostic: bad sampling");
    HealingProfile hp;
    hp.t_skip = cfg.t_skip;
    MicroState a = u0, b = u1;
    auto dist = [&] { return (model.ops.restrict(a) - model.ops.restrict(b)).norm(); };

    const auto heal_samples = static_cast<long>(std::floor(cfg.t_skip / sample_dt + 1e-9));
    double now = 0.0;
    hp.s_heal.push_back(0.0);
    hp.d_heal.push_back(dist());
    for (long k = 1; k <= heal_samples; ++k) {
        const double next = static_cast<double>(k) * sample_dt;
        a = integrate(model.system, a, next - now, cfg.micro_dt);
        b = integrate(model.system, b, next - now, cfg.micro_dt);
        now = next;
        hp.s_heal.push_back(now);
        hp.d_heal.push_back(dist());
    }
    if (now < cfg.t_skip) {
        a = integrate(model.system, a, cfg.t_skip - now, cfg.micro_dt);
        b = integrate(model.system, b, cfg.t_skip - now, cfg.micro_dt);
        now = cfg.t_skip;
        hp.s_heal.push_back(now);
        hp.d_heal.push_back(dist());
    }

    const auto post_samples = static_cast<long>(std::floor(horizon / sample_dt + 1e-9));
    hp.t.push_back(0.0);
    hp.d.push_back(dist());
    for (long k = 1; k <= post_samples; ++k) {
        a = integrate(model.system, a, sample_dt, cfg.micro_dt);
        b = integrate(model.system, b, sample_dt, cfg.micro_dt);
        hp.t.push_back(static_cast<double>(k) * sample_dt);
        hp.d.push_back(dist());
    }

    const LineFit heal = fit_log_linear(hp.s_heal, hp.d_heal);
    const LineFit post = fit_log_linear(hp.t, hp.d);
    hp.gamma_hat = -heal.slope;
    hp.epsilon_hat = post.slope;
    hp.offset = post.intercept;
    return hp;
}

}  // namespace eqf
