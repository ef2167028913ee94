#include "eqf/continuation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <sstream>

#include "eqf/errors.hpp"

namespace eqf {

const char* to_string(Stability s) {
    switch (s) {
        case Stability::Stable: return "stable";
        case Stability::Unstable: return "unstable";
        case Stability::Marginal: return "marginal";
    }
    return "?";
}

const char* to_string(EventType t) {
    switch (t) {
        case EventType::Fold: return "fold";
        case EventType::Hopf: return "hopf";
        case EventType::StabilityChange: return "stability-change";
    }
    return "?";
}

namespace {

double max_mod(const std::vector<std::complex<double>>& ev) {
    double m = 0.0;
    for (const auto& l : ev) m = std::max(m, std::abs(l));
    return m;
}

// Weighted distance in (p, x).
double distance(double dp, const Eigen::VectorXd& dx, double w) {
    return std::sqrt(w * w * dp * dp + dx.squaredNorm());
}

ParameterSet with_param(ParameterSet p, const std::string& name, double value) {
    p.set(name, value);
    return p;
}

}  // namespace

double BranchPoint::max_modulus() const { return max_mod(eigenvalues); }

double BranchPoint::leading_imag() const {
    if (eigenvalues.empty()) return 0.0;
    return eigenvalues.front().imag();
}

Stability classify(const std::vector<std::complex<double>>& eigenvalues, double band) {
    const double m = max_mod(eigenvalues);
    if (m < 1.0 - band) return Stability::Stable;
    if (m > 1.0 + band) return Stability::Unstable;
    return Stability::Marginal;
}

double bisect(const std::function<double(double)>& f, double a, double b, double tol,
              int max_iter) {
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (fa * fb > 0.0) throw Error("bisect: root not bracketed");
    for (int i = 0; i < max_iter && std::abs(b - a) > tol; ++i) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0) return m;
        if (fa * fm < 0.0) {
            b = m;
            fb = fm;
        } else {
            a = m;
            fa = fm;
        }
    }
    return 0.5 * (a + b);
}

namespace {

BranchPoint make_point(const ModelFamily& family, const ParameterSet& params, double p,
                       const EqFreeConfig& cfg, const MacroState& x, int iters, double residual,
                       double band) {
    const CoarseModel model = family.instantiate(params);
    BranchPoint bp;
    bp.param = p;
    bp.x_unhealed = x;
    bp.x_healed = restrict_along(model, cfg, x, {cfg.t_skip}).front();
    bp.eigenvalues = stability(model, cfg, x).eigenvalues;
    bp.stability = classify(bp.eigenvalues, band);
    bp.newton_iters = iters;
    bp.residual = residual;
    if (family.accept) family.accept(params, x, cfg);
    return bp;
}

bool outside(const ContinuationOptions& o, double p, const MacroState& x) {
    if (p < o.p_min || p > o.p_max) return true;
    return x.size() > 0 && (x(0) < o.x_min || x(0) > o.x_max);
}

}  // namespace

Branch continue_branch(const ModelFamily& family, const ParameterSet& base,
                       const std::string& name, const EqFreeConfig& cfg, double p_start,
                       const MacroState& x_start, const ContinuationOptions& opts) {
    cfg.validate();
    if (!(opts.step != 0.0) || opts.n_points < 1)
        throw ConfigError("continuation: step must be nonzero and n_points >= 1");
    const double w = opts.param_weight;
    Branch br;
    br.step = opts.step;

    auto natural = [&](double p, const MacroState& guess) {
        const ParameterSet params = with_param(base, name, p);
        const Equilibrium eq = find_equilibrium(family.instantiate(params), cfg, guess);
        return make_point(family, params, p, cfg, eq.unhealed, eq.newton_iters, eq.residual,
                          opts.stability_band);
    };

    br.points.push_back(natural(p_start, x_start));
    if (opts.n_points == 1) {
        br.stop_reason = "n_points";
        return br;
    }
    try {
        BranchPoint second = natural(p_start + opts.step, br.points[0].x_unhealed);
        const double d = distance(second.param - br.points[0].param,
                                  second.x_unhealed - br.points[0].x_unhealed, w);
        second.arclength = d;
        second.step = d;
        if (outside(opts, second.param, second.x_unhealed)) {
            br.stop_reason = "range";
            return br;
        }
        br.points.push_back(std::move(second));
    } catch (const Error& e) {
        br.stop_reason = std::string("bootstrap failed: ") + e.what();
        return br;
    }

    const double s_abs = std::abs(opts.step);
    const auto n = br.points[0].x_unhealed.size();
    while (static_cast<int>(br.points.size()) < opts.n_points) {
        const BranchPoint& a = br.points[br.points.size() - 2];
        const BranchPoint& b = br.points.back();
        const double dp = b.param - a.param;
        const Eigen::VectorXd dx = b.x_unhealed - a.x_unhealed;
        const double norm = distance(dp, dx, w);
        if (!(norm > 0.0)) {
            br.stop_reason = "degenerate secant";
            break;
        }
        const double sec_p = w * dp / norm;
        const Eigen::VectorXd sec_x = dx / norm;
        const double p_prev = b.param;
        const MacroState x_prev = b.x_unhealed;

        std::optional<BranchPoint> accepted;
        std::string failure;
        double s = s_abs;
        for (int halving = 0; halving <= opts.max_halvings; ++halving, s *= 0.5) {
            Eigen::VectorXd z0(n + 1);
            z0(0) = p_prev + s * sec_p / w;
            z0.tail(n) = x_prev + s * sec_x;
            auto g = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
                Eigen::VectorXd out(n + 1);
                const ParameterSet params = with_param(base, name, z(0));
                const CoarseModel model = family.instantiate(params);
                out.head(n) = equilibrium_residual(model, cfg, z.tail(n));
                out(n) = sec_p * w * (z(0) - p_prev) + sec_x.dot(z.tail(n) - x_prev) - s;
                return out;
            };
            try {
                const NewtonResult nr = newton_solve(g, z0, cfg.newton());
                const double p = nr.x(0);
                const MacroState x = nr.x.tail(n);
                const double d = distance(p - p_prev, x - x_prev, w);
                if (d > 1.5 * s || d < 0.5 * s) {
                    std::ostringstream os;
                    os << "corrector left the arclength window (|dz| = " << d << ", s = " << s << ")";
                    failure = os.str();
                    continue;
                }
                BranchPoint bp = make_point(family, with_param(base, name, p), p, cfg, x,
                                            nr.iterations, nr.residual, opts.stability_band);
                bp.step = d;
                bp.arclength = b.arclength + d;
                accepted = std::move(bp);
                break;
            } catch (const Error& e) {
                failure = e.what();
            }
        }
        if (!accepted) {
            br.stop_reason = "corrector failed after step halving: " + failure;
            break;
        }
        if (accepted->param < opts.p_min || accepted->param > opts.p_max) {
            br.stop_reason = "p_range";
            break;
        }
        const bool x_exit = outside(opts, accepted->param, accepted->x_unhealed);
        br.points.push_back(std::move(*accepted));
        if (x_exit) {
            // Keep the first point past the x bound so the crossing can be interpolated.
            br.stop_reason = "x_range";
            break;
        }
    }
    if (br.stop_reason.empty()) br.stop_reason = "n_points";
    br.events = detect_events(br, opts.stability_band);
    return br;
}

std::vector<BranchEvent> detect_events(const Branch& branch, double stability_band) {
    (void)stability_band;
    std::vector<BranchEvent> events;
    const auto& pts = branch.points;
    if (pts.size() < 2) return events;

    // Folds: p(s) turns. Quadratic interpolant through three consecutive points,
    // zero of its tangent dp/ds located by bisection.
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
        const double d1 = pts[i].param - pts[i - 1].param;
        const double d2 = pts[i + 1].param - pts[i].param;
        if (!(d1 * d2 < 0.0)) continue;
        const double s0 = pts[i - 1].arclength, s1 = pts[i].arclength, s2 = pts[i + 1].arclength;
        auto lagrange = [&](double s, double y0, double y1, double y2) {
            return y0 * (s - s1) * (s - s2) / ((s0 - s1) * (s0 - s2)) +
                   y1 * (s - s0) * (s - s2) / ((s1 - s0) * (s1 - s2)) +
                   y2 * (s - s0) * (s - s1) / ((s2 - s0) * (s2 - s1));
        };
        auto tangent = [&](double s) {
            return pts[i - 1].param * ((s - s1) + (s - s2)) / ((s0 - s1) * (s0 - s2)) +
                   pts[i].param * ((s - s0) + (s - s2)) / ((s1 - s0) * (s1 - s2)) +
                   pts[i + 1].param * ((s - s0) + (s - s1)) / ((s2 - s0) * (s2 - s1));
        };
        double s_star = s1;
        try {
            s_star = bisect(tangent, s0, s2, 1e-12 * std::max(1.0, std::abs(s2)));
        } catch (const Error&) {
        }
        BranchEvent ev;
        ev.type = EventType::Fold;
        ev.arclength = s_star;
        ev.param = lagrange(s_star, pts[i - 1].param, pts[i].param, pts[i + 1].param);
        ev.x = MacroState(pts[i].x_unhealed.size());
        for (Eigen::Index k = 0; k < ev.x.size(); ++k)
            ev.x(k) = lagrange(s_star, pts[i - 1].x_unhealed(k), pts[i].x_unhealed(k),
                               pts[i + 1].x_unhealed(k));
        if (s_star < s1) {
            ev.before = i - 1;
            ev.after = i;
        } else {
            ev.before = i;
            ev.after = i + 1;
        }
        if (s_star == s1) {
            // Interpolant vertex sits on a branch point; nudge into the next segment.
            ev.arclength = std::nextafter(s1, s2);
        }
        events.push_back(std::move(ev));
    }

    // Stability changes: max |lambda| - 1 changes sign between neighbours.
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (pts[i].eigenvalues.empty() || pts[i + 1].eigenvalues.empty()) continue;
        const double g0 = pts[i].max_modulus() - 1.0;
        const double g1 = pts[i + 1].max_modulus() - 1.0;
        if (!(g0 * g1 < 0.0)) continue;
        const double frac = g0 / (g0 - g1);
        BranchEvent ev;
        const bool complex0 = std::abs(pts[i].leading_imag()) > 1e-10;
        const bool complex1 = std::abs(pts[i + 1].leading_imag()) > 1e-10;
        ev.type = (complex0 && complex1) ? EventType::Hopf : EventType::StabilityChange;
        ev.arclength = pts[i].arclength + frac * (pts[i + 1].arclength - pts[i].arclength);
        ev.param = pts[i].param + frac * (pts[i + 1].param - pts[i].param);
        ev.x = pts[i].x_unhealed + frac * (pts[i + 1].x_unhealed - pts[i].x_unhealed);
        ev.before = i;
        ev.after = i + 1;
        events.push_back(std::move(ev));
    }
    std::sort(events.begin(), events.end(),
              [](const BranchEvent& a, const BranchEvent& b) { return a.arclength < b.arclength; });
    return events;
}

namespace {

ParameterSet with_params(ParameterSet p, const std::string& n1, double v1, const std::string& n2,
                         double v2) {
    p.set(n1, v1);
    p.set(n2, v2);
    return p;
}

double fold_test(const CoarseModel& model, const EqFreeConfig& cfg, const MacroState& x) {
    const StabilityResult st = stability(model, cfg, x);
    return (st.a - st.b).determinant();
}

}  // namespace

Curve fold_continue_2par(const ModelFamily& family, const ParameterSet& base,
                         const std::string& p1_name, const std::string& p2_name,
                         const EqFreeConfig& cfg, double p1_seed, const MacroState& x_seed,
                         const TwoParamOptions& opts) {
    cfg.validate();
    Curve curve;
    const auto n = x_seed.size();
    NewtonOptions nopt = cfg.newton();
    nopt.fd = opts.outer_fd;
    nopt.tol = opts.tol;

    // Fixed p2: unknowns (x, p1), equations {residual, det(A - B)}.
    auto solve_fixed = [&](double p2, double p1_guess, const MacroState& x_guess) {
        Eigen::VectorXd z(n + 1);
        z.head(n) = x_guess;
        z(n) = p1_guess;
        auto g = [&](const Eigen::VectorXd& zz) -> Eigen::VectorXd {
            const CoarseModel model =
                family.instantiate(with_params(base, p1_name, zz(n), p2_name, p2));
            Eigen::VectorXd out(n + 1);
            out.head(n) = equilibrium_residual(model, cfg, zz.head(n));
            out(n) = fold_test(model, cfg, zz.head(n));
            return out;
        };
        const NewtonResult nr = newton_solve(g, z, nopt);
        CurvePoint cp;
        cp.p1 = nr.x(n);
        cp.p2 = p2;
        cp.x = nr.x.head(n);
        cp.newton_iters = nr.iterations;
        return cp;
    };
    auto accept = [&](const CurvePoint& cp) {
        if (family.accept) family.accept(with_params(base, p1_name, cp.p1, p2_name, cp.p2), cp.x, cfg);
        curve.points.push_back(cp);
    };
    auto in_range = [&](double p2) { return p2 >= opts.p2_min && p2 <= opts.p2_max; };

    const double p2_seed = base.get(p2_name);
    try {
        accept(solve_fixed(p2_seed, p1_seed, x_seed));
        if (opts.n_points > 1 && in_range(p2_seed + opts.step))
            accept(solve_fixed(p2_seed + opts.step, curve.points[0].p1, curve.points[0].x));
    } catch (const Error& e) {
        curve.stop_reason = std::string("seed failed: ") + e.what();
        return curve;
    }

    auto pack = [&](const CurvePoint& cp) {
        Eigen::VectorXd z(n + 2);
        z.head(n) = cp.x;
        z(n) = cp.p1;
        z(n + 1) = cp.p2;
        return z;
    };
    const double s_abs = std::abs(opts.step);
    while (static_cast<int>(curve.points.size()) < opts.n_points && curve.points.size() >= 2) {
        const Eigen::VectorXd za = pack(curve.points[curve.points.size() - 2]);
        const Eigen::VectorXd zb = pack(curve.points.back());
        const Eigen::VectorXd sec = (zb - za).normalized();
        std::optional<CurvePoint> got;
        std::string failure;
        double s = s_abs;
        for (int h = 0; h <= opts.max_halvings; ++h, s *= 0.5) {
            auto g = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
                const CoarseModel model =
                    family.instantiate(with_params(base, p1_name, z(n), p2_name, z(n + 1)));
                Eigen::VectorXd out(n + 2);
                out.head(n) = equilibrium_residual(model, cfg, z.head(n));
                out(n) = fold_test(model, cfg, z.head(n));
                out(n + 1) = sec.dot(z - zb) - s;
                return out;
            };
            try {
                const NewtonResult nr = newton_solve(g, zb + s * sec, nopt);
                CurvePoint cp;
                cp.x = nr.x.head(n);
                cp.p1 = nr.x(n);
                cp.p2 = nr.x(n + 1);
                cp.newton_iters = nr.iterations;
                got = cp;
                break;
            } catch (const Error& e) {
                failure = e.what();
            }
        }
        if (!got) {
            curve.stop_reason = "corrector failed after step halving: " + failure;
            break;
        }
        if (!in_range(got->p2)) {
            curve.stop_reason = "p2_range";
            break;
        }
        accept(*got);
    }
    if (curve.stop_reason.empty()) curve.stop_reason = "n_points";
    return curve;
}

Curve onset_continue_2par(const OnsetTest& test, double p1_seed, double p2_seed,
                          const OnsetOptions& opts) {
    Curve curve;
    const double k = opts.p1_scale;
    // Work in scaled coordinates (p1 / k, p2).
    std::vector<Eigen::Vector2d> zs{Eigen::Vector2d(p1_seed / k, p2_seed)};
    curve.points.push_back(CurvePoint{p1_seed, p2_seed, {}, 0});
    auto f = [&](const Eigen::Vector2d& z) { return test(z(0) * k, z(1)); };

    while (static_cast<int>(curve.points.size()) < opts.n_points) {
        Eigen::Vector2d tangent(0.0, opts.step > 0 ? 1.0 : -1.0);
        if (zs.size() >= 2) tangent = (zs.back() - zs[zs.size() - 2]).normalized();
        const Eigen::Vector2d pred = zs.back() + std::abs(opts.step) * tangent;
        if (pred(1) < opts.p2_min || pred(1) > opts.p2_max) {
            curve.stop_reason = "p2_range";
            break;
        }
        const Eigen::Vector2d normal(-tangent(1), tangent(0));
        auto line = [&](double a) { return f(pred + a * normal); };

        // Bracket the sign change nearest to the prediction.
        const double g0 = line(0.0);
        double lo = 0.0, hi = 0.0;
        bool found = g0 == 0.0;
        double width = opts.search_width / 8.0;
        double prev_plus = 0.0, prev_minus = 0.0;
        while (!found && width <= opts.search_width * (1.0 + 1e-12)) {
            const double gp = line(width);
            if (g0 * gp <= 0.0) {
                lo = prev_plus;
                hi = width;
                found = true;
                break;
            }
            const double gm = line(-width);
            if (g0 * gm <= 0.0) {
                lo = -width;
                hi = prev_minus;
                found = true;
                break;
            }
            prev_plus = width;
            prev_minus = -width;
            width *= 2.0;
        }
        if (!found) {
            curve.stop_reason = "onset not bracketed within search width";
            break;
        }
        double a = 0.0;
        if (g0 != 0.0) a = bisect(line, lo, hi, opts.tol);
        const Eigen::Vector2d z = pred + a * normal;
        zs.push_back(z);
        curve.points.push_back(CurvePoint{z(0) * k, z(1), {}, 0});
    }
    if (curve.stop_reason.empty()) curve.stop_reason = "n_points";
    return curve;
}

OnsetTest coarse_hopf_test(const ModelFamily& family, const ParameterSet& base,
                           const std::string& p1_name, const std::string& p2_name,
                           const EqFreeConfig& cfg, const MacroState& x_guess) {
    auto last = std::make_shared<MacroState>(x_guess);
    return [=](double p1, double p2) {
        const CoarseModel model = family.instantiate(with_params(base, p1_name, p1, p2_name, p2));
        MacroState x = *last;
        if (equilibrium_residual(model, cfg, x).norm() > cfg.newton_tol)
            x = find_equilibrium(model, cfg, x).unhealed;
        *last = x;
        return stability(model, cfg, x).max_modulus() - 1.0;
    };
}

Curve hopf_continue_2par(const ModelFamily& family, const ParameterSet& base,
                         const std::string& p1_name, const std::string& p2_name,
                         const EqFreeConfig& cfg, double p1_seed, double p2_seed,
                         const MacroState& x_eq, const OnsetOptions& opts) {
    return onset_continue_2par(coarse_hopf_test(family, base, p1_name, p2_name, cfg, x_eq),
                               p1_seed, p2_seed, opts);
}

}  // namespace eqf
