#include "eqf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "eqf/continuation.hpp"
#include "eqf/errors.hpp"
#include "eqf/pedestrian_sf.hpp"
#include "eqf/testsystems.hpp"
#include "eqf/traffic_ov.hpp"

namespace eqf::io {
namespace {

constexpr const char* kBegin = "# --- config ---";
constexpr const char* kEnd = "# --- end config ---";

/// Comma-separated output with the config embedded in the header.
class Csv {
public:
    Csv(const std::string& path, const ExperimentConfig& cfg) : path_(path), os_(path) {
        if (!os_) throw ConfigError("cannot write output file '" + path + "'");
        os_ << config_header(cfg);
    }
    void columns(const std::vector<std::string>& names) {
        for (std::size_t i = 0; i < names.size(); ++i) os_ << (i ? "," : "") << names[i];
        os_ << '\n';
    }
    void row(const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) os_ << (i ? "," : "") << format_csv(v[i]);
        os_ << '\n';
    }
    void comment(const std::string& line) { os_ << "# " << line << '\n'; }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ofstream os_;
};

std::vector<std::string> indexed(const std::string& stem, Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(stem + "_" + std::to_string(i));
    return out;
}

void append(std::vector<double>& row, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(v(i));
}

MacroState to_vector(const std::vector<double>& v) {
    MacroState x(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i)) = v[i];
    return x;
}

std::string describe(const MacroState& x) {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ";" : "") << format_csv(x(i));
    return os.str();
}

/// Everything a task needs to know about the configured model.
struct Setup {
    std::string model;
    ModelFamily family;
    ParameterSet base;
    EqFreeConfig eq;
    std::string param;
    std::string param2;
    MacroState x_default;
    double p_start = 0.0;
    std::shared_ptr<traffic::OVFamily> ov;
    traffic::OVParams ovp;
    std::unique_ptr<ped::AmplitudeProbe> probe;
    ped::PedParams pp;
};

double testsys_default(const std::string& name) {
    if (name == "k_slow" || name == "omega") return 1.0;
    if (name == "k_fast") return 100.0;
    return 0.0;
}

traffic::ReferenceProfile traffic_reference(const ExperimentConfig& cfg, const Setup& s,
                                            const std::string& kind, long seed) {
    if (kind == "sinusoid") return traffic::sinusoidal_reference(s.ovp);
    if (kind == "file") {
        const std::string path = cfg.string("traffic", "reference_file");
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open reference file '" + path + "'");
        return traffic::read_reference(f);
    }
    if (kind != "generated")
        throw ConfigError("unknown traffic reference '" + kind + "' (generated, sinusoid, file)");
    traffic::OVParams rp = s.ovp;
    rp.v0 = cfg.real("traffic", "reference_v0", s.p_start);
    return traffic::generate_reference(rp, cfg.real("traffic", "reference_time", 4000.0),
                                       s.eq.micro_dt, static_cast<unsigned>(seed));
}

Setup make_setup(const ExperimentConfig& cfg, const RunOptions& opts) {
    Setup s;
    s.model = cfg.model();
    const long seed = cfg.integer("experiment", "seed", 1);
    const std::string task = cfg.task();
    if (s.model == "traffic") {
        s.ovp = traffic::OVParams::from(cfg.parameters());
        s.base = s.ovp.to_parameter_set();
        EqFreeConfig d;
        d.t_skip = 400.0;
        d.t0 = 400.0;
        d.micro_dt = 0.1;
        s.eq = cfg.eqfree(d);
        s.param = cfg.string("continuation", "param", "v0");
        s.param2 = cfg.string("two_param", "param2", "h");
        s.p_start = cfg.real("continuation", "p_start", 0.95);
        const std::string kind =
            cfg.string("traffic", "reference", task == "hopf2par" ? "sinusoid" : "generated");
        const auto ref = traffic_reference(cfg, s, kind, seed);
        s.x_default = MacroState::Constant(1, ref.sigma_ref);
        s.ov = std::make_shared<traffic::OVFamily>(s.ovp, ref, cfg.boolean("traffic", "refresh", true));
        s.family = s.ov->family();
    } else if (s.model == "pedestrian") {
        s.pp = ped::PedParams::from(cfg.parameters());
        s.base = s.pp.to_parameter_set();
        EqFreeConfig eq;
        eq.micro_dt = ped::kPedestrianMicroDt;
        s.eq = cfg.eqfree(eq);
        s.param = cfg.string("continuation", "param", "w");
        s.param2 = cfg.string("two_param", "param2", "r_v0");
        s.p_start = cfg.real("continuation", "p_start", s.pp.w);
        ped::AmplitudeSettings a;
        a.map.t_cap = cfg.real("pedestrian", "t_cap", a.map.t_cap);
        a.map.sample_dt = cfg.real("pedestrian", "sample_dt", a.map.sample_dt);
        a.map.hysteresis = cfg.real("pedestrian", "hysteresis", a.map.hysteresis);
        a.iterations = static_cast<int>(cfg.integer("pedestrian", "map_iterations", a.iterations));
        a.average = static_cast<int>(cfg.integer("pedestrian", "map_average", a.average));
        a.m_start = cfg.real("pedestrian", "m_start", a.m_start);
        const std::string density = cfg.string("pedestrian", "density", "packed");
        if (density != "packed" && density != "fitted")
            throw ConfigError("unknown pedestrian density '" + density + "' (packed, fitted)");
        a.fitted_density = density == "fitted";
        a.fit_time = cfg.real("pedestrian", "fit_time", a.fit_time);
        a.refit_distance = cfg.real("pedestrian", "refit_distance", a.refit_distance);
        a.micro_dt = s.eq.micro_dt;
        a.lift.seed = static_cast<unsigned>(seed);
        s.probe = std::make_unique<ped::AmplitudeProbe>(s.pp, a);
        s.x_default = MacroState{{a.m_start, 0.0}};
        ped::AmplitudeProbe* probe = s.probe.get();
        s.family.instantiate = [probe](const ParameterSet& ps) {
            return probe->model(probe->params(ps));
        };
    } else {
        const std::string system = cfg.string("experiment", "system");
        s.family = testsys::by_name(system);
        const auto names = testsys::parameter_names(system);
        s.base = cfg.parameters();
        for (const auto& n : names)
            if (!s.base.has(n)) s.base.set(n, testsys_default(n));
        EqFreeConfig d;
        d.t_skip = 1.0;
        d.t0 = 1.0;
        d.delta = 0.1;
        s.eq = cfg.eqfree(d);
        s.param = cfg.string("continuation", "param", names.front());
        s.param2 = cfg.string("two_param", "param2", names.size() > 1 ? names[1] : names.front());
        s.p_start = cfg.real("continuation", "p_start", s.base.get_or(s.param, 0.0));
        s.x_default = MacroState::Constant(system == "hopf" ? 2 : 1, 0.5);
    }
    s.eq.threads = opts.threads;
    s.eq.validate();
    if (!s.base.has(s.param))
        throw ConfigError("continuation parameter '" + s.param + "' is not a model parameter");
    if (!s.base.has(s.param2))
        throw ConfigError("second parameter '" + s.param2 + "' is not a model parameter");
    return s;
}

MacroState x_from(const ExperimentConfig& cfg, const std::string& section, const std::string& key,
                  const MacroState& fallback) {
    const auto v = cfg.reals(section, key);
    if (v.empty()) return fallback;
    if (static_cast<Eigen::Index>(v.size()) != fallback.size())
        throw ConfigError("[" + section + "] " + key + " needs " + std::to_string(fallback.size()) +
                          " component(s)");
    return to_vector(v);
}

ParameterSet with(ParameterSet p, const std::string& name, double value) {
    p.set(name, value);
    return p;
}

ContinuationOptions continuation_options(const ExperimentConfig& cfg, const Setup& s) {
    ContinuationOptions o;
    if (s.model == "traffic") {
        o.step = -0.01;
        o.p_min = 0.8;
        o.p_max = 1.0;
        o.x_min = 0.0;
    }
    o.step = cfg.real("continuation", "step", o.step);
    o.n_points = static_cast<int>(cfg.integer("continuation", "n_points", o.n_points));
    o.p_min = cfg.real("continuation", "p_min", o.p_min);
    o.p_max = cfg.real("continuation", "p_max", o.p_max);
    o.x_min = cfg.real("continuation", "x_min", o.x_min);
    o.x_max = cfg.real("continuation", "x_max", o.x_max);
    o.max_halvings = static_cast<int>(cfg.integer("continuation", "max_halvings", o.max_halvings));
    o.stability_band = cfg.real("continuation", "stability_band", o.stability_band);
    o.param_weight = cfg.real("continuation", "param_weight", o.param_weight);
    return o;
}

Branch run_branch(const ExperimentConfig& cfg, Setup& s, std::ostream& log) {
    const ContinuationOptions o = continuation_options(cfg, s);
    const MacroState x0 = x_from(cfg, "continuation", "x_start", s.x_default);
    log << "branch in " << s.param << " from " << s.p_start << " (step " << o.step << ")\n";
    Branch br = continue_branch(s.family, s.base, s.param, s.eq, s.p_start, x0, o);
    log << br.points.size() << " points, stop: " << br.stop_reason << '\n';
    return br;
}

std::string out_path(const ExperimentConfig& cfg, const RunOptions& opts, const std::string& suffix) {
    const std::string stem =
        cfg.string("experiment", "output", cfg.model() + "_" + cfg.task());
    return (std::filesystem::path(opts.out_dir) / (stem + suffix)).string();
}

// ---------------------------------------------------------------- tasks

void task_simulate(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts, RunResult& res) {
    const CoarseModel model = s.family.instantiate(s.base);
    const MacroState x0 = x_from(cfg, "simulate", "x0", s.x_default);
    const double t_end = cfg.real("simulate", "t_end", 100.0);
    const double sample = cfg.real("simulate", "sample_dt", 1.0);
    if (!(t_end > 0.0) || !(sample > 0.0)) throw ConfigError("[simulate] t_end and sample_dt must be > 0");
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols{"t"};
    const auto names = indexed("x", model.ops.macro_dim);
    cols.insert(cols.end(), names.begin(), names.end());
    csv.columns(cols);
    MicroState u = model.ops.lift(x0);
    const long n = std::lround(t_end / sample);
    for (long k = 0; k <= n; ++k) {
        if (k > 0) u = integrate(model.system, u, sample, s.eq.micro_dt);
        std::vector<double> row{k * sample};
        append(row, model.ops.restrict(u));
        csv.row(row);
    }
    res.files.push_back(csv.path());
    if (s.model == "pedestrian" && cfg.boolean("pedestrian", "snapshot", false)) {
        const std::string path = out_path(cfg, opts, "_snapshot.txt");
        std::ofstream f(path);
        if (!f) throw ConfigError("cannot write output file '" + path + "'");
        ped::write_snapshot(f, u, s.probe->params(s.base), n * sample);
        res.files.push_back(path);
    }
}

void task_equilibrium(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts,
                      RunResult& res) {
    if (s.model == "pedestrian")
        throw ConfigError("task equilibrium is not available for model pedestrian");
    const CoarseModel model = s.family.instantiate(s.base);
    const MacroState guess = x_from(cfg, "equilibrium", "x_guess", s.x_default);
    const Equilibrium eq = find_equilibrium(model, s.eq, guess);
    const StabilityResult st = stability(model, s.eq, eq.unhealed);
    BranchPoint bp;
    bp.eigenvalues = st.eigenvalues;
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols = indexed("x_unhealed", eq.unhealed.size());
    const auto h = indexed("x_healed", eq.healed.size());
    cols.insert(cols.end(), h.begin(), h.end());
    cols.insert(cols.end(), {"max_abs_lambda", "im_lambda_lead", "stable", "newton_iters", "residual"});
    csv.columns(cols);
    std::vector<double> row;
    append(row, eq.unhealed);
    append(row, eq.healed);
    row.insert(row.end(), {bp.max_modulus(), bp.leading_imag(),
                           classify(st.eigenvalues, 1e-3) == Stability::Stable ? 1.0 : 0.0,
                           static_cast<double>(eq.newton_iters), eq.residual});
    csv.row(row);
    res.files.push_back(csv.path());
}

/// One-parameter amplitude scan of the pedestrian map plus the bisected onset.
void pedestrian_branch(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts,
                       RunResult& res, std::ostream& log) {
    const double lo = cfg.real("continuation", "p_min", 0.3);
    const double hi = cfg.real("continuation", "p_max", 1.2);
    const double step = std::abs(cfg.real("continuation", "step", 0.1));
    const double threshold = cfg.real("pedestrian", "amplitude_threshold", 1e-3);
    if (!(hi > lo) || !(step > 0.0)) throw ConfigError("pedestrian branch needs p_min < p_max, step > 0");
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    csv.columns({s.param, "amplitude", "blocked", "period", "m_section"});
    std::vector<std::pair<double, double>> scan;
    const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
    for (long k = 0; k <= n; ++k) {
        const double w = lo + k * step;
        const ped::PoincareResult r = s.probe->probe(with(s.base, s.param, w));
        log << s.param << "=" << w << " amplitude " << r.amplitude << (r.blocked ? " (blocked)" : "")
            << '\n';
        csv.row({w, r.amplitude, r.blocked ? 1.0 : 0.0,
                 r.blocked ? 0.0 : r.crossing_time - r.first_crossing, r.x_next(0)});
        scan.emplace_back(w, r.amplitude - threshold);
    }
    // The onset is bracketed by the last scan point below threshold that is
    // followed by one above it.
    for (std::size_t k = scan.size() - 1; k >= 1; --k) {
        if (scan[k - 1].second < 0.0 && scan[k].second >= 0.0) {
            auto f = [&](double w) { return s.probe->amplitude(with(s.base, s.param, w)) - threshold; };
            const double tol = cfg.real("two_param", "tol", 1e-3);
            const double w = bisect(f, scan[k - 1].first, scan[k].first, tol);
            csv.comment("event type=onset " + s.param + "=" + format_csv(w));
            log << "onset at " << s.param << " = " << w << '\n';
            break;
        }
    }
    res.files.push_back(csv.path());
}

void task_branch(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts, RunResult& res,
                 std::ostream& log) {
    if (s.model == "pedestrian") return pedestrian_branch(cfg, s, opts, res, log);
    const Branch br = run_branch(cfg, s, log);
    if (br.points.empty()) throw DivergenceError(0.0, 0, "branch produced no points");
    const Eigen::Index n = br.points.front().x_unhealed.size();
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols{s.param};
    for (const auto& stem : {"x_unhealed", "x_healed"}) {
        const auto c = indexed(stem, n);
        cols.insert(cols.end(), c.begin(), c.end());
    }
    cols.insert(cols.end(), {"max_abs_lambda", "im_lambda_lead", "stable", "newton_iters",
                             "residual", "arclength"});
    csv.columns(cols);
    for (const auto& bp : br.points) {
        std::vector<double> row{bp.param};
        append(row, bp.x_unhealed);
        append(row, bp.x_healed);
        row.insert(row.end(), {bp.max_modulus(), bp.leading_imag(), bp.stable() ? 1.0 : 0.0,
                               static_cast<double>(bp.newton_iters), bp.residual, bp.arclength});
        csv.row(row);
    }
    csv.comment("stop " + br.stop_reason);
    for (const auto& e : br.events) {
        csv.comment(std::string("event type=") + to_string(e.type) + " " + s.param + "=" +
                    format_csv(e.param) + " x=" + describe(e.x) + " arclength=" +
                    format_csv(e.arclength));
        log << to_string(e.type) << " at " << s.param << " = " << e.param << '\n';
    }
    if (s.model == "traffic" && s.param == "v0") {
        // Where the branch meets sigma = 0, by linear interpolation.
        for (std::size_t k = 1; k < br.points.size(); ++k) {
            const double a = br.points[k - 1].x_unhealed(0), b = br.points[k].x_unhealed(0);
            if (a > 0.0 && b <= 0.0) {
                const double p = br.points[k - 1].param +
                                 (br.points[k].param - br.points[k - 1].param) * a / (a - b);
                csv.comment("sigma_zero v0=" + format_csv(p));
                log << "sigma -> 0 at v0 = " << p << '\n';
            }
        }
        // Linear stability loss of uniform flow, bisected on the growth rate.
        auto growth = [&](double v0) {
            traffic::OVParams q = s.ovp;
            q.v0 = v0;
            double g = -1e300;
            for (int k = 1; k <= q.n_cars / 2; ++k) g = std::max(g, traffic::uniform_flow_growth_rate(q, k));
            return g;
        };
        const double lo = 0.5 * s.ovp.v0, hi = 2.0 * std::max(s.ovp.v0, s.p_start);
        if (growth(lo) < 0.0 && growth(hi) > 0.0) {
            const double v = bisect(growth, lo, hi, 1e-10);
            csv.comment("uniform_flow_stability_loss v0=" + format_csv(v));
        }
    }
    res.files.push_back(csv.path());
}

TwoParamOptions two_param_options(const ExperimentConfig& cfg, const Setup& s) {
    TwoParamOptions o;
    if (s.model == "traffic") {
        o.step = 0.005;
        o.n_points = 40;
        o.p2_min = 1.0;
        o.p2_max = 1.4;
        o.tol = 1e-5;
    }
    o.step = std::abs(cfg.real("two_param", "step", o.step));
    o.n_points = static_cast<int>(cfg.integer("two_param", "n_points", o.n_points));
    o.p2_min = cfg.real("two_param", "p2_min", o.p2_min);
    o.p2_max = cfg.real("two_param", "p2_max", o.p2_max);
    o.tol = cfg.real("two_param", "tol", o.tol);
    o.max_halvings = static_cast<int>(cfg.integer("two_param", "max_halvings", o.max_halvings));
    o.outer_fd.rel = cfg.real("two_param", "outer_fd_rel", o.outer_fd.rel);
    o.outer_fd.abs_floor = cfg.real("two_param", "outer_fd_abs", o.outer_fd.abs_floor);
    return o;
}

void write_curve(Csv& csv, const std::vector<CurvePoint>& pts, const Setup& s, bool with_x,
                 const std::vector<double>& extra_col = {}) {
    for (std::size_t k = 0; k < pts.size(); ++k) {
        std::vector<double> row{pts[k].p1, pts[k].p2};
        if (with_x) {
            append(row, pts[k].x);
            row.push_back(pts[k].newton_iters);
        }
        if (!extra_col.empty()) row.push_back(extra_col[k]);
        csv.row(row);
    }
    (void)s;
}

/// Joins the two directions into one curve ordered along p2.
std::vector<CurvePoint> join(const Curve& down, const Curve& up) {
    std::vector<CurvePoint> pts(down.points.rbegin(), down.points.rend());
    for (std::size_t k = 0; k < up.points.size(); ++k)
        if (k > 0 || pts.empty()) pts.push_back(up.points[k]);
    return pts;
}

void task_fold2par(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts, RunResult& res,
                   std::ostream& log) {
    if (s.model == "pedestrian")
        throw ConfigError("task fold2par is not available for model pedestrian");
    const Branch br = run_branch(cfg, s, log);
    const auto fold = std::find_if(br.events.begin(), br.events.end(),
                                   [](const BranchEvent& e) { return e.type == EventType::Fold; });
    if (fold == br.events.end()) throw DivergenceError(0.0, 0, "no fold found on the seed branch");
    log << "seed fold at " << s.param << " = " << fold->param << '\n';

    ModelFamily family = s.family;
    std::shared_ptr<traffic::OVFamily> fixed;
    traffic::ReferenceProfile seed_ref;
    if (s.ov) {
        // Freeze the lifting template that was in use next to the fold.
        const auto& hist = s.ov->history();
        seed_ref = hist.at(std::min(fold->after, hist.size() - 1));
        fixed = std::make_shared<traffic::OVFamily>(s.ovp, seed_ref, false);
        family = fixed->family();
    }
    const TwoParamOptions o = two_param_options(cfg, s);
    const bool both = cfg.boolean("two_param", "both_directions", true);
    TwoParamOptions up = o, down = o;
    down.step = -o.step;
    const Curve cu = fold_continue_2par(family, s.base, s.param, s.param2, s.eq, fold->param,
                                        fold->x, up);
    log << "increasing " << s.param2 << ": " << cu.points.size() << " points, stop: "
        << cu.stop_reason << '\n';
    Curve cd;
    if (both) {
        if (fixed) fixed->set_reference(seed_ref);
        cd = fold_continue_2par(family, s.base, s.param, s.param2, s.eq, fold->param, fold->x, down);
        log << "decreasing " << s.param2 << ": " << cd.points.size() << " points, stop: "
            << cd.stop_reason << '\n';
    }
    const auto pts = join(cd, cu);
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols{s.param, s.param2};
    const auto xs = indexed("x", fold->x.size());
    cols.insert(cols.end(), xs.begin(), xs.end());
    cols.push_back("newton_iters");
    csv.columns(cols);
    write_curve(csv, pts, s, true);
    csv.comment("stop increasing " + cu.stop_reason);
    if (both) csv.comment("stop decreasing " + cd.stop_reason);
    res.files.push_back(csv.path());
}

OnsetOptions onset_options(const ExperimentConfig& cfg, const Setup& s) {
    OnsetOptions o;
    if (s.model == "traffic") {
        o.step = 0.05;
        o.n_points = 9;
        o.p2_min = 1.0;
        o.p2_max = 1.4;
        o.search_width = 0.02;
        o.tol = 1e-6;
    } else if (s.model == "pedestrian") {
        o.step = 0.1;
        o.n_points = 5;
        o.search_width = 0.2;
        o.tol = 5e-3;
    }
    o.step = std::abs(cfg.real("two_param", "step", o.step));
    o.n_points = static_cast<int>(cfg.integer("two_param", "n_points", o.n_points));
    o.p2_min = cfg.real("two_param", "p2_min", o.p2_min);
    o.p2_max = cfg.real("two_param", "p2_max", o.p2_max);
    o.search_width = cfg.real("two_param", "search_width", o.search_width);
    o.tol = cfg.real("two_param", "tol", o.tol);
    return o;
}

void task_hopf2par(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts, RunResult& res,
                   std::ostream& log) {
    OnsetTest test;
    double lo, hi;
    if (s.model == "pedestrian") {
        const double threshold = cfg.real("pedestrian", "amplitude_threshold", 1e-3);
        ped::AmplitudeProbe* probe = s.probe.get();
        const std::string p1 = s.param, p2 = s.param2;
        ParameterSet base = s.base;
        test = [probe, base, p1, p2, threshold](double a, double b) {
            ParameterSet ps = base;
            ps.set(p1, a);
            ps.set(p2, b);
            return probe->amplitude(ps) - threshold;
        };
        lo = cfg.real("continuation", "p_min", 0.3);
        hi = cfg.real("continuation", "p_max", 1.2);
    } else {
        const MacroState x0 = x_from(cfg, "equilibrium", "x_guess",
                                     s.model == "traffic" ? MacroState::Zero(1) : s.x_default);
        test = coarse_hopf_test(s.family, s.base, s.param, s.param2, s.eq, x0);
        const double p0 = s.base.get(s.param);
        lo = cfg.real("continuation", "p_min", s.model == "traffic" ? 0.85 : p0 - 1.0);
        hi = cfg.real("continuation", "p_max", s.model == "traffic" ? 0.95 : p0 + 1.0);
    }
    const double p2_seed = s.base.get(s.param2);
    const OnsetOptions o = onset_options(cfg, s);
    auto at_seed = [&](double p1) { return test(p1, p2_seed); };
    if (s.model == "pedestrian") {
        // Same onset as the branch task: the last below-to-above transition
        // of a scan, since the amplitude is not monotone near threshold.
        const double step = std::abs(cfg.real("continuation", "step", 0.1));
        const long n = std::lround(std::floor((hi - lo) / step + 1e-9));
        std::vector<std::pair<double, double>> scan;
        for (long k = 0; k <= n; ++k) scan.emplace_back(lo + k * step, at_seed(lo + k * step));
        for (std::size_t k = scan.size() - 1; k >= 1; --k)
            if (scan[k - 1].second < 0.0 && scan[k].second >= 0.0) {
                lo = scan[k - 1].first;
                hi = scan[k].first;
                break;
            }
    }
    const double flo = at_seed(lo), fhi = at_seed(hi);
    if (flo * fhi > 0.0)
        throw DivergenceError(0.0, 0, "onset test does not change sign between p_min and p_max");
    const double seed = bisect(at_seed, lo, hi, o.tol);
    log << "onset seed at " << s.param << " = " << seed << ", " << s.param2 << " = " << p2_seed << '\n';

    OnsetOptions up = o, down = o;
    down.step = -o.step;
    const Curve cu = onset_continue_2par(test, seed, p2_seed, up);
    Curve cd;
    const bool both = cfg.boolean("two_param", "both_directions", true);
    if (both) cd = onset_continue_2par(test, seed, p2_seed, down);
    const auto pts = join(cd, cu);
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols{s.param, s.param2};
    std::vector<double> analytic;
    if (s.model == "traffic" && s.param == "v0" && s.param2 == "h") {
        cols.push_back("analytic_v0");
        std::vector<double> hs;
        for (const auto& pt : pts) hs.push_back(pt.p2);
        for (const auto& [h, v] : traffic::analytic_hopf_curve(s.ovp, hs)) analytic.push_back(v);
    }
    csv.columns(cols);
    write_curve(csv, pts, s, false, analytic);
    csv.comment("stop increasing " + cu.stop_reason);
    if (both) csv.comment("stop decreasing " + cd.stop_reason);
    log << pts.size() << " curve points\n";
    res.files.push_back(csv.path());
}

void task_healing(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts, RunResult& res) {
    const MacroState x0 = x_from(cfg, "healing", "x0", s.x_default);
    const double horizon = cfg.real("healing", "horizon", s.eq.t0);
    const double sample = cfg.real("healing", "sample_dt", 1.0);
    const double pert = cfg.real("healing", "perturbation", 0.05);
    CoarseModel model = s.family.instantiate(s.base);
    MicroState u0 = model.ops.lift(x0);
    MicroState u1;
    if (s.model == "traffic") {
        // A second lifting of the same sigma with scale 1 + perturbation.
        ParameterSet alt = s.base;
        alt.set("mu", s.ovp.mu * (1.0 + pert));
        u1 = s.family.instantiate(alt).ops.lift(x0);
    } else if (s.model == "pedestrian") {
        ped::LiftOptions lo;
        lo.seed = static_cast<unsigned>(cfg.integer("experiment", "seed", 1)) + 1;
        const ped::PedParams p = s.probe->params(s.base);
        const auto d = ped::packed_density(p);
        u1 = ped::lift_linear(x0, d, d, p, lo);
    } else {
        u1 = u0;
        u1(u1.size() - 1) += pert;
    }
    const HealingProfile hp = healing_diagnostic(model, s.eq, u0, u1, horizon, sample);
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    csv.columns({"t", "d"});
    for (std::size_t k = 0; k < hp.s_heal.size(); ++k) csv.row({hp.s_heal[k], hp.d_heal[k]});
    for (std::size_t k = 0; k < hp.t.size(); ++k) csv.row({hp.t_skip + hp.t[k], hp.d[k]});
    csv.comment("fit gamma_hat=" + format_csv(hp.gamma_hat) + " epsilon_hat=" +
                format_csv(hp.epsilon_hat) + " prefactor=" + format_csv(hp.prefactor()) +
                " t_skip=" + format_csv(hp.t_skip));
    res.files.push_back(csv.path());
}

void task_projective(const ExperimentConfig& cfg, Setup& s, const RunOptions& opts,
                     RunResult& res) {
    if (s.model == "pedestrian")
        throw ConfigError("task projective is not available for model pedestrian");
    const CoarseModel model = s.family.instantiate(s.base);
    const MacroState x0 = x_from(cfg, "projective", "x0", s.x_default);
    const double dt = cfg.real("projective", "dt_macro", 1.0);
    const int n = static_cast<int>(cfg.integer("projective", "n_steps", 10));
    const ProjectiveResult pr = projective_integrate(model, s.eq, x0, dt, n);
    Csv csv(out_path(cfg, opts, ".csv"), cfg);
    std::vector<std::string> cols{"step", "t"};
    const auto xs = indexed("x", x0.size());
    cols.insert(cols.end(), xs.begin(), xs.end());
    csv.columns(cols);
    for (std::size_t k = 0; k < pr.trajectory.size(); ++k) {
        std::vector<double> row{static_cast<double>(k), k * dt};
        append(row, pr.trajectory[k]);
        csv.row(row);
    }
    res.files.push_back(csv.path());
    if (pr.error) {
        csv.comment("stopped " + *pr.error);
        throw DivergenceError(0.0, 0, "projective step failed: " + *pr.error);
    }
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

}  // namespace

std::string config_header(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << kBegin << '\n';
    std::istringstream is(cfg.serialize());
    std::string line;
    while (std::getline(is, line)) os << "# " << line << '\n';
    os << kEnd << '\n';
    return os.str();
}

ExperimentConfig config_from_output(std::istream& in) {
    std::string line;
    bool inside = false;
    std::string text;
    while (std::getline(in, line)) {
        if (line == kBegin) {
            inside = true;
            continue;
        }
        if (line == kEnd) return ExperimentConfig::parse_string(text);
        if (inside) text += (line.size() >= 2 ? line.substr(2) : std::string()) + '\n';
    }
    throw ConfigError("no embedded config found");
}

RunResult run(ExperimentConfig cfg, const RunOptions& opts, std::ostream& log) {
    RunResult res;
    std::string task = "?";
    auto fail = [&](int code, const char* kind, const std::string& msg) {
        res.exit_code = code;
        res.error = "error: code=" + std::to_string(code) + " kind=" + kind + " task=" + task +
                    " message=" + quote(msg);
    };
    try {
        if (opts.seed) cfg.set("experiment", "seed", std::to_string(*opts.seed));
        cfg.validate();
        task = cfg.task();
        std::filesystem::create_directories(opts.out_dir);
        Setup s = make_setup(cfg, opts);
        if (task == "simulate") task_simulate(cfg, s, opts, res);
        else if (task == "equilibrium") task_equilibrium(cfg, s, opts, res);
        else if (task == "branch") task_branch(cfg, s, opts, res, log);
        else if (task == "fold2par") task_fold2par(cfg, s, opts, res, log);
        else if (task == "hopf2par") task_hopf2par(cfg, s, opts, res, log);
        else if (task == "healing-diagnostic") task_healing(cfg, s, opts, res);
        else if (task == "projective") task_projective(cfg, s, opts, res);
    } catch (const ConfigError& e) {
        fail(kExitConfig, "config", e.what());
    } catch (const LiftingDomainError& e) {
        fail(kExitDomain, "lifting-domain", e.what());
    } catch (const ped::DegenerateStateError& e) {
        fail(kExitDomain, "degenerate-state", e.what());
    } catch (const DivergenceError& e) {
        fail(kExitSolver, "divergence", e.what());
    } catch (const SingularJacobianError& e) {
        fail(kExitSolver, "singular-jacobian", e.what());
    } catch (const BlowUpError& e) {
        fail(kExitSolver, "blow-up", e.what());
    } catch (const Error& e) {
        fail(kExitSolver, "solver", e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        fail(kExitConfig, "io", e.what());
    }
    return res;
}

}  // namespace eqf::io
