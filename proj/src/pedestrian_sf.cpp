#include "eqf/pedestrian_sf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace eqf::ped {
namespace {

constexpr double kMaxExponent = 50.0;

double expo(double z) { return std::exp(std::min(z, kMaxExponent)); }

int lane_count(const PedParams& p) {
    return std::max(1, static_cast<int>(std::floor((p.height - 2.0 * p.radius) / (2.1 * p.radius))));
}

double lane_y(int lane, int lanes, const PedParams& p) {
    const double usable = p.height - 2.0 * p.radius;
    return -0.5 * p.height + p.radius + (lane + 0.5) * usable / lanes;
}

/// Opposite crowds meet only in the door zone and only before either has
/// passed the door.
bool interacts(Eigen::Index i, double xi, Eigen::Index j, double xj, const PedParams& p) {
    const double si = p.direction(i);
    const double sj = p.direction(j);
    if (si == sj) return true;
    const double zone = 0.25 * p.length;
    if (std::abs(xi) > zone || std::abs(xj) > zone) return false;
    return !passed(xi, si, p) && !passed(xj, sj, p);
}

}  // namespace

void PedParams::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string("pedestrian parameter ") + name + " must be > 0");
    };
    if (n_per_crowd < 1) throw ConfigError("pedestrian parameter N must be >= 1");
    positive(w, "w");
    positive(r_v0, "r_v0");
    positive(v0, "v0");
    positive(length, "length");
    positive(height, "height");
    positive(thickness, "thickness");
    positive(radius, "radius");
    positive(a, "A");
    positive(b, "B");
    positive(a_wall, "A_wall");
    positive(b_wall, "B_wall");
    positive(tau, "tau");
    positive(kappa_width, "kappa_width");
    if (w >= height) throw ConfigError("pedestrian parameter w must be below the corridor height");
}

std::vector<std::string> parameter_names() {
    return {"N", "w", "r_v0", "v0", "length", "height", "thickness", "radius",
            "A", "B", "A_wall", "B_wall", "tau", "kappa_width"};
}

PedParams PedParams::from(const ParameterSet& ps) {
    PedParams p;
    p.n_per_crowd = static_cast<int>(std::lround(ps.get_or("N", p.n_per_crowd)));
    p.w = ps.get_or("w", p.w);
    p.r_v0 = ps.get_or("r_v0", p.r_v0);
    p.v0 = ps.get_or("v0", p.v0);
    p.length = ps.get_or("length", p.length);
    p.height = ps.get_or("height", p.height);
    p.thickness = ps.get_or("thickness", p.thickness);
    p.radius = ps.get_or("radius", p.radius);
    p.a = ps.get_or("A", p.a);
    p.b = ps.get_or("B", p.b);
    p.a_wall = ps.get_or("A_wall", p.a_wall);
    p.b_wall = ps.get_or("B_wall", p.b_wall);
    p.tau = ps.get_or("tau", p.tau);
    p.kappa_width = ps.get_or("kappa_width", p.kappa_width);
    p.validate();
    return p;
}

ParameterSet PedParams::to_parameter_set() const {
    ParameterSet s;
    s.set("N", n_per_crowd);
    s.set("w", w);
    s.set("r_v0", r_v0);
    s.set("v0", v0);
    s.set("length", length);
    s.set("height", height);
    s.set("thickness", thickness);
    s.set("radius", radius);
    s.set("A", a);
    s.set("B", b);
    s.set("A_wall", a_wall);
    s.set("B_wall", b_wall);
    s.set("tau", tau);
    s.set("kappa_width", kappa_width);
    return s;
}

double wrap(double x, double length) { return x - length * std::floor(x / length + 0.5); }

double pair_force(double d, const PedParams& p) { return p.a * expo((2.0 * p.radius - d) / p.b); }

double wall_force(double d, const PedParams& p) {
    return p.a_wall * expo((p.radius - d) / p.b_wall);
}

bool passed(double x, double s, const PedParams& p) {
    return s * x > 0.5 * p.thickness + p.radius;
}

Eigen::Vector2d desired_direction(double x, double y, double s, const PedParams& p) {
    if (s * x >= 0.5 * p.thickness) return {s, 0.0};
    const double gap = std::max(0.5 * p.w - p.radius, 0.0);
    const Eigen::Vector2d target(s * 0.5 * p.thickness, std::clamp(y, -gap, gap));
    const Eigen::Vector2d d = target - Eigen::Vector2d(x, y);
    const double n = d.norm();
    if (n < 1e-12) return {s, 0.0};
    return d / n;
}

Eigen::Vector2d wall_forces(double x, double y, const PedParams& p) {
    const double half_h = 0.5 * p.height;
    const double half_t = 0.5 * p.thickness;
    Eigen::Vector2d f(0.0, wall_force(y + half_h, p) - wall_force(half_h - y, p));
    for (double side : {1.0, -1.0}) {
        // Jamb: rectangle |x| <= t/2, side * y in [w/2, H/2].
        const double cx = std::clamp(x, -half_t, half_t);
        const double lo = side > 0 ? 0.5 * p.w : -half_h;
        const double hi = side > 0 ? half_h : -0.5 * p.w;
        const double cy = std::clamp(y, lo, hi);
        const double dx = x - cx;
        const double dy = y - cy;
        const double d = std::hypot(dx, dy);
        if (d > 1e-12)
            f += wall_force(d, p) * Eigen::Vector2d(dx / d, dy / d);
        else
            f += wall_force(0.0, p) * Eigen::Vector2d(0.0, -side);
    }
    return f;
}

void sf_rhs(const MicroState& u, const PedParams& p, MicroState& du) {
    const Eigen::Index n = p.count();
    const auto xs = u.segment(0, n);
    const auto ys = u.segment(n, n);
    const auto vx = u.segment(2 * n, n);
    const auto vy = u.segment(3 * n, n);
    du.segment(0, n) = vx;
    du.segment(n, n) = vy;
    auto ax = du.segment(2 * n, n);
    auto ay = du.segment(3 * n, n);

    std::vector<double> xw(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = wrap(xs(i), p.length);
        xw[static_cast<std::size_t>(i)] = x;
        const double s = p.direction(i);
        const Eigen::Vector2d e = desired_direction(x, ys(i), s, p);
        const double v = p.desired_speed(i);
        const Eigen::Vector2d fw = wall_forces(x, ys(i), p);
        ax(i) = (v * e.x() - vx(i)) / p.tau + fw.x();
        ay(i) = (v * e.y() - vy(i)) / p.tau + fw.y();
    }

    const double cut = p.cutoff();
    auto pair = [&](Eigen::Index i, Eigen::Index j) {
        const double dx = wrap(xs(i) - xs(j), p.length);
        if (std::abs(dx) > cut) return;
        const double dy = ys(i) - ys(j);
        const double d2 = dx * dx + dy * dy;
        if (d2 > cut * cut) return;
        if (!interacts(i, xw[static_cast<std::size_t>(i)], j, xw[static_cast<std::size_t>(j)], p))
            return;
        const double d = std::sqrt(d2);
        if (d < 1e-12) return;   // coincident centres have no direction
        const double f = pair_force(d, p) / d;
        ax(i) += f * dx;
        ay(i) += f * dy;
        ax(j) -= f * dx;
        ay(j) -= f * dy;
    };

    const int cells = static_cast<int>(std::floor(p.length / cut));
    if (cells < 3) {
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) pair(i, j);
        return;
    }
    // Cell list along the ring; cell width >= cutoff so only neighbours c, c+1 matter.
    const double width = p.length / cells;
    std::vector<Eigen::Index> head(static_cast<std::size_t>(cells), -1);
    std::vector<Eigen::Index> next(static_cast<std::size_t>(n), -1);
    for (Eigen::Index i = n - 1; i >= 0; --i) {
        int c = static_cast<int>(std::floor((xw[static_cast<std::size_t>(i)] + 0.5 * p.length) / width));
        c = std::clamp(c, 0, cells - 1);
        next[static_cast<std::size_t>(i)] = head[static_cast<std::size_t>(c)];
        head[static_cast<std::size_t>(c)] = i;
    }
    for (int c = 0; c < cells; ++c) {
        const int c2 = (c + 1) % cells;
        for (Eigen::Index i = head[static_cast<std::size_t>(c)]; i >= 0; i = next[static_cast<std::size_t>(i)]) {
            for (Eigen::Index j = next[static_cast<std::size_t>(i)]; j >= 0; j = next[static_cast<std::size_t>(j)])
                pair(i, j);
            for (Eigen::Index j = head[static_cast<std::size_t>(c2)]; j >= 0; j = next[static_cast<std::size_t>(j)])
                pair(i, j);
        }
    }
}

MicroSystem make_system(const PedParams& p) {
    p.validate();
    MicroSystem sys;
    sys.dim = 4 * p.count();
    sys.rhs = [p](const MicroState& u, MicroState& du) { sf_rhs(u, p, du); };
    sys.post_step = [p](MicroState& u) {
        const Eigen::Index n = p.count();
        for (Eigen::Index i = 0; i < n; ++i) u(i) = wrap(u(i), p.length);
    };
    return sys;
}

MacroState restrict_m(const MicroState& u, const PedParams& p) {
    const Eigen::Index n = p.count();
    const Eigen::Index half = p.n_per_crowd;
    const double l2 = p.kappa_width * p.kappa_width;
    MacroState out = MacroState::Zero(2);
    for (int crowd = 0; crowd < 2; ++crowd) {
        double sw = 0.0, swx = 0.0, sdw = 0.0, sdwx = 0.0;
        for (Eigen::Index i = crowd * half; i < (crowd + 1) * half; ++i) {
            const double x = wrap(u(i), p.length);
            const double v = u(2 * n + i);
            const double k = std::exp(-x * x / (2.0 * l2));
            const double kp = -x / l2 * k;
            sw += k;
            swx += k * x;
            sdw += kp * v;
            sdwx += (kp * x + k) * v;
        }
        if (sw < 1e-12) {
            std::ostringstream os;
            os << "restrict_m: kernel weight " << sw << " of the " << (crowd == 0 ? "red" : "blue")
               << " crowd is below 1e-12";
            throw DegenerateStateError(os.str());
        }
        out(0) += 0.5 * swx / sw;
        out(1) += 0.5 * (sdwx * sw - swx * sdw) / (sw * sw);
    }
    return out;
}

double DensityLine::mass(double d) const {
    return 0.5 * a * (d * d - start * start) + b * (d - start);
}

double DensityLine::quantile(double q, double n) const {
    const double target = q * n;
    const double p0 = at(start);
    if (!(p0 > 0.0)) throw LiftingDomainError(0, "density line is not positive at its start");
    // Solve a/2 e^2 + p0 e = target for e = d - start.
    double e;
    if (std::abs(a) < 1e-14) {
        e = target / p0;
    } else {
        const double disc = p0 * p0 + 2.0 * a * target;
        if (disc < 0.0)
            throw LiftingDomainError(static_cast<long>(std::ceil(target)),
                                     "density line reaches zero before holding the crowd");
        e = 2.0 * target / (p0 + std::sqrt(disc));
    }
    return start + e;
}

double DensityLine::span_end(double n) const { return quantile(1.0, n); }

DensityLine packed_density(const PedParams& p) {
    DensityLine l;
    l.a = 0.0;
    l.b = lane_count(p) / (2.1 * p.radius);
    l.start = 0.5 * p.thickness + 2.0 * p.radius;
    return l;
}

namespace {

struct Histogram {
    double lo = 0.0, width = 1.0;
    std::vector<double> density;   ///< count per unit length
    std::vector<double> centres;
};

Histogram histogram(const std::vector<double>& d, double lo, double hi, int bins, double weight) {
    Histogram h;
    h.lo = lo;
    h.width = (hi - lo) / bins;
    h.density.assign(static_cast<std::size_t>(bins), 0.0);
    for (int k = 0; k < bins; ++k) h.centres.push_back(lo + (k + 0.5) * h.width);
    for (double v : d) {
        if (v < lo || v > hi) continue;
        const int k = std::min(static_cast<int>(std::floor((v - lo) / h.width)), bins - 1);
        h.density[static_cast<std::size_t>(k)] += weight / h.width;
    }
    return h;
}

/// End of the occupied span: the 95% quantile, which leaves out the sparse
/// walkers on their way round the ring.
double span_quantile(std::vector<double> d) {
    const auto k = static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(d.size() - 1)));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    return d[k];
}

}  // namespace

DensityLine fit_density(const DensitySamples& samples, double start, double crowd, int bins) {
    const auto& d = samples.distances;
    if (d.empty() || samples.snapshots < 1) throw Error("fit_density: no samples");
    const double hi = span_quantile(d);
    if (!(hi > start)) throw Error("fit_density: samples do not extend past the start");
    const Histogram h = histogram(d, start, hi, bins, 1.0 / samples.snapshots);
    Eigen::MatrixXd m(bins, 2);
    Eigen::VectorXd rhs(bins);
    for (int k = 0; k < bins; ++k) {
        m(k, 0) = h.centres[static_cast<std::size_t>(k)];
        m(k, 1) = 1.0;
        rhs(k) = h.density[static_cast<std::size_t>(k)];
    }
    const Eigen::Vector2d c = m.colPivHouseholderQr().solve(rhs);
    DensityLine l;
    l.a = c(0);
    l.b = c(1);
    l.start = start;
    // Rescale so the span [start, hi] holds the whole crowd.
    const double n = crowd;
    const double mass = l.mass(hi);
    if (!(mass > 0.0) || l.at(hi) < 0.0 || l.at(start) <= 0.0)
        throw Error("fit_density: fitted line is not positive on the occupied span");
    l.a *= n / mass;
    l.b *= n / mass;
    return l;
}

int density_bins(const DensitySamples& samples, double start, const PedParams& p) {
    if (samples.distances.empty()) throw Error("density_bins: no samples");
    const double span = span_quantile(samples.distances) - start;
    return std::clamp(static_cast<int>(std::floor(span / (2.1 * p.radius))), 4, 20);
}

double density_l1_error(const DensitySamples& samples, const DensityLine& line, int bins) {
    const auto& d = samples.distances;
    if (d.empty() || samples.snapshots < 1) throw Error("density_l1_error: no samples");
    const double hi = span_quantile(d);
    const Histogram h = histogram(d, line.start, hi, bins, 1.0 / samples.snapshots);
    double total = 0.0, model = 0.0;
    std::vector<double> fit(static_cast<std::size_t>(bins));
    for (int k = 0; k < bins; ++k) {
        const auto i = static_cast<std::size_t>(k);
        fit[i] = std::max(line.at(h.centres[i]), 0.0);
        total += h.density[i];
        model += fit[i];
    }
    if (!(total > 0.0) || !(model > 0.0)) return 1.0;
    double err = 0.0;
    for (std::size_t i = 0; i < fit.size(); ++i)
        err += std::abs(h.density[i] / total - fit[i] / model);
    return err;
}

std::vector<double> queue_distances(const MicroState& u, const PedParams& p, int crowd) {
    std::vector<double> out;
    const Eigen::Index half = p.n_per_crowd;
    for (Eigen::Index i = crowd * half; i < (crowd + 1) * half; ++i) {
        const double d = -p.direction(i) * wrap(u(i), p.length);
        if (d > 0.0) out.push_back(d);
    }
    return out;
}

MicroState lift_linear(const MacroState& x, const DensityLine& red, const DensityLine& blue,
                       const PedParams& p, const LiftOptions& opts) {
    if (x.size() != 2) throw LiftingDomainError(0, "lift_linear expects (m, m')");
    if (x(1) != 0.0) throw LiftingDomainError(1, "lift_linear only covers the m' = 0 slice");
    p.validate();
    const Eigen::Index n = p.count();
    const int half = p.n_per_crowd;
    const int lanes = lane_count(p);
    std::mt19937 rng(opts.seed);
    std::uniform_real_distribution<double> jitter(-opts.jitter, opts.jitter);

    MicroState u = MicroState::Zero(4 * n);
    std::vector<double> dr(static_cast<std::size_t>(half)), db(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k) {
        const double q = (k + 0.5) / half;
        dr[static_cast<std::size_t>(k)] = red.quantile(q, half);
        db[static_cast<std::size_t>(k)] = blue.quantile(q, half);
        // Shared lateral positions keep mirror images of equal crowds exact.
        const double y = lane_y(k % lanes, lanes, p) + jitter(rng);
        u(n + k) = y;
        u(n + half + k) = y;
    }
    const double seam = 0.5 * p.length - p.radius;
    auto place = [&](double shift_red, double shift_blue) {
        for (int k = 0; k < half; ++k) {
            u(k) = dr[static_cast<std::size_t>(k)] + shift_red;
            u(half + k) = -(db[static_cast<std::size_t>(k)] + shift_blue);
        }
    };
    const double reach_red = dr.back();
    const double reach_blue = db.back();
    if (reach_red > seam || reach_blue > seam)
        throw LiftingDomainError(half - 1, "crowd does not fit into half of the corridor");

    place(0.0, 0.0);
    const double target = x(0);
    const double m0 = restrict_m(u, p)(0);
    if (std::abs(m0 - target) <= opts.tol) return u;

    // Retreat red (raises m) or blue (lowers m).
    const bool move_red = target > m0;
    const double room = seam - (move_red ? reach_red : reach_blue);
    auto f = [&](double delta) {
        if (move_red)
            place(delta, 0.0);
        else
            place(0.0, delta);
        return restrict_m(u, p)(0) - target;
    };
    double lo = 0.0, flo = m0 - target;
    double hi = std::min(room, std::max(2.0 * std::abs(target - m0), 0.1));
    double fhi = f(hi);
    while (flo * fhi > 0.0) {
        if (hi >= room)
            throw LiftingDomainError(move_red ? 0 : half,
                                     "target m needs a shift beyond the ring seam");
        lo = hi;
        flo = fhi;
        hi = std::min(room, 2.0 * hi);
        fhi = f(hi);
    }
    // Secant steps kept inside the bracket (Illinois variant).
    int side = 0;
    double mid = hi;
    for (int it = 0; it < 200; ++it) {
        mid = (lo * fhi - hi * flo) / (fhi - flo);
        const double fm = f(mid);
        if (std::abs(fm) <= opts.tol) return u;
        if (fm * fhi > 0.0) {
            hi = mid;
            fhi = fm;
            if (side == -1) flo *= 0.5;
            side = -1;
        } else {
            lo = mid;
            flo = fm;
            if (side == 1) fhi *= 0.5;
            side = 1;
        }
    }
    throw LiftingDomainError(0, "lift_linear: shift solve did not converge");
}

MicroState mirror(const MicroState& u, const PedParams& p) {
    const Eigen::Index n = p.count();
    const Eigen::Index half = p.n_per_crowd;
    MicroState v(u.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = i < half ? i + half : i - half;
        v(j) = wrap(-u(i), p.length);
        v(n + j) = u(n + i);
        v(2 * n + j) = -u(2 * n + i);
        v(3 * n + j) = u(3 * n + i);
    }
    return v;
}

CoarseModel make_coarse_model(const PedParams& p, const DensityLine& red, const DensityLine& blue,
                              const LiftOptions& opts) {
    CoarseModel m;
    m.system = make_system(p);
    m.ops.macro_dim = 2;
    m.ops.micro_dim = m.system.dim;
    m.ops.lift = [p, red, blue, opts](const MacroState& x) {
        return lift_linear(x, red, blue, p, opts);
    };
    m.ops.restrict = [p](const MicroState& u) { return restrict_m(u, p); };
    return m;
}

std::pair<DensitySamples, DensitySamples> sample_queues(const PedParams& p, double duration,
                                                        double m_start, double dt,
                                                        const LiftOptions& opts) {
    const DensityLine packed = packed_density(p);
    const MicroSystem sys = make_system(p);
    const MicroState u = lift_linear(MacroState{{m_start, 0.0}}, packed, packed, p, opts);
    std::pair<DensitySamples, DensitySamples> out;
    integrate(sys, u, duration, dt, [&](double t, const MicroState& s) {
        const double k = std::round(t);
        if (t < 0.5 * duration || std::abs(t - k) > 0.5 * dt) return;
        for (int c = 0; c < 2; ++c) {
            DensitySamples& ds = c == 0 ? out.first : out.second;
            const auto d = queue_distances(s, p, c);
            ds.distances.insert(ds.distances.end(), d.begin(), d.end());
            ++ds.snapshots;
        }
    });
    if (out.first.snapshots == 0) throw Error("sample_queues: duration too short to sample");
    return out;
}

std::pair<DensityLine, DensityLine> fit_densities(const PedParams& p, double duration,
                                                  double m_start, double dt,
                                                  const LiftOptions& opts) {
    const auto [red, blue] = sample_queues(p, duration, m_start, dt, opts);
    const double start = packed_density(p).start;
    return {fit_density(red, start, p.n_per_crowd, density_bins(red, start, p)),
            fit_density(blue, start, p.n_per_crowd, density_bins(blue, start, p))};
}

namespace {

struct Sample {
    double t;
    double m;
    double md;
    MicroState u;
};

}  // namespace

PoincareResult poincare_map_from(const CoarseModel& model, const EqFreeConfig& cfg,
                                 const MicroState& u0, const PoincareOptions& opts) {
    if (!(opts.sample_dt > 0.0) || !(opts.t_cap > 0.0)) throw ConfigError("poincare: bad options");
    const auto& sys = model.system;
    const auto restrict = [&](const MicroState& u) { return model.ops.restrict(u); };

    Sample prev{0.0, 0.0, 0.0, u0};
    {
        const MacroState r = restrict(u0);
        prev.m = r(0);
        prev.md = r(1);
    }
    double lowest = prev.m;        // minimum of m since the last counted crossing
    double cycle_min = prev.m;
    int counted = 0;
    PoincareResult res;
    const long steps = static_cast<long>(std::ceil(opts.t_cap / opts.sample_dt));
    for (long k = 1; k <= steps; ++k) {
        Sample cur;
        cur.t = k * opts.sample_dt;
        cur.u = integrate(sys, prev.u, opts.sample_dt, cfg.micro_dt);
        const MacroState r = restrict(cur.u);
        cur.m = r(0);
        cur.md = r(1);
        if (prev.md > 0.0 && cur.md <= 0.0) {
            // Bracketed maximum: bisect on m' over the partial step.
            double a = 0.0, b = opts.sample_dt;
            MicroState ub = cur.u;
            double mb = cur.m;
            while (b - a > opts.time_tol) {
                const double c = 0.5 * (a + b);
                MicroState uc = integrate(sys, prev.u, c, cfg.micro_dt);
                const MacroState rc = restrict(uc);
                if (rc(1) > 0.0) {
                    a = c;
                } else {
                    b = c;
                    ub = std::move(uc);
                    mb = rc(0);
                }
            }
            if (mb - lowest >= opts.hysteresis) {
                ++counted;
                if (counted == 1) {
                    res.first_crossing = prev.t + b;
                } else {
                    res.crossing_time = prev.t + b;
                    res.x_next = MacroState{{mb, 0.0}};
                    res.amplitude = 0.5 * (mb - cycle_min);
                    res.u_next = std::move(ub);
                    return res;
                }
                lowest = cur.m;
                cycle_min = cur.m;
            }
        }
        lowest = std::min(lowest, cur.m);
        cycle_min = std::min(cycle_min, cur.m);
        prev = std::move(cur);
    }
    res.blocked = true;
    res.x_next = restrict(prev.u);
    res.u_next = std::move(prev.u);
    res.crossing_time = opts.t_cap;
    res.amplitude = 0.0;
    return res;
}

PoincareResult poincare_map(const CoarseModel& model, const EqFreeConfig& cfg,
                            const MacroState& x0, const PoincareOptions& opts) {
    return poincare_map_from(model, cfg, model.ops.lift(x0), opts);
}

PoincareResult iterate_map(const CoarseModel& model, const EqFreeConfig& cfg, const MacroState& x0,
                           const PoincareOptions& opts, int iterations) {
    PoincareResult r = poincare_map(model, cfg, x0, opts);
    for (int k = 1; k < iterations && !r.blocked; ++k) r = poincare_map(model, cfg, r.x_next, opts);
    return r;
}

AmplitudeProbe::AmplitudeProbe(PedParams base, AmplitudeSettings settings)
    : base_(base), settings_(settings) {
    base_.validate();
}

PedParams AmplitudeProbe::params(const ParameterSet& overrides) const {
    ParameterSet ps = base_.to_parameter_set();
    for (const auto& [k, v] : overrides.values()) ps.set(k, v);
    return PedParams::from(ps);
}

std::pair<DensityLine, DensityLine> AmplitudeProbe::densities(const PedParams& p) {
    if (!settings_.fitted_density) return {packed_density(p), packed_density(p)};
    const bool near = cached_ && std::abs(p.w - cache_params_.w) <= settings_.refit_distance &&
                      std::abs(p.r_v0 - cache_params_.r_v0) <= settings_.refit_distance;
    if (!near) {
        cache_ = fit_densities(p, settings_.fit_time, 0.0, settings_.micro_dt, settings_.lift);
        cache_params_ = p;
        cached_ = true;
    }
    return cache_;
}

CoarseModel AmplitudeProbe::model(const PedParams& p) {
    const auto [red, blue] = densities(p);
    return make_coarse_model(p, red, blue, settings_.lift);
}

PoincareResult AmplitudeProbe::probe(const ParameterSet& overrides) {
    const PedParams p = params(overrides);
    EqFreeConfig cfg;
    cfg.micro_dt = settings_.micro_dt;
    const CoarseModel m = model(p);
    const int n = std::max(settings_.iterations, 1);
    const int keep = std::clamp(settings_.average, 1, n);
    PoincareResult r = poincare_map(m, cfg, MacroState{{settings_.m_start, 0.0}}, settings_.map);
    double sum = 0.0;
    for (int k = 1; !r.blocked; ++k) {
        if (k > n - keep) sum += r.amplitude;
        if (k == n) break;
        r = poincare_map_from(m, cfg, r.u_next, settings_.map);
    }
    r.amplitude = r.blocked ? 0.0 : sum / keep;
    return r;
}

void write_snapshot(std::ostream& os, const MicroState& u, const PedParams& p, double t) {
    const Eigen::Index n = p.count();
    const std::streamsize prec = os.precision(12);
    os << "# pedestrian snapshot t=" << t;
    const ParameterSet ps = p.to_parameter_set();
    for (const auto& [k, v] : ps.values()) os << ' ' << k << '=' << v;
    os << "\n# crowd,id,x,y,vx,vy\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool red = i < p.n_per_crowd;
        os << (red ? "red" : "blue") << ',' << (red ? i : i - p.n_per_crowd) << ','
           << wrap(u(i), p.length) << ',' << u(n + i) << ',' << u(2 * n + i) << ','
           << u(3 * n + i) << '\n';
    }
    os.precision(prec);
}

}  // namespace eqf::ped
