#include "eqf/testsystems.hpp"

#include "eqf/errors.hpp"

namespace eqf::testsys {

namespace {

OperatorPair identity_ops(Eigen::Index n) {
    OperatorPair ops;
    ops.lift = [](const MacroState& x) { return MicroState(x); };
    ops.restrict = [](const MicroState& u) { return MacroState(u); };
    ops.macro_dim = n;
    ops.micro_dim = n;
    return ops;
}

CoarseModel scalar_model(std::function<double(double)> f) {
    CoarseModel m;
    m.system.dim = 1;
    m.system.rhs = [f = std::move(f)](const MicroState& u, MicroState& du) { du(0) = f(u(0)); };
    m.ops = identity_ops(1);
    return m;
}

}  // namespace

ModelFamily quadratic_fold() {
    ModelFamily fam;
    fam.instantiate = [](const ParameterSet& ps) {
        const double p = ps.get("p");
        const double c = ps.get_or("c", 0.0);
        return scalar_model([p, c](double x) { return p - x * x + c; });
    };
    return fam;
}

ModelFamily pitchfork() {
    ModelFamily fam;
    fam.instantiate = [](const ParameterSet& ps) {
        const double p = ps.get("p");
        return scalar_model([p](double x) { return p * x - x * x * x; });
    };
    return fam;
}

ModelFamily linear() {
    ModelFamily fam;
    fam.instantiate = [](const ParameterSet& ps) {
        const double p = ps.get_or("p", 0.0);
        return scalar_model([p](double x) { return p - x; });
    };
    return fam;
}

ModelFamily slow_fast() {
    ModelFamily fam;
    fam.instantiate = [](const ParameterSet& ps) {
        const double ks = ps.get_or("k_slow", 1.0);
        const double kf = ps.get_or("k_fast", 100.0);
        const double c = ps.get_or("c", 0.0);
        CoarseModel m;
        m.system.dim = 2;
        m.system.rhs = [ks, kf, c](const MicroState& u, MicroState& du) {
            du(0) = -ks * u(0);
            du(1) = -kf * (u(1) - c * u(0));
        };
        m.ops.lift = [](const MacroState& x) {
            MicroState u(2);
            u << x(0), 0.0;
            return u;
        };
        m.ops.restrict = [](const MicroState& u) {
            MacroState x(1);
            x(0) = u(0) + u(1);
            return x;
        };
        m.ops.macro_dim = 1;
        m.ops.micro_dim = 2;
        return m;
    };
    return fam;
}

ModelFamily hopf_normal_form() {
    ModelFamily fam;
    fam.instantiate = [](const ParameterSet& ps) {
        const double mu = ps.get("p1") - ps.get("p2");
        const double om = ps.get_or("omega", 1.0);
        CoarseModel m;
        m.system.dim = 2;
        m.system.rhs = [mu, om](const MicroState& u, MicroState& du) {
            const double r2 = u(0) * u(0) + u(1) * u(1);
            du(0) = mu * u(0) - om * u(1) - u(0) * r2;
            du(1) = om * u(0) + mu * u(1) - u(1) * r2;
        };
        m.ops = identity_ops(2);
        return m;
    };
    return fam;
}

ModelFamily by_name(const std::string& name) {
    if (name == "fold" || name == "quadratic") return quadratic_fold();
    if (name == "pitchfork") return pitchfork();
    if (name == "linear") return linear();
    if (name == "slowfast") return slow_fast();
    if (name == "hopf") return hopf_normal_form();
    throw ConfigError("unknown test system '" + name + "'");
}

std::vector<std::string> parameter_names(const std::string& name) {
    if (name == "fold" || name == "quadratic") return {"p", "c"};
    if (name == "pitchfork" || name == "linear") return {"p"};
    if (name == "slowfast") return {"k_slow", "k_fast", "c"};
    if (name == "hopf") return {"p1", "p2", "omega"};
    throw ConfigError("unknown test system '" + name + "'");
}

}  // namespace eqf::testsys
