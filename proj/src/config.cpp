#include "eqf/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "eqf/errors.hpp"
#include "eqf/pedestrian_sf.hpp"
#include "eqf/testsystems.hpp"

namespace eqf::io {
namespace {

using Schema = std::vector<std::pair<std::string, ValueType>>;

const std::vector<std::pair<std::string, Schema>>& schema() {
    using V = ValueType;
    static const std::vector<std::pair<std::string, Schema>> s = {
        {"experiment",
         {{"model", V::String}, {"task", V::String}, {"system", V::String}, {"seed", V::Integer},
          {"output", V::String}}},
        {"parameters", {}},
        {"eqfree",
         {{"t_skip", V::Real}, {"t0", V::Real}, {"delta", V::Real}, {"micro_dt", V::Real},
          {"fd_rel", V::Real}, {"fd_abs", V::Real}, {"newton_tol", V::Real},
          {"newton_max_iter", V::Integer}}},
        {"continuation",
         {{"param", V::String}, {"p_start", V::Real}, {"x_start", V::RealList}, {"step", V::Real},
          {"n_points", V::Integer}, {"p_min", V::Real}, {"p_max", V::Real},
          {"x_min", V::Real}, {"x_max", V::Real}, {"max_halvings", V::Integer},
          {"stability_band", V::Real}, {"param_weight", V::Real}}},
        {"two_param",
         {{"param2", V::String}, {"step", V::Real}, {"n_points", V::Integer},
          {"p2_min", V::Real}, {"p2_max", V::Real}, {"tol", V::Real},
          {"max_halvings", V::Integer}, {"search_width", V::Real}, {"outer_fd_rel", V::Real},
          {"outer_fd_abs", V::Real}, {"both_directions", V::Boolean}}},
        {"simulate", {{"t_end", V::Real}, {"sample_dt", V::Real}, {"x0", V::RealList}}},
        {"projective",
         {{"dt_macro", V::Real}, {"n_steps", V::Integer}, {"x0", V::RealList}}},
        {"equilibrium", {{"x_guess", V::RealList}}},
        {"healing",
         {{"x0", V::RealList}, {"horizon", V::Real}, {"sample_dt", V::Real},
          {"perturbation", V::Real}}},
        {"traffic",
         {{"reference", V::String}, {"reference_file", V::String}, {"reference_v0", V::Real},
          {"reference_time", V::Real}, {"refresh", V::Boolean}}},
        {"pedestrian",
         {{"t_cap", V::Real}, {"sample_dt", V::Real}, {"hysteresis", V::Real},
          {"amplitude_threshold", V::Real}, {"map_iterations", V::Integer},
          {"map_average", V::Integer},
          {"m_start", V::Real}, {"density", V::String}, {"fit_time", V::Real},
          {"refit_distance", V::Real}, {"snapshot", V::Boolean}}},
    };
    return s;
}

const std::array<const char*, 3> kModels{"traffic", "pedestrian", "testsystem"};
const std::array<const char*, 7> kTasks{"simulate", "equilibrium", "branch", "fold2par",
                                        "hopf2par", "healing-diagnostic", "projective"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string where(int line) { return line > 0 ? "line " + std::to_string(line) + ": " : ""; }

double parse_real(const std::string& text, const std::string& key, int line) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ConfigError(where(line) + "key '" + key + "' expects a real number, got '" + text + "'",
                          line);
    if (!std::isfinite(v))
        throw ConfigError(where(line) + "key '" + key + "' must be finite", line);
    return v;
}

long parse_integer(const std::string& text, const std::string& key, int line) {
    long v = 0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (!text.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ConfigError(where(line) + "key '" + key + "' expects an integer, got '" + text + "'",
                          line);
    return v;
}

bool parse_boolean(const std::string& text, const std::string& key, int line) {
    std::string t = text;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
    if (t == "false" || t == "no" || t == "off" || t == "0") return false;
    throw ConfigError(where(line) + "key '" + key + "' expects true or false, got '" + text + "'",
                      line);
}

std::vector<double> parse_list(const std::string& text, const std::string& key, int line) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_real(trim(item), key, line));
    if (out.empty())
        throw ConfigError(where(line) + "key '" + key + "' expects a list of reals", line);
    return out;
}

std::string canonical(ValueType t, const std::string& raw, const std::string& key, int line) {
    switch (t) {
        case ValueType::Real: return format_real(parse_real(raw, key, line));
        case ValueType::Integer: return std::to_string(parse_integer(raw, key, line));
        case ValueType::Boolean: return parse_boolean(raw, key, line) ? "true" : "false";
        case ValueType::String:
            if (raw.empty())
                throw ConfigError(where(line) + "key '" + key + "' must not be empty", line);
            return raw;
        case ValueType::RealList: {
            std::string out;
            for (double v : parse_list(raw, key, line)) {
                if (!out.empty()) out += ", ";
                out += format_real(v);
            }
            return out;
        }
    }
    return raw;
}

bool known_section(const std::string& s) {
    for (const auto& [name, keys] : schema())
        if (name == s) return true;
    return false;
}

}  // namespace

std::string format_real(double v) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::string format_csv(double v) {
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%.12g", v);
    return buf.data();
}

const std::vector<std::string>& known_sections() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, keys] : schema()) n.push_back(name);
        return n;
    }();
    return names;
}

ValueType key_type(const std::string& section, const std::string& key) {
    if (section == "parameters") return ValueType::Real;
    for (const auto& [name, keys] : schema()) {
        if (name != section) continue;
        for (const auto& [k, t] : keys)
            if (k == key) return t;
        throw ConfigError("unknown key '" + key + "' in [" + section + "]");
    }
    throw ConfigError("unknown section [" + section + "]");
}

std::vector<std::string> model_parameter_names(const std::string& model, const std::string& system) {
    if (model == "traffic") return {"tau", "v0", "h", "N", "L", "mu"};
    if (model == "pedestrian") return ped::parameter_names();
    if (model == "testsystem") return testsys::parameter_names(system);
    throw ConfigError("unknown model '" + model + "'");
}

void ExperimentConfig::put(const std::string& section, const std::string& key,
                           const std::string& raw, int line) {
    ValueType t;
    try {
        t = key_type(section, key);
    } catch (const ConfigError& e) {
        throw ConfigError(where(line) + e.what(), line);
    }
    auto& sec = data_[section];
    if (line > 0) {
        const auto it = sec.find(key);
        if (it != sec.end())
            throw ConfigError("duplicate key '" + key + "' in [" + section + "] at lines " +
                                  std::to_string(it->second.line) + " and " + std::to_string(line),
                              line);
    }
    sec[key] = Entry{canonical(t, raw, key, line), line};
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
    ExperimentConfig cfg;
    std::string section;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        // Inline comments need a preceding blank so values like paths may hold '#'.
        for (std::size_t i = 1; i < s.size(); ++i) {
            if ((s[i] == '#' || s[i] == ';') && (s[i - 1] == ' ' || s[i - 1] == '\t')) {
                s = trim(s.substr(0, i));
                break;
            }
        }
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError(where(line) + "malformed section header '" + s + "'", line);
            section = trim(s.substr(1, s.size() - 2));
            if (!known_section(section))
                throw ConfigError(where(line) + "unknown section [" + section + "]", line);
            cfg.data_[section];
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where(line) + "expected 'key = value', got '" + s + "'", line);
        if (section.empty())
            throw ConfigError(where(line) + "key outside of any section", line);
        const std::string key = trim(s.substr(0, eq));
        if (key.empty()) throw ConfigError(where(line) + "empty key", line);
        cfg.put(section, key, trim(s.substr(eq + 1)), line);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    return parse(f);
}

void ExperimentConfig::validate() const {
    const Entry* m = find("experiment", "model");
    if (!m) throw ConfigError("missing required key 'model' in [experiment]");
    const Entry* t = find("experiment", "task");
    if (!t) throw ConfigError("missing required key 'task' in [experiment]");
    if (std::find(kModels.begin(), kModels.end(), m->value) == kModels.end())
        throw ConfigError(where(m->line) + "unknown model '" + m->value +
                              "' (traffic, pedestrian, testsystem)",
                          m->line);
    if (std::find(kTasks.begin(), kTasks.end(), t->value) == kTasks.end())
        throw ConfigError(where(t->line) + "unknown task '" + t->value + "'", t->line);
    std::string system;
    if (m->value == "testsystem") {
        const Entry* s = find("experiment", "system");
        if (!s) throw ConfigError("missing required key 'system' in [experiment]");
        system = s->value;
        try {
            testsys::parameter_names(system);
        } catch (const Error& e) {
            throw ConfigError(where(s->line) + e.what(), s->line);
        }
    }
    const auto names = model_parameter_names(m->value, system);
    const auto it = data_.find("parameters");
    if (it != data_.end()) {
        for (const auto& [key, e] : it->second)
            if (std::find(names.begin(), names.end(), key) == names.end())
                throw ConfigError(where(e.line) + "unknown parameter '" + key + "' for model " +
                                      m->value,
                                  e.line);
    }
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& section : known_sections()) {
        const auto it = data_.find(section);
        if (it == data_.end() || it->second.empty()) continue;
        if (!first) os << '\n';
        first = false;
        os << '[' << section << "]\n";
        for (const auto& [key, e] : it->second) os << key << " = " << e.value << '\n';
    }
    return os.str();
}

const ExperimentConfig::Entry* ExperimentConfig::find(const std::string& section,
                                                      const std::string& key) const {
    const auto s = data_.find(section);
    if (s == data_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
}

bool ExperimentConfig::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

double ExperimentConfig::real(const std::string& section, const std::string& key,
                              double fallback) const {
    const Entry* e = find(section, key);
    return e ? parse_real(e->value, key, e->line) : fallback;
}

double ExperimentConfig::real(const std::string& section, const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) throw ConfigError("missing required key '" + key + "' in [" + section + "]");
    return parse_real(e->value, key, e->line);
}

long ExperimentConfig::integer(const std::string& section, const std::string& key,
                               long fallback) const {
    const Entry* e = find(section, key);
    return e ? parse_integer(e->value, key, e->line) : fallback;
}

bool ExperimentConfig::boolean(const std::string& section, const std::string& key,
                               bool fallback) const {
    const Entry* e = find(section, key);
    return e ? parse_boolean(e->value, key, e->line) : fallback;
}

std::string ExperimentConfig::string(const std::string& section, const std::string& key,
                                     const std::string& fallback) const {
    const Entry* e = find(section, key);
    return e ? e->value : fallback;
}

std::string ExperimentConfig::string(const std::string& section, const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) throw ConfigError("missing required key '" + key + "' in [" + section + "]");
    return e->value;
}

std::vector<double> ExperimentConfig::reals(const std::string& section,
                                            const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) return {};
    return parse_list(e->value, key, e->line);
}

void ExperimentConfig::set(const std::string& section, const std::string& key,
                           const std::string& value) {
    if (!known_section(section)) throw ConfigError("unknown section [" + section + "]");
    put(section, key, trim(value), 0);
}

ParameterSet ExperimentConfig::parameters() const {
    ParameterSet p;
    const auto it = data_.find("parameters");
    if (it == data_.end()) return p;
    for (const auto& [key, e] : it->second) p.set(key, parse_real(e.value, key, e.line));
    return p;
}

EqFreeConfig ExperimentConfig::eqfree(EqFreeConfig c) const {
    c.t_skip = real("eqfree", "t_skip", c.t_skip);
    c.t0 = real("eqfree", "t0", c.t0);
    c.delta = real("eqfree", "delta", c.delta);
    c.micro_dt = real("eqfree", "micro_dt", c.micro_dt);
    c.fd.rel = real("eqfree", "fd_rel", c.fd.rel);
    c.fd.abs_floor = real("eqfree", "fd_abs", c.fd.abs_floor);
    c.newton_tol = real("eqfree", "newton_tol", c.newton_tol);
    c.newton_max_iter = static_cast<int>(integer("eqfree", "newton_max_iter", c.newton_max_iter));
    return c;
}

}  // namespace eqf::io
