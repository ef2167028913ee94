#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "eqf/eqfree.hpp"
#include "eqf/micro_sim.hpp"

/// Experiment configuration: INI-style "key = value" lines grouped under
/// "[section]" headers, '#' or ';' comments. Every key must be known;
/// duplicates and type mismatches are errors carrying line numbers.
namespace eqf::io {

enum class ValueType { Real, Integer, Boolean, String, RealList };

class ExperimentConfig {
public:
    static ExperimentConfig parse(std::istream& in);
    static ExperimentConfig parse_string(const std::string& text);
    static ExperimentConfig load(const std::string& path);

    /// Canonical text: sections in a fixed order, keys sorted, numbers in
    /// shortest round-trip form, comments dropped.
    std::string serialize() const;

    bool has(const std::string& section, const std::string& key) const;
    double real(const std::string& section, const std::string& key, double fallback) const;
    double real(const std::string& section, const std::string& key) const;
    long integer(const std::string& section, const std::string& key, long fallback) const;
    bool boolean(const std::string& section, const std::string& key, bool fallback) const;
    std::string string(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    std::string string(const std::string& section, const std::string& key) const;
    std::vector<double> reals(const std::string& section, const std::string& key) const;

    /// Sets (or replaces) a value, validating it as if it came from a file.
    void set(const std::string& section, const std::string& key, const std::string& value);

    std::string model() const { return string("experiment", "model"); }
    std::string task() const { return string("experiment", "task"); }

    /// [parameters] section as named reals.
    ParameterSet parameters() const;
    /// [eqfree] values over `defaults`.
    EqFreeConfig eqfree(EqFreeConfig defaults) const;

    /// Checks required keys and model-specific parameter names.
    void validate() const;

    bool operator==(const ExperimentConfig&) const = default;

private:
    struct Entry {
        std::string value;   ///< canonical text
        int line = 0;
        bool operator==(const Entry& o) const { return value == o.value; }
    };
    void put(const std::string& section, const std::string& key, const std::string& raw, int line);
    const Entry* find(const std::string& section, const std::string& key) const;

    std::map<std::string, std::map<std::string, Entry>> data_;
};

/// Known sections in canonical order.
const std::vector<std::string>& known_sections();
/// Type of a key in a section other than [parameters]; throws ConfigError for unknown keys.
ValueType key_type(const std::string& section, const std::string& key);
/// Names accepted in [parameters] for a model (and test system, if any).
std::vector<std::string> model_parameter_names(const std::string& model, const std::string& system);

/// Shortest decimal text that reads back to the same double.
std::string format_real(double v);
/// 12 significant digits, the CSV number format.
std::string format_csv(double v);

}  // namespace eqf::io
