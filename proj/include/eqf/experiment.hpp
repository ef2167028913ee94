#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eqf/config.hpp"

/// Runs one configured task and writes its CSV output.
namespace eqf::io {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitSolver = 3,
    kExitDomain = 4,
};

struct RunOptions {
    std::string out_dir = ".";
    std::optional<long> seed;   ///< overrides [experiment] seed
    int threads = 1;            ///< not recorded in output headers
};

struct RunResult {
    int exit_code = kExitOk;
    std::vector<std::string> files;
    std::string error;   ///< machine-readable error line, empty on success
};

/// Executes the task. Errors are caught and mapped to exit codes; the error
/// line has the form `error: code=<n> kind=<kind> task=<task> message="..."`.
RunResult run(ExperimentConfig cfg, const RunOptions& opts, std::ostream& log);

/// Header lines embedding the canonical config, each prefixed with "# ".
std::string config_header(const ExperimentConfig& cfg);
/// Reads the config back from the header of an output file.
ExperimentConfig config_from_output(std::istream& in);

}  // namespace eqf::io
