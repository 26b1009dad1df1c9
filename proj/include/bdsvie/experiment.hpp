#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "bdsvie/corpus.hpp"
#include "bdsvie/regression.hpp"

namespace bdsvie {

/// Exit codes of `bdsvie run`.
enum ExitCode : int {
    exit_ok = 0,
    exit_other = 1,
    exit_acceptance = 2,
    exit_config = 3,
    exit_non_convergence = 4,
};

struct ExperimentConfig {
    std::string kind;
    std::string problem;
    double T = 1.0;
    std::size_t N = 32;
    std::size_t M = 20000;
    std::uint64_t seed = 1;
    std::size_t d = 1, l = 1;
    RegressionBasis basis;
    Params params;  // defaults merged with overrides
    RunSettings settings;
    std::string output;  // may be empty when --out is given
    bool dump_field = false;
    std::optional<std::size_t> memory_cap_bytes;
};

/// Strict parse: unknown keys, wrong types, and out-of-range values are config errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

struct RunRequest {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed_override;
};

struct ExperimentResult {
    int exit_code = exit_ok;
    nlohmann::json summary;
    std::string out_dir;
};

/// Runs the experiment and writes summary.json, series.csv and the optional field dump.
/// Solver errors propagate as exceptions.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunRequest& request = {});

/// Full `run` command: load, run, map errors to exit codes and structured JSON on `err`.
int run_command(const std::string& config_path, const RunRequest& request, std::ostream& err);

/// Maps an exception code to the CLI exit code.
int exit_code_for(ErrorCode code);

/// Copy of the summary with every `wallclock_seconds` field removed.
nlohmann::json strip_wallclock(const nlohmann::json& summary);

}  // namespace bdsvie
