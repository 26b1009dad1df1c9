#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdsvie/bdsvie.hpp"

namespace bdsvie {

/// One acceptance comparison: `value relation bound`.
struct Check {
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    std::string relation = "<=";  // "<=" or ">="
    bool passed = false;
};

Check make_check(std::string name, double value, std::string relation, double bound);

struct SeriesRow {
    double t = 0.0;
    double mean = 0.0;
    double std_error = 0.0;
    std::optional<double> analytic;
};

struct RunSettings {
    double picard_tol = 1e-10;
    std::size_t max_iter = 60;
};

struct CorpusOutput {
    nlohmann::json report = nlohmann::json::object();
    std::vector<SeriesRow> series;
    std::vector<Check> checks;
    std::optional<TwoParameterField> field;  // optional binary dump

    bool passed() const;
};

using Params = std::map<std::string, double>;

struct CorpusEntry {
    std::string name;
    std::string kind;    // experiment kind this problem runs under
    std::string anchor;  // what the problem exercises
    std::string oracle;  // reference solution used by the checks
    Params defaults;     // overridable parameters
    std::function<CorpusOutput(const Projector&, const Params&, const RunSettings&)> run;
};

const std::vector<CorpusEntry>& corpus();
/// nullptr when the name is not registered.
const CorpusEntry* find_problem(const std::string& name);

/// Human-readable listing, one problem per line.
std::string list_corpus_text(const std::vector<CorpusEntry>& entries);
nlohmann::json list_corpus_json(const std::vector<CorpusEntry>& entries);

/// Ensemble mean and standard error of one node.
SeriesRow node_summary(const DiagonalProcess& Y, std::size_t node, double t, std::optional<double> analytic = {});

}  // namespace bdsvie
