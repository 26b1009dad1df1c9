#include "bdsvie/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "bdsvie/grid.hpp"

namespace bdsvie {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "bdsvie-summary/1";

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorCode::config, msg); }

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) config_error(where + " must be an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) config_error("unknown key '" + key + "' in " + where);
}

double number(const json& obj, const std::string& key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_number()) config_error(where + "." + key + " must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) config_error(where + "." + key + " must be finite");
    return x;
}

std::uint64_t integer(const json& obj, const std::string& key, const std::string& where, std::uint64_t lo,
                      std::uint64_t hi) {
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        config_error(where + "." + key + " must be a non-negative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < lo || x > hi)
        config_error(where + "." + key + " = " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(hi) + "]");
    return x;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    std::ostringstream o;
    o << std::setprecision(17) << v;
    return o.str();
}

void write_series(const std::vector<SeriesRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::resource, "cannot write " + path);
    out << "t,mean,stderr,analytic,abs_err\n";
    for (const auto& r : rows) {
        out << format_double(r.t) << ',' << format_double(r.mean) << ',' << format_double(r.std_error) << ',';
        if (r.analytic) out << format_double(*r.analytic) << ',' << format_double(std::abs(r.mean - *r.analytic));
        else out << ',';
        out << '\n';
    }
}

json basis_json(const RegressionBasis& b) {
    json features = json::array();
    for (const auto& f : b.features) features.push_back(f.name);
    return {{"kind", b.kind == BasisKind::polynomial ? "polynomial" : "piecewise_constant"},
            {"degree", b.degree},
            {"ridge", b.ridge},
            {"features", features}};
}

}  // namespace

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::config: return exit_config;
        case ErrorCode::non_convergence: return exit_non_convergence;
        default: return exit_other;
    }
}

ExperimentConfig parse_config(const json& j) {
    reject_unknown(j, {"kind", "problem", "grid", "batch", "basis", "params", "tolerances", "output", "dump_field",
                       "memory_cap_bytes"},
                   "config");
    ExperimentConfig c;
    if (!j.contains("kind") || !j["kind"].is_string()) config_error("config.kind must be a string");
    if (!j.contains("problem") || !j["problem"].is_string()) config_error("config.problem must be a string");
    c.kind = j["kind"].get<std::string>();
    c.problem = j["problem"].get<std::string>();
    static const std::set<std::string> kinds{"simple",     "picard",  "fdsvie",  "compare",
                                             "continuous", "duality", "control", "fbdsvie"};
    if (!kinds.count(c.kind)) config_error("unknown experiment kind '" + c.kind + "'");
    const CorpusEntry* entry = find_problem(c.problem);
    if (!entry) config_error("unknown corpus problem '" + c.problem + "' (see `bdsvie list`)");
    if (entry->kind != c.kind)
        config_error("problem '" + c.problem + "' runs under kind '" + entry->kind + "', not '" + c.kind + "'");

    if (j.contains("grid")) {
        const json& g = j["grid"];
        reject_unknown(g, {"T", "N"}, "grid");
        if (g.contains("T")) c.T = number(g, "T", "grid");
        if (g.contains("N")) c.N = integer(g, "N", "grid", 1, 4096);
    }
    if (!(c.T > 0.0 && c.T <= 100.0)) config_error("grid.T must lie in (0, 100]");

    if (j.contains("batch")) {
        const json& b = j["batch"];
        reject_unknown(b, {"M", "seed", "d", "l"}, "batch");
        if (b.contains("M")) c.M = integer(b, "M", "batch", 2, 50'000'000);
        if (b.contains("seed")) c.seed = integer(b, "seed", "batch", 0, std::numeric_limits<std::uint64_t>::max());
        if (b.contains("d")) c.d = integer(b, "d", "batch", 1, 1);
        if (b.contains("l")) c.l = integer(b, "l", "batch", 1, 1);
    }

    if (j.contains("basis")) {
        const json& b = j["basis"];
        reject_unknown(b, {"kind", "degree", "ridge"}, "basis");
        if (b.contains("kind")) {
            if (!b["kind"].is_string()) config_error("basis.kind must be a string");
            const auto k = b["kind"].get<std::string>();
            if (k == "polynomial") c.basis.kind = BasisKind::polynomial;
            else if (k == "piecewise_constant") c.basis.kind = BasisKind::piecewise_constant;
            else config_error("basis.kind must be polynomial or piecewise_constant");
        }
        if (b.contains("degree")) c.basis.degree = static_cast<unsigned>(integer(b, "degree", "basis", 1, 8));
        if (b.contains("ridge")) {
            c.basis.ridge = number(b, "ridge", "basis");
            if (c.basis.ridge < 0.0 || c.basis.ridge > 1.0) config_error("basis.ridge must lie in [0, 1]");
        }
    }

    c.params = entry->defaults;
    if (j.contains("params")) {
        const json& p = j["params"];
        if (!p.is_object()) config_error("params must be an object");
        for (const auto& [key, value] : p.items()) {
            if (!c.params.count(key)) config_error("problem '" + c.problem + "' has no parameter '" + key + "'");
            if (!value.is_number() || !std::isfinite(value.get<double>()))
                config_error("params." + key + " must be a finite number");
            c.params[key] = value.get<double>();
        }
    }
    if (auto it = c.params.find("alpha"); it != c.params.end()) {
        const double bound = 1.0 / (c.T + 2.0);
        if (!(it->second >= 0.0 && it->second < bound)) {
            std::ostringstream o;
            o << "alpha = " << it->second << " violates the noise Lipschitz bound 0 <= alpha < 1/(T+2) = " << bound
              << " at T = " << c.T;
            config_error(o.str());
        }
    }

    if (j.contains("tolerances")) {
        const json& t = j["tolerances"];
        reject_unknown(t, {"picard_tol", "max_iter"}, "tolerances");
        if (t.contains("picard_tol")) {
            c.settings.picard_tol = number(t, "picard_tol", "tolerances");
            if (!(c.settings.picard_tol > 0.0 && c.settings.picard_tol < 1.0))
                config_error("tolerances.picard_tol must lie in (0, 1)");
        }
        if (t.contains("max_iter")) c.settings.max_iter = integer(t, "max_iter", "tolerances", 1, 10000);
    }
    if (j.contains("output")) {
        if (!j["output"].is_string()) config_error("output must be a string");
        c.output = j["output"].get<std::string>();
    }
    if (j.contains("dump_field")) {
        if (!j["dump_field"].is_boolean()) config_error("dump_field must be a boolean");
        c.dump_field = j["dump_field"].get<bool>();
    }
    if (j.contains("memory_cap_bytes"))
        c.memory_cap_bytes = integer(j, "memory_cap_bytes", "config", 1 << 20, std::numeric_limits<std::uint64_t>::max());
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot read config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        config_error(std::string("malformed JSON in ") + path + ": " + e.what());
    }
    return parse_config(j);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    const std::string out_dir = request.out.value_or(config.output);
    if (out_dir.empty()) config_error("no output directory: set config.output or pass --out");
    const CorpusEntry* entry = find_problem(config.problem);
    if (!entry) config_error("unknown corpus problem '" + config.problem + "'");
    if (config.memory_cap_bytes) set_memory_cap(*config.memory_cap_bytes);
    const std::uint64_t seed = request.seed_override.value_or(config.seed);

    const TimeGrid grid = make_grid(config.T, config.N);
    ScenarioBatch batch = generate_scenarios(grid, config.M, config.d, config.l, seed);
    Projector proj(batch, config.basis);
    CorpusOutput out = entry->run(proj, config.params, config.settings);

    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    write_series(out.series, (dir / "series.csv").string());
    std::optional<std::string> field_file;
    if (config.dump_field && out.field) {
        field_file = "field.bin";
        write_binary(*out.field, (dir / *field_file).string());
    }

    json checks = json::array();
    for (const auto& c : out.checks)
        checks.push_back({{"name", c.name}, {"value", c.value}, {"relation", c.relation}, {"bound", c.bound},
                          {"passed", c.passed}});
    ExperimentResult result;
    result.out_dir = out_dir;
    result.summary = {
        {"schema", kSchema},
        {"kind", config.kind},
        {"problem", config.problem},
        {"anchor", entry->anchor},
        {"oracle", entry->oracle},
        {"provenance",
         {{"seed", seed},
          {"config_seed", config.seed},
          {"seed_override", request.seed_override ? json(*request.seed_override) : json(nullptr)},
          {"batch_id", batch.id()},
          {"grid", {{"T", config.T}, {"N", config.N}}},
          {"batch", {{"M", config.M}, {"d", config.d}, {"l", config.l}}},
          {"basis", basis_json(config.basis)},
          {"params", config.params},
          {"tolerances", {{"picard_tol", config.settings.picard_tol}, {"max_iter", config.settings.max_iter}}}}},
        {"report", out.report},
        {"checks", checks},
        {"passed", out.passed()},
        {"files", {{"series", "series.csv"}, {"field", field_file ? json(*field_file) : json(nullptr)}}},
    };
    result.summary["wallclock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream summary((dir / "summary.json").string(), std::ios::binary);
    if (!summary) fail(ErrorCode::resource, "cannot write summary.json in " + out_dir);
    summary << result.summary.dump(2) << '\n';
    result.exit_code = out.passed() ? exit_ok : exit_acceptance;
    return result;
}

int run_command(const std::string& config_path, const RunRequest& request, std::ostream& err) {
    auto report = [&](const std::string& code, const std::string& message, int exit_code) {
        json e = {{"error", {{"code", code}, {"message", message}, {"exit_code", exit_code}}}};
        err << e.dump() << std::endl;
        return exit_code;
    };
    try {
        const ExperimentConfig config = load_config(config_path);
        ExperimentResult r = run_experiment(config, request);
        if (r.exit_code == exit_acceptance) {
            std::ostringstream o;
            o << "acceptance checks failed:";
            for (const auto& c : r.summary["checks"])
                if (!c["passed"].get<bool>())
                    o << ' ' << c["name"].get<std::string>() << '=' << c["value"].get<double>() << ' '
                      << c["relation"].get<std::string>() << ' ' << c["bound"].get<double>() << ';';
            return report("acceptance", o.str(), exit_acceptance);
        }
        return r.exit_code;
    } catch (const Error& e) {
        return report(std::string(to_string(e.code())), e.what(), exit_code_for(e.code()));
    } catch (const std::exception& e) {
        return report("internal", e.what(), exit_other);
    }
}

json strip_wallclock(const json& summary) {
    if (summary.is_object()) {
        json out = json::object();
        for (const auto& [k, v] : summary.items())
            if (k != "wallclock_seconds") out[k] = strip_wallclock(v);
        return out;
    }
    if (summary.is_array()) {
        json out = json::array();
        for (const auto& v : summary) out.push_back(strip_wallclock(v));
        return out;
    }
    return summary;
}

}  // namespace bdsvie
