// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Usage: acceptance [configs-dir]
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdsvie/bdsvie.hpp"
#include "bdsvie/experiment.hpp"
#include "bdsvie/order.hpp"
#include "bdsvie/parallel.hpp"

using namespace bdsvie;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path configs_dir;
fs::path scratch;
std::map<std::string, json> cache;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Runs a shipped config once and caches its summary.
const json& summary_of(const std::string& problem) {
    auto it = cache.find(problem);
    if (it != cache.end()) return it->second;
    auto config = load_config((configs_dir / (problem + ".json")).string());
    RunRequest req;
    req.out = (scratch / problem).string();
    auto result = run_experiment(config, req);
    return cache.emplace(problem, result.summary).first->second;
}

/// Looks up a named check in a summary; throws when it is missing.
const json& check(const json& summary, const std::string& name) {
    for (const auto& c : summary.at("checks"))
        if (c.at("name") == name) return c;
    fail(ErrorCode::invalid_argument, "summary of " + summary.at("problem").get<std::string>() +
                                          " has no check '" + name + "'");
}

struct Outcome {
    bool passed = true;
    std::string detail;

    void add(bool ok, const std::string& what) {
        passed = passed && ok;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [fail]");
    }
    /// Records a corpus check with its value and bound.
    void add(const json& summary, const std::string& name) {
        const auto& c = check(summary, name);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s %s=%.4g %s %.4g", summary.at("problem").get<std::string>().c_str(),
                      name.c_str(), c.at("value").get<double>(), c.at("relation").get<std::string>().c_str(),
                      c.at("bound").get<double>());
        add(c.at("passed").get<bool>(), buf);
    }
};

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

Outcome martingale_free_term() {
    Outcome o;
    const auto& s = summary_of("martingale-free-term");
    for (const char* c : {"max_rms_error", "mean_Z_low", "mean_Z_high"}) o.add(s, c);
    return o;
}

Outcome backward_noise_free_term() {
    Outcome o;
    o.add(summary_of("backward-noise-free-term"), "max_rms_error");
    return o;
}

Outcome picard_exponential() {
    Outcome o;
    const auto& s = summary_of("exp-ode");
    o.add(s, "Y0_relative_error");
    o.add(s, "measured_ratio");
    return o;
}

Outcome contraction_arithmetic() {
    Outcome o;
    const auto k = contraction_constants(1.0, 0.1, 1.0, 100.0);
    o.add(k.K == 20.1, fmt("K=%.17g", k.K));
    o.add(k.epsilon == 0.4, fmt("epsilon=%.17g", k.epsilon));
    return o;
}

Outcome m_relation() {
    Outcome o;
    const auto& s = summary_of("martingale-free-term");
    o.add(s, "m_relation");
    o.add(s, "m_relation_zeroed");
    return o;
}

Outcome comparison() {
    Outcome o;
    o.add(summary_of("comparison-shift"), "violation_fraction");
    o.add(summary_of("comparison-example"), "violation_fraction");
    return o;
}

Outcome inf_convolution_properties() {
    Outcome o;
    const double h = 0.01;
    auto f = [](double x) { return 2.0 * std::abs(x); };
    std::vector<double> xs(201);
    for (std::size_t k = 0; k < xs.size(); ++k) xs[k] = -5.0 + 10.0 * k / (xs.size() - 1);
    std::vector<LipschitzApprox> fs;
    for (unsigned n : {2u, 3u, 4u}) fs.push_back(inf_convolution(f, n, 2.0, 30.0, h, 0.0));

    bool monotone = true, growth = true, lipschitz = true;
    for (std::size_t k = 0; k < fs.size(); ++k) {
        const double n = fs[k].n();
        for (std::size_t p = 0; p < xs.size(); ++p) {
            const double v = fs[k](xs[p]);
            if (k + 1 < fs.size() && !(v <= fs[k + 1](xs[p]))) monotone = false;
            if (!(std::abs(v) <= 2.0 * (1.0 + std::abs(xs[p])))) growth = false;
            for (std::size_t q = p + 1; q < xs.size(); ++q)
                if (std::abs(v - fs[k](xs[q])) > n * (xs[q] - xs[p]) + 2.0 * n * h) lipschitz = false;
        }
    }
    o.add(monotone, "f_n <= f_{n+1}");
    o.add(growth, "|f_n| <= 2(1+|x|)");
    o.add(lipschitz, "Lipschitz-n within 2nh");
    const double f21 = fs[0](1.0);
    o.add(std::abs(f21 - 2.0) <= 2.0 * h, fmt("f_2(1)=%.6g", f21));
    return o;
}

Outcome minimal_solution() {
    Outcome o;
    const auto& s = summary_of("sqrt-minimal");
    for (const char* c : {"max_abs_Y", "worst_monotone_gap", "worst_barrier_gap"}) o.add(s, c);
    return o;
}

Outcome duality() {
    Outcome o;
    o.add(summary_of("duality-zero"), "gap");
    o.add(summary_of("duality-a1"), "gap");
    return o;
}

Outcome maximum_principle() {
    Outcome o;
    const auto& s = summary_of("lq-control");
    for (const char* c : {"cost_error", "violation_fraction", "gateaux_u_lo", "gateaux_u_hi", "gateaux_linear"})
        o.add(s, c);
    const auto& f = summary_of("lq-fbdsvie");
    o.add(f, "converged");
    o.add(f, "l2_error");
    o.add(summary_of("lq-control-zero"), "violation_fraction");
    return o;
}

Outcome reproducibility() {
    Outcome o;
    auto config = load_config((configs_dir / "martingale-free-term.json").string());
    config.dump_field = true;
    const int saved = thread_count();
    std::vector<fs::path> outs;
    std::vector<json> sums;
    for (int threads : {1, 3}) {
        set_thread_count(threads);
        RunRequest req;
        outs.push_back(scratch / ("repro-" + std::to_string(threads)));
        req.out = outs.back().string();
        sums.push_back(strip_wallclock(run_experiment(config, req).summary));
    }
    set_thread_count(saved);
    o.add(sums[0] == sums[1], "summary.json equal modulo wallclock (threads 1 vs 3)");
    o.add(slurp(outs[0] / "series.csv") == slurp(outs[1] / "series.csv"), "series.csv equal");
    o.add(slurp(outs[0] / "field.bin") == slurp(outs[1] / "field.bin"), "field.bin equal");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc > 1) {
        configs_dir = argv[1];
    } else if (const char* env = std::getenv("BDSVIE_CONFIGS")) {
        configs_dir = env;
    } else {
        configs_dir = "configs";
    }
    scratch = fs::temp_directory_path() / "bdsvie_acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"martingale free term", martingale_free_term},
        {"backward-noise free term", backward_noise_free_term},
        {"Picard exponential case", picard_exponential},
        {"contraction-constant arithmetic", contraction_arithmetic},
        {"M-relation residual", m_relation},
        {"comparison", comparison},
        {"inf-convolution", inf_convolution_properties},
        {"minimal solution", minimal_solution},
        {"duality", duality},
        {"maximum principle", maximum_principle},
        {"reproducibility", reproducibility},
    };

    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o.passed = false;
            o.detail = std::string("error: ") + e.what();
        }
        failed += !o.passed;
        std::printf("%s %2zu %s: %s\n", o.passed ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    fs::remove_all(scratch);
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
