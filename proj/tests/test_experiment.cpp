#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "bdsvie/experiment.hpp"

using namespace bdsvie;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string env(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Cli : ::testing::Test {
    fs::path dir;
    std::string cli = env("BDSVIE_CLI");

    void SetUp() override {
        if (cli.empty()) GTEST_SKIP() << "BDSVIE_CLI not set";
        dir = fs::path(::testing::TempDir()) / ("bdsvie_cli_" + std::to_string(::getpid()) + "_" +
                                               ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override {
        if (!dir.empty()) fs::remove_all(dir);
    }

    fs::path write_config(const std::string& name, const json& j) {
        const fs::path p = dir / (name + ".json");
        std::ofstream(p) << j.dump(2);
        return p;
    }

    /// Runs the CLI; stdout and stderr go to files in the temp directory.
    int run(const std::string& args) {
        const std::string cmd = "\"" + cli + "\" " + args + " >\"" + (dir / "stdout.txt").string() + "\" 2>\"" +
                                (dir / "stderr.txt").string() + "\"";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    static json small(const std::string& kind, const std::string& problem) {
        return {{"kind", kind}, {"problem", problem}, {"grid", {{"T", 1.0}, {"N", 8}}},
                {"batch", {{"M", 2000}, {"seed", 5}}}};
    }
};

}  // namespace

TEST(Config, StrictParsing) {
    json ok = {{"kind", "picard"}, {"problem", "exp-ode"}};
    EXPECT_NO_THROW(parse_config(ok));
    EXPECT_EQ(parse_config(ok).params.at("rate"), 1.0);

    auto expect_config_error = [](const json& j, const std::string& fragment) {
        try {
            parse_config(j);
            ADD_FAILURE() << "expected config error for " << j.dump();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::config);
            EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
        }
    };
    json extra = ok;
    extra["colour"] = "blue";
    expect_config_error(extra, "unknown key 'colour'");
    json nested = ok;
    nested["grid"] = {{"T", 1.0}, {"steps", 4}};
    expect_config_error(nested, "unknown key 'steps' in grid");
    expect_config_error({{"kind", "fdsvie"}, {"problem", "exp-ode"}}, "runs under kind 'picard'");
    expect_config_error({{"kind", "picard"}, {"problem", "nope"}}, "unknown corpus problem");
    json badparam = ok;
    badparam["params"] = {{"sigma", 1.0}};
    expect_config_error(badparam, "no parameter 'sigma'");
    json alpha = ok;
    alpha["params"] = {{"alpha", 0.5}};
    expect_config_error(alpha, "1/(T+2)");
    json badM = ok;
    badM["batch"] = {{"M", 1}};
    expect_config_error(badM, "batch.M");
    json badT = ok;
    badT["grid"] = {{"T", -1.0}};
    expect_config_error(badT, "grid.T");
    json badtype = ok;
    badtype["grid"] = {{"N", "many"}};
    expect_config_error(badtype, "grid.N");
}

TEST(Config, ShippedConfigsParse) {
    const std::string configs = env("BDSVIE_CONFIGS");
    if (configs.empty()) GTEST_SKIP() << "BDSVIE_CONFIGS not set";
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(configs)) {
        if (e.path().extension() != ".json") continue;
        EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
        ++n;
    }
    EXPECT_EQ(n, corpus().size());
}

TEST(Config, StripWallclock) {
    json a = {{"x", 1}, {"wallclock_seconds", 2.0}, {"inner", {{"wallclock_seconds", 3.0}, {"y", {1, 2}}}}};
    json b = {{"x", 1}, {"inner", {{"y", {1, 2}}}}};
    EXPECT_EQ(strip_wallclock(a), b);
}

TEST_F(Cli, ListIncludesCorpus) {
    ASSERT_EQ(run("list"), 0);
    const std::string text = slurp(dir / "stdout.txt");
    for (const char* name : {"lq-control", "martingale-free-term", "exp-ode"})
        EXPECT_NE(text.find(name), std::string::npos) << name;
    ASSERT_EQ(run("list --json"), 0);
    json arr = json::parse(slurp(dir / "stdout.txt"));
    ASSERT_TRUE(arr.is_array());
    EXPECT_EQ(arr.size(), corpus().size());
    EXPECT_TRUE(arr[0].contains("oracle"));
}

TEST_F(Cli, SimpleMartingaleRun) {
    auto cfg = write_config("m", small("simple", "martingale-free-term"));
    const fs::path out = dir / "out";
    ASSERT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + out.string() + "\""), 0)
        << slurp(dir / "stderr.txt");
    std::ifstream csv(out / "series.csv");
    std::string header, line;
    std::getline(csv, header);
    EXPECT_EQ(header, "t,mean,stderr,analytic,abs_err");
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        std::stringstream s(line);
        std::string t, mean, se, analytic;
        std::getline(s, t, ',');
        std::getline(s, mean, ',');
        std::getline(s, se, ',');
        std::getline(s, analytic, ',');
        EXPECT_EQ(std::stod(analytic), 0.0);
        // Every node carries the sample mean of W(T), whose spread is sqrt(T/M).
        EXPECT_LE(std::abs(std::stod(mean)), 5.0 / std::sqrt(2000.0));
        EXPECT_GE(std::stod(se), 0.0);
        ++rows;
    }
    EXPECT_EQ(rows, 9u);
    json summary = json::parse(slurp(out / "summary.json"));
    EXPECT_TRUE(summary["passed"].get<bool>());
    EXPECT_EQ(summary["provenance"]["seed"], 5);
}

TEST_F(Cli, AlphaBoundIsConfigError) {
    json j = small("picard", "exp-ode");
    j["params"] = {{"alpha", 0.5}};
    auto cfg = write_config("a", j);
    EXPECT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + (dir / "o").string() + "\""), 3);
    json err = json::parse(slurp(dir / "stderr.txt"));
    EXPECT_EQ(err["error"]["code"], "config");
    EXPECT_NE(err["error"]["message"].get<std::string>().find("1/(T+2)"), std::string::npos);
}

TEST_F(Cli, MalformedJsonIsConfigError) {
    const fs::path p = dir / "bad.json";
    std::ofstream(p) << "{\"kind\": ";
    EXPECT_EQ(run("run --config \"" + p.string() + "\" --out \"" + (dir / "o").string() + "\""), 3);
}

TEST_F(Cli, DualityZeroGap) {
    auto cfg = write_config("d", small("duality", "duality-zero"));
    const fs::path out = dir / "out";
    ASSERT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + out.string() + "\""), 0);
    json summary = json::parse(slurp(out / "summary.json"));
    EXPECT_LE(summary["report"]["gap"].get<double>(), 1e-10);
    EXPECT_NEAR(summary["report"]["lhs"].get<double>(), -1.0, 1e-10);
}

TEST_F(Cli, AcceptanceFailureExitCode) {
    // Two steps leave an O(1) quadrature bias against exp(T).
    json j = small("picard", "exp-ode");
    j["grid"]["N"] = 2;
    auto cfg = write_config("e", j);
    const fs::path out = dir / "out";
    EXPECT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + out.string() + "\""), 2);
    json summary = json::parse(slurp(out / "summary.json"));
    EXPECT_FALSE(summary["passed"].get<bool>());
}

TEST_F(Cli, NonConvergenceExitCode) {
    json j = small("picard", "exp-ode");
    j["tolerances"] = {{"max_iter", 2}};
    auto cfg = write_config("n", j);
    EXPECT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + (dir / "o").string() + "\""), 4);
    json err = json::parse(slurp(dir / "stderr.txt"));
    EXPECT_EQ(err["error"]["code"], "non-convergence");
}

TEST_F(Cli, ReproducibleAcrossThreadCounts) {
    json j = small("fdsvie", "fdsvie-backward-noise");
    j["dump_field"] = true;
    auto cfg = write_config("r", j);
    const fs::path a = dir / "a", b = dir / "b";
    ASSERT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + a.string() + "\" --threads 1"), 0);
    ASSERT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + b.string() + "\" --threads 3"), 0);
    EXPECT_EQ(strip_wallclock(json::parse(slurp(a / "summary.json"))),
              strip_wallclock(json::parse(slurp(b / "summary.json"))));
    EXPECT_EQ(slurp(a / "series.csv"), slurp(b / "series.csv"));
    EXPECT_EQ(slurp(a / "field.bin"), slurp(b / "field.bin"));
}

TEST_F(Cli, SeedOverride) {
    auto cfg = write_config("s", small("simple", "deterministic-drift"));
    const fs::path out = dir / "out";
    ASSERT_EQ(run("run --config \"" + cfg.string() + "\" --out \"" + out.string() + "\" --seed-override 99"), 0);
    json summary = json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(summary["provenance"]["seed"], 99);
    EXPECT_EQ(summary["provenance"]["config_seed"], 5);
}
