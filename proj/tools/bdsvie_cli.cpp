#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bdsvie/corpus.hpp"
#include "bdsvie/experiment.hpp"
#include "bdsvie/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo solvers for backward/forward doubly stochastic Volterra equations"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    run->add_option("--config", config, "experiment config (JSON)")->required();
    run->add_option("--out", out, "output directory (overrides config.output)");
    run->add_option("--seed-override", seed, "replace batch.seed");
    run->add_option("--threads", threads, "worker cap for path-parallel loops")->check(CLI::NonNegativeNumber);

    auto* list = app.add_subcommand("list", "list registered corpus problems");
    bool as_json = false;
    list->add_flag("--json", as_json, "print a JSON array");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : bdsvie::exit_config;
    }

    if (*list) {
        if (as_json)
            std::cout << bdsvie::list_corpus_json(bdsvie::corpus()).dump(2) << '\n';
        else
            std::cout << bdsvie::list_corpus_text(bdsvie::corpus());
        return 0;
    }

    if (threads > 0) bdsvie::set_thread_count(threads);
    bdsvie::RunRequest request;
    if (!out.empty()) request.out = out;
    request.seed_override = seed;
    return bdsvie::run_command(config, request, std::cerr);
}
