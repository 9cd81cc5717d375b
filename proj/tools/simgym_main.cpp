#define SIMGYM_ENABLE_HTTP_BACKEND

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "simgym/pipeline.hpp"

namespace {

bool is_validation_error(simgym::ErrorCode code) {
    using simgym::ErrorCode;
    switch (code) {
        case ErrorCode::ConfigError:
        case ErrorCode::MissingStageInput:
        case ErrorCode::StaleManifest:
        case ErrorCode::InvalidArgument:
        case ErrorCode::SchemaError:
        case ErrorCode::EmptyInput:
            return true;
        default:
            return false;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simgym - offline A/B testing with traffic-grounded synthetic buyers"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    long long seed_override = -1;
    long long workers_override = -1;
    long long repeat_override = -1;
    app.add_option("--config", config_path, "run configuration JSON")->required();
    app.add_option("--seed", seed_override, "override the configured run seed");
    app.add_option("--workers", workers_override, "override the simulation worker count");

    auto* ingest = app.add_subcommand("ingest", "parse clickstreams into session artifacts");
    auto* cluster = app.add_subcommand("cluster", "k-means session clustering per shop");
    auto* personas = app.add_subcommand("personas", "build intents, personas, and agent profiles");
    auto* simulate = app.add_subcommand("simulate", "run agents against both themes");
    simulate->add_option("--repeat", repeat_override, "independent simulation runs (default 1)");
    auto* evaluate = app.add_subcommand("evaluate", "score agent deltas against human deltas");
    auto* bootstrap = app.add_subcommand("bootstrap", "sample-size bootstrap over two runs");
    auto* report = app.add_subcommand("report", "render the human-readable summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // command-line problems are validation errors
    }

    try {
        simgym::RunConfig cfg = simgym::load_run_config(config_path);
        if (seed_override >= 0) {
            cfg.run_seed = static_cast<std::uint64_t>(seed_override);
            cfg.eval.seed = cfg.run_seed;
            cfg.canonical["seeds"]["run_seed"] = cfg.run_seed;
        }
        if (workers_override > 0) cfg.workers = static_cast<std::size_t>(workers_override);
        if (repeat_override > 0) {
            cfg.repeat = static_cast<std::size_t>(repeat_override);
            cfg.canonical["repeat"] = cfg.repeat;
        }

        simgym::StageOutcome outcome;
        if (*ingest) outcome = simgym::run_ingest(cfg);
        if (*cluster) outcome = simgym::run_cluster(cfg);
        if (*personas) outcome = simgym::run_personas(cfg);
        if (*simulate) outcome = simgym::run_simulate(cfg);
        if (*evaluate) outcome = simgym::run_evaluate(cfg);
        if (*bootstrap) outcome = simgym::run_bootstrap(cfg);
        if (*report) outcome = simgym::run_report(cfg);

        std::cout << outcome.message << "\n";
        return 0;
    } catch (const simgym::Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return is_validation_error(ex.code()) ? 2 : 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
}
