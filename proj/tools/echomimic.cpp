// echomimic: command-line driver for the staged pipeline.
//
// Exit status: 0 ok, 1 user error (bad config, input or missing artifact),
// 2 internal error.

#include <CLI11.hpp>
#include <iostream>

#include "echomimic/pipeline.hpp"

using namespace echomimic;

namespace {

enum ExitCode { ok = 0, user_error = 1, internal_error = 2 };

RunConfig resolve_config(const std::string& config_path, const fs::path& run_dir, std::optional<std::uint64_t> seed) {
    RunConfig c;
    if (!config_path.empty()) c = load_run_config(config_path);
    else if (fs::exists(run_dir / "config.json")) c = load_run_config(run_dir / "config.json");
    else apply_env_overrides(c);
    if (seed) {
        c.seed = *seed;
        c.landscape.seed = *seed;
    }
    if (auto problems = validate(c); !problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw InputError(msg);
    }
    return c;
}

std::vector<int> parse_stages(const std::string& s) {
    if (s == "all") return {1, 2, 3, 4};
    if (s.size() == 1 && s[0] >= '1' && s[0] <= '4') return {s[0] - '0'};
    throw InputError("--stage must be 1, 2, 3, 4 or all");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evolutionary heuristic discovery and nudge design for farm landscapes"};
    app.require_subcommand(1);

    std::string run_dir, config_path;
    std::optional<std::uint64_t> seed;
    app.add_option("--run-dir", run_dir, "Root directory for all run artifacts")->required();
    app.add_option("--config", config_path, "Run configuration (JSON); defaults to <run-dir>/config.json")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override the run seed");

    auto* gen = app.add_subcommand("generate-landscape", "Generate the synthetic landscape");

    std::string stage = "all";
    bool skip_complete = false;
    auto* run = app.add_subcommand("run", "Run one stage or all of them");
    run->add_option("--stage", stage, "1, 2, 3, 4 or all")->capture_default_str();
    run->add_flag("--skip-complete", skip_complete, "Skip stages already recorded as complete");

    int explain_stage = 2;
    std::vector<int> explain_farms;
    auto* explain = app.add_subcommand("explain", "Summarise the heuristics of a stage run");
    explain->add_option("--stage", explain_stage, "2 or 3")->check(CLI::IsMember({2, 3}))->capture_default_str();
    explain->add_option("--farm", explain_farms, "Farm ids (default: all)");

    auto* report = app.add_subcommand("report", "Write charts and tables from the tracking exports");
    auto* resume = app.add_subcommand("resume", "Continue the enabled stages that are not yet complete");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : user_error;
    }

    try {
        const RunConfig cfg = resolve_config(config_path, run_dir, seed);
        Pipeline p(cfg, run_dir);
        if (*gen) {
            const auto& land = p.generate_landscape();
            std::cout << "landscape: " << land.farms.size() << " farms written to "
                      << (fs::path(run_dir) / "landscape").string() << "\n";
        } else if (*run) {
            for (int s : parse_stages(stage)) {
                if (skip_complete && p.manifest().completed(s, run_dir)) {
                    std::cout << "stage " << s << ": already complete\n";
                    continue;
                }
                p.run({s});
                std::cout << "stage " << s << ": complete\n";
            }
            std::cout << "provider: " << p.provider_summary().dump() << "\n";
        } else if (*explain) {
            if (explain_farms.empty()) explain_farms = p.farm_ids();
            for (int f : explain_farms) {
                p.explain(explain_stage, f);
                std::cout << "explain: stage " << explain_stage << " farm " << f << " summarised\n";
            }
        } else if (*report) {
            const auto files = p.report();
            std::cout << "report: " << files.size() << " files written to "
                      << (fs::path(run_dir) / "reports").string() << "\n";
        } else if (*resume) {
            p.resume();
            std::cout << "resume: enabled stages complete\n";
        }
        return ok;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const CompositionError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const SeedingError& e) {
        std::cerr << "error: " << e.what() << "\n";
    } catch (const ProviderError& e) {
        std::cerr << "provider error: " << e.what() << "\n";
        return e.transient ? internal_error : user_error;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal_error;
    }
    return user_error;
}
