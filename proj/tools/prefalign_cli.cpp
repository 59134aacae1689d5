// Command-line front end: one subcommand per pipeline stage plus end-to-end,
// report, fixture, and template-dump utilities. Exit codes: 0 success,
// 2 config error, 3 stage error, 4 transport exhaustion.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "prefalign/config.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/fixture.hpp"
#include "prefalign/pipeline.hpp"
#include "prefalign/prompts.hpp"
#include "prefalign/runstore.hpp"

namespace {

using namespace prefalign;

struct CliOptions {
    std::string config_path;
    std::string run_id;
    bool force = false;
    bool mock = false;
    std::optional<std::int64_t> seed_override;
    int parallel = 1;
};

std::string read_file_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw ConfigError("cannot open config: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct LoadedRun {
    PipelineConfig cfg;
    std::filesystem::path base_dir;
    std::string effective_config;
    std::string run_id;
    std::filesystem::path root;
};

LoadedRun load_run(const CliOptions& opts) {
    if (opts.config_path.empty()) throw ConfigError("--config is required");
    const std::filesystem::path config_path(opts.config_path);
    LoadedRun run;
    run.base_dir = config_path.has_parent_path() ? config_path.parent_path()
                                                 : std::filesystem::path(".");
    run.cfg = parse_config(read_file_or_throw(config_path));
    if (opts.mock) apply_mock_fallbacks(run.cfg);
    if (opts.seed_override) apply_seed_override(run.cfg, *opts.seed_override);
    validate_config(run.cfg, run.base_dir);
    // The run stores the post-flag canonical config, so --mock or seed
    // overrides produce a distinct run identity.
    run.effective_config = dump_config(run.cfg);
    run.run_id = opts.run_id.empty()
                     ? "run-" + sha256_hex(run.effective_config).substr(0, 12)
                     : opts.run_id;
    run.root = resolve_path(run.base_dir, run.cfg.output.root);
    return run;
}

PipelineContext make_context(const CliOptions& opts, const LoadedRun& run) {
    PipelineContext ctx;
    ctx.cfg = run.cfg;
    ctx.base_dir = run.base_dir;
    ctx.store = std::make_shared<RunStore>(
        RunStore::open_or_init(run.root, run.run_id, run.effective_config, run.cfg.split.seeds));
    ctx.gate = make_gateway(run.cfg, run.base_dir);
    ctx.workers = opts.parallel;
    ctx.force = opts.force;
    return ctx;
}

void print_stage_result(const PipelineContext& ctx, const std::string& stage, bool ran) {
    if (!ran) {
        std::cout << "[" << stage << "] already complete in run '"
                  << ctx.store->manifest().run_id << "' (use --force to rerun)\n";
        return;
    }
    std::cout << "[" << stage << "] complete";
    const auto& rec = ctx.store->manifest().stages.at(stage);
    for (const auto& art : rec.artifacts)
        std::cout << "  " << art.path << " (" << art.n_records << " records)";
    std::cout << "\n";
}

int run_stage_command(const CliOptions& opts, const std::string& stage) {
    const LoadedRun run = load_run(opts);
    PipelineContext ctx = make_context(opts, run);
    const bool ran = ensure_stage(ctx, stage);
    print_stage_result(ctx, stage, ran);
    return 0;
}

int run_all_command(const CliOptions& opts) {
    const LoadedRun run = load_run(opts);
    PipelineContext ctx = make_context(opts, run);
    if (ctx.force)
        for (const char* stage : pipeline_stages())
            if (ctx.store->stage_state(stage) == StageState::complete)
                ctx.store->reset_stage(stage);
    bool any = false;
    while (auto next = ctx.store->resume()) {
        ensure_stage(ctx, *next);
        print_stage_result(ctx, *next, true);
        any = true;
    }
    if (!any) std::cout << "all stages already complete in run '" << run.run_id << "'\n";
    std::cout << "run directory: " << ctx.store->dir().string() << "\n";
    return 0;
}

int report_command(const CliOptions& opts) {
    const LoadedRun run = load_run(opts);
    const RunStore store = RunStore::open(run.root, run.run_id);
    std::cout << render_report(store);
    return 0;
}

int templates_command(const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (TemplateId id : kAllTemplates) {
        const auto path = std::filesystem::path(out_dir) / (std::string(to_string(id)) + ".txt");
        std::ofstream(path, std::ios::binary) << registered_template(id);
        std::cout << "wrote " << path.string() << "\n";
    }
    return 0;
}

int fixture_command(const std::string& out_dir, int users, int items, std::uint64_t seed,
                    bool balanced) {
    FixtureSpec spec;
    if (balanced) {
        if (users % 3 != 0) throw ConfigError("--balanced requires --users divisible by 3");
        spec = FixtureSpec::balanced(users, seed);
    } else {
        spec.n_users = users;
        spec.seed = seed;
    }
    spec.n_items = items;
    write_fixture(out_dir, spec);
    std::cout << "wrote " << out_dir << "/interactions.dat and items.dat (" << users
              << " users)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Profile-preference data pipeline: generate user profiles from long "
                 "interaction histories, score them by downstream prediction success, build "
                 "preference pairs, and verify the DPO objective at desk scale."};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "pipeline config file (JSON)");
    app.add_option("--run-id", opts.run_id, "run identifier (default: derived from config)");
    app.add_flag("--force", opts.force, "redo completed stages");
    app.add_flag("--mock", opts.mock, "replace live models with their declared mock fallbacks");
    app.add_option("--seed-override", opts.seed_override,
                   "rederive all purpose seeds from this master seed");
    app.add_option("--parallel", opts.parallel, "worker threads for batch stages")
        ->check(CLI::PositiveNumber);

    const char* stage_names[] = {"ingest", "explore", "evaluate", "pairs", "export", "toy-dpo"};
    const char* stage_help[] = {
        "parse the dataset, filter/sample users, write the normalized corpus and split",
        "sample N profiles per user and generator model from the long history",
        "run the downstream predictor over conditions and the training pool",
        "partition profiles by correctness and build preference pairs",
        "render prompts and export preference-tuning examples (pairs.dpo)",
        "train the toy linear scorer with the DPO objective"};
    for (std::size_t i = 0; i < 6; ++i)
        app.add_subcommand(stage_names[i], stage_help[i])->fallthrough();

    app.add_subcommand("run-all", "run every remaining stage in order")->fallthrough();
    app.add_subcommand("report", "print the condition metrics table and token summary")
        ->fallthrough();

    auto* templates = app.add_subcommand("templates", "dump registered prompt templates");
    std::string templates_out = "templates";
    templates->add_option("--out", templates_out, "output directory");

    auto* fixture = app.add_subcommand("fixture", "regenerate the synthetic offline dataset");
    std::string fixture_out = "data/fixture";
    int fixture_users = 200;
    int fixture_items = 300;
    std::uint64_t fixture_seed = 20240501;
    bool fixture_balanced = false;
    fixture->add_option("--out", fixture_out, "output directory");
    fixture->add_option("--users", fixture_users, "number of users");
    fixture->add_option("--items", fixture_items, "number of items");
    fixture->add_option("--seed", fixture_seed, "generator seed");
    fixture->add_flag("--balanced", fixture_balanced, "balanced like/neutral/dislike targets");

    CLI11_PARSE(app, argc, argv);

    try {
        for (const char* stage : stage_names)
            if (app.got_subcommand(stage)) return run_stage_command(opts, stage);
        if (app.got_subcommand("run-all")) return run_all_command(opts);
        if (app.got_subcommand("report")) return report_command(opts);
        if (app.got_subcommand("templates")) return templates_command(templates_out);
        if (app.got_subcommand("fixture"))
            return fixture_command(fixture_out, fixture_users, fixture_items, fixture_seed,
                                   fixture_balanced);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TransportExhausted& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
