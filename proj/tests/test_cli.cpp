#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <string>

#include "pipeline_env.hpp"
#include "test_util.hpp"

namespace {

struct CliResult {
    int exit_code;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PREFALIGN_CLI_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe) != nullptr) output += buf;
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

/// Writes a fixture dataset plus a config file and returns the config path.
std::string write_cli_config(const test_util::TempDir& tmp) {
    using namespace prefalign;
    write_fixture(tmp.path() / "data", FixtureSpec{.n_users = 24, .n_items = 60});
    PipelineConfig cfg;
    cfg.dataset.kind = DatasetKind::movielens;
    cfg.dataset.interactions_path = "data/interactions.dat";  // relative to config dir
    cfg.dataset.items_path = "data/items.dat";
    cfg.split.test_users = 4;
    cfg.split.train_users = 3;
    cfg.split.window_partition = {{1, 30}, {1, 50}, {1, 70}};
    cfg.split.seeds = {{"sample_test", 101},
                       {"sample_train", 202},
                       {"explore", 303},
                       {"pairs", 404},
                       {"train", 505}};
    cfg.explore.models = {{test_util::PipelineEnv::hash_generator("gen-a"), std::nullopt},
                          {test_util::PipelineEnv::hash_generator("gen-b"), std::nullopt}};
    cfg.predictor = {test_util::PipelineEnv::marker_predictor(), std::nullopt};
    cfg.dpo.feature_dim = 1 << 14;
    cfg.dpo.train.epochs = 5;
    cfg.output.root = "runs";
    const auto path = tmp.path() / "pipeline.json";
    test_util::spit(path, dump_config(cfg));
    return path.string();
}

}  // namespace

TEST_CASE("cli: run-all completes, rerun is a no-op, report prints the table") {
    test_util::TempDir tmp;
    const auto config = write_cli_config(tmp);

    const auto first = run_cli("run-all --config " + config + " --run-id cli-e2e");
    INFO(first.output);
    REQUIRE(first.exit_code == 0);
    CHECK(first.output.find("[toy-dpo] complete") != std::string::npos);

    const auto second = run_cli("run-all --config " + config + " --run-id cli-e2e");
    INFO(second.output);
    REQUIRE(second.exit_code == 0);
    CHECK(second.output.find("all stages already complete") != std::string::npos);

    const auto report = run_cli("report --config " + config + " --run-id cli-e2e");
    INFO(report.output);
    REQUIRE(report.exit_code == 0);
    CHECK(report.output.find("10H+70P") != std::string::npos);
    CHECK(report.output.find("weighted-F1") != std::string::npos);
}

TEST_CASE("cli: running a stage before its prerequisites exits 3") {
    test_util::TempDir tmp;
    const auto config = write_cli_config(tmp);
    const auto res = run_cli("pairs --config " + config + " --run-id cli-order");
    INFO(res.output);
    CHECK(res.exit_code == 3);
    CHECK(res.output.find("requires completed") != std::string::npos);
}

TEST_CASE("cli: config errors exit 2") {
    test_util::TempDir tmp;
    test_util::spit(tmp.path() / "bad.json", "{ not json");
    const auto res = run_cli("ingest --config " + (tmp.path() / "bad.json").string());
    CHECK(res.exit_code == 2);

    const auto missing = run_cli("ingest --config " + (tmp.path() / "nope.json").string());
    CHECK(missing.exit_code == 2);
}

TEST_CASE("cli: templates dump writes the five registered templates") {
    test_util::TempDir tmp;
    const auto out = (tmp.path() / "templates").string();
    const auto res = run_cli("templates --out " + out);
    REQUIRE(res.exit_code == 0);
    for (const char* name :
         {"lettinggo_profile", "lettinggo_predict", "kar_profile", "palr_profile",
          "rlmrec_profile"}) {
        const auto text = test_util::slurp(tmp.path() / "templates" / (std::string(name) + ".txt"));
        REQUIRE_FALSE(text.empty());
        CHECK(text == prefalign::registered_template(prefalign::template_id_from_string(name)));
        CHECK(text.find("{{user_history}}") != std::string::npos);
    }
}

TEST_CASE("cli: fixture subcommand regenerates deterministic data") {
    test_util::TempDir tmp;
    const auto out_a = (tmp.path() / "a").string();
    const auto out_b = (tmp.path() / "b").string();
    REQUIRE(run_cli("fixture --out " + out_a + " --users 12 --items 40").exit_code == 0);
    REQUIRE(run_cli("fixture --out " + out_b + " --users 12 --items 40").exit_code == 0);
    CHECK(test_util::slurp(tmp.path() / "a" / "interactions.dat") ==
          test_util::slurp(tmp.path() / "b" / "interactions.dat"));
    CHECK(test_util::slurp(tmp.path() / "a" / "items.dat") ==
          test_util::slurp(tmp.path() / "b" / "items.dat"));

    const auto odd = run_cli("fixture --out " + out_a + " --users 10 --balanced");
    CHECK(odd.exit_code == 2);  // balanced requires users divisible by 3
}
