#include <catch2/catch_amalgamated.hpp>

#include "prefalign/runstore.hpp"
#include "test_util.hpp"

using namespace prefalign;
using test_util::TempDir;

TEST_CASE("init creates the run directory with config and pending stages") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r1", "{\"a\":1}\n", {{"explore", 3}});
    CHECK(std::filesystem::exists(store.dir() / "manifest"));
    CHECK(test_util::slurp(store.dir() / "config") == "{\"a\":1}\n");
    CHECK(store.manifest().config_digest == sha256_hex("{\"a\":1}\n"));
    CHECK(store.manifest().seeds.at("explore") == 3);
    for (const char* stage : pipeline_stages())
        CHECK(store.stage_state(stage) == StageState::pending);
    CHECK(store.resume() == std::string("ingest"));

    CHECK_THROWS_AS(RunStore::init(tmp.path(), "r1", "x"), StoreError);
}

TEST_CASE("equal configs share a digest, invalid manifests are rejected") {
    TempDir tmp;
    auto a = RunStore::init(tmp.path(), "a", "same config");
    auto b = RunStore::init(tmp.path(), "b", "same config");
    CHECK(a.manifest().config_digest == b.manifest().config_digest);

    test_util::spit(tmp.path() / "a" / "manifest", "not json at all");
    CHECK_THROWS_AS(RunStore::open(tmp.path(), "a"), StoreError);
}

TEST_CASE("put then get round trips and verifies digests") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    const std::string content = "line1\nline2\nline3\n";
    const auto art = store.put_artifact("ingest", "corpus.norm", content);
    CHECK(art.n_records == 3);
    CHECK(art.digest == sha256_hex(content));
    store.mark_complete("ingest");

    CHECK(store.get_artifact("ingest", "corpus.norm") == content);

    // Tampering is caught.
    test_util::spit(store.dir() / "corpus.norm", "tampered\n");
    CHECK_THROWS_AS(store.get_artifact("ingest", "corpus.norm"), StoreError);
}

TEST_CASE("immutability: re-put on a complete stage requires force") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    store.put_artifact("ingest", "corpus.norm", "v1\n");
    store.mark_complete("ingest");
    try {
        store.put_artifact("ingest", "corpus.norm", "v2\n");
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.kind() == StoreError::Kind::immutability);
    }
    CHECK_NOTHROW(store.put_artifact("ingest", "corpus.norm", "v2\n", /*force=*/true));
    CHECK(store.get_artifact("ingest", "corpus.norm") == "v2\n");
}

TEST_CASE("get before completion is a stage-order error") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    store.put_artifact("ingest", "corpus.norm", "x\n");
    try {
        store.get_artifact("ingest", "corpus.norm");
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.kind() == StoreError::Kind::stage_order);
    }
}

TEST_CASE("resume walks the pipeline order") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    CHECK(store.resume() == std::string("ingest"));
    store.mark_complete("ingest");
    CHECK(store.resume() == std::string("explore"));
    store.mark_complete("explore");
    CHECK(store.resume() == std::string("evaluate"));
    for (const char* stage : {"evaluate", "pairs", "export", "toy-dpo"})
        store.mark_complete(stage);
    CHECK_FALSE(store.resume().has_value());

    // Failed stages resume at the failure point.
    store.reset_stage("pairs");
    store.mark_failed("pairs", "boom");
    CHECK(store.resume() == std::string("pairs"));
}

TEST_CASE("require_predecessors enforces stage order") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    try {
        store.require_predecessors("pairs");
        FAIL("expected StoreError");
    } catch (const StoreError& e) {
        CHECK(e.kind() == StoreError::Kind::stage_order);
        CHECK(std::string(e.what()).find("ingest") != std::string::npos);
    }
    store.mark_complete("ingest");
    CHECK_NOTHROW(store.require_predecessors("explore"));
}

TEST_CASE("open/reopen preserves state; open_or_init guards config changes") {
    TempDir tmp;
    {
        auto store = RunStore::init(tmp.path(), "r", "cfg-a");
        store.put_artifact("ingest", "corpus.norm", "data\n");
        store.mark_complete("ingest");
    }
    {
        auto store = RunStore::open(tmp.path(), "r");
        CHECK(store.stage_state("ingest") == StageState::complete);
        CHECK(store.get_artifact("ingest", "corpus.norm") == "data\n");
    }
    CHECK_NOTHROW(RunStore::open_or_init(tmp.path(), "r", "cfg-a"));
    CHECK_THROWS_AS(RunStore::open_or_init(tmp.path(), "r", "cfg-b"), ConfigError);
}

TEST_CASE("manifest survives artifacts from multiple stages") {
    TempDir tmp;
    auto store = RunStore::init(tmp.path(), "r", "cfg");
    store.put_artifact("ingest", "corpus.norm", "a\n");
    store.put_artifact("ingest", "split.json", "{}\n", false, 1);
    store.mark_complete("ingest");
    store.put_artifact("explore", "profiles.samples", "s1\ns2\n");
    store.mark_complete("explore");

    auto reopened = RunStore::open(tmp.path(), "r");
    CHECK(reopened.manifest().stages.at("ingest").artifacts.size() == 2);
    CHECK(reopened.manifest().stages.at("explore").artifacts.at(0).n_records == 2);
}
