#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/dpocore.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/explore.hpp"
#include "prefalign/hash.hpp"
#include "prefalign/modelgate.hpp"
#include "prefalign/pairgen.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Declarative pipeline configuration (JSON file)
// ---------------------------------------------------------------------------

struct DatasetConfig {
    DatasetKind kind = DatasetKind::movielens;
    std::string interactions_path;
    std::string items_path;  // attribute sidecar; unused for normalized input
    std::string delimiter;   // empty: kind default
    RatingMap rating_map;
};

struct SplitConfig {
    std::size_t k = 10;
    std::size_t min_history_exclusive = 70;
    std::size_t test_users = 0;
    std::size_t train_users = 0;
    std::vector<std::pair<std::size_t, int>> window_partition;  // (group_size, W)
    bool allow_overlap = false;
    std::map<std::string, std::int64_t> seeds;
};

/// A configured model plus the mock it degrades to under --mock.
struct ModelEntry {
    ModelSpec spec;
    std::optional<ModelSpec> fallback;
};

struct ExploreSection {
    std::vector<ModelEntry> models;
    int samples_per_model = 10;
    double temperature = 1.0;
};

struct EvaluateSection {
    std::string designated_model;  // empty: first explore model
};

struct PairingSection {
    std::size_t max_pairs_per_user = 25;  // 0 = unlimited
    bool dedup_identical_texts = false;
    std::string selection = "seeded_uniform";  // or "all"

    PairingPolicy policy(std::uint64_t seed) const {
        PairingPolicy p;
        if (max_pairs_per_user > 0) p.max_pairs_per_user = max_pairs_per_user;
        p.dedup_identical_texts = dedup_identical_texts;
        p.selection = selection == "all" ? PairingPolicy::Selection::all
                                         : PairingPolicy::Selection::seeded_uniform;
        p.seed = seed;
        return p;
    }
};

struct DpoSection {
    double beta = 1.0;
    std::string ref_mode = "zero";  // "zero" or "constant"
    double ref_delta = 0.0;
    std::uint32_t feature_dim = 1 << 16;
    TrainConfig train;
};

struct GatewaySection {
    std::string cache_dir;  // empty: in-memory cache only
    int max_attempts = 3;
    int backoff_ms = 50;
    int endpoint_concurrency = 4;
};

struct OutputSection {
    std::string root = "runs";
};

struct PipelineConfig {
    DatasetConfig dataset;
    SplitConfig split;
    ExploreSection explore;
    ModelEntry predictor;
    EvaluateSection evaluate;
    PairingSection pairing;
    DpoSection dpo;
    OutputSection output;
    GatewaySection gateway;

    std::vector<ModelSpec> explore_specs() const {
        std::vector<ModelSpec> out;
        out.reserve(explore.models.size());
        for (const auto& m : explore.models) out.push_back(m.spec);
        return out;
    }

    std::string designated_model_id() const {
        if (!evaluate.designated_model.empty()) return evaluate.designated_model;
        if (explore.models.empty()) throw ConfigError("no explore models configured");
        return explore.models.front().spec.model_id;
    }

    /// Distinct window lengths, ascending.
    std::vector<int> windows() const {
        std::vector<int> ws;
        for (const auto& [size, w] : split.window_partition) ws.push_back(w);
        std::sort(ws.begin(), ws.end());
        ws.erase(std::unique(ws.begin(), ws.end()), ws.end());
        return ws;
    }

    std::int64_t seed(const std::string& purpose) const {
        const auto it = split.seeds.find(purpose);
        if (it == split.seeds.end())
            throw ConfigError("missing seed for purpose '" + purpose + "'");
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// Parse / dump
// ---------------------------------------------------------------------------

namespace detail {

inline ordered_json model_spec_to_json(const ModelSpec& m) {
    ordered_json j;
    j["model_id"] = m.model_id;
    j["kind"] = to_string(m.kind);
    j["endpoint"] = m.endpoint;
    j["temperature"] = m.temperature;
    j["max_output_tokens"] = m.max_output_tokens;
    if (m.kind == ModelKind::mock_constant) j["constant_text"] = m.constant_text;
    if (m.kind == ModelKind::mock_scripted) {
        ordered_json script;
        ordered_json rules = ordered_json::array();
        for (const auto& [pat, reply] : m.script.rules)
            rules.push_back(ordered_json::array({pat, reply}));
        script["rules"] = rules;
        if (m.script.default_reply) script["default"] = *m.script.default_reply;
        j["script"] = script;
    }
    return j;
}

inline ModelSpec model_spec_from_json(const ordered_json& j) {
    ModelSpec m;
    m.model_id = j.at("model_id").get<std::string>();
    m.kind = model_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("endpoint")) m.endpoint = j.at("endpoint").get<std::string>();
    if (j.contains("temperature")) m.temperature = j.at("temperature").get<double>();
    if (j.contains("max_output_tokens"))
        m.max_output_tokens = j.at("max_output_tokens").get<int>();
    if (j.contains("constant_text")) m.constant_text = j.at("constant_text").get<std::string>();
    if (j.contains("script")) {
        const auto& script = j.at("script");
        for (const auto& rule : script.at("rules"))
            m.script.rules.emplace_back(rule.at(0).get<std::string>(),
                                        rule.at(1).get<std::string>());
        if (script.contains("default"))
            m.script.default_reply = script.at("default").get<std::string>();
    }
    return m;
}

inline ordered_json model_entry_to_json(const ModelEntry& e) {
    ordered_json j = model_spec_to_json(e.spec);
    if (e.fallback) j["fallback"] = model_spec_to_json(*e.fallback);
    return j;
}

inline ModelEntry model_entry_from_json(const ordered_json& j) {
    ModelEntry e;
    e.spec = model_spec_from_json(j);
    if (j.contains("fallback")) e.fallback = model_spec_from_json(j.at("fallback"));
    return e;
}

}  // namespace detail

inline PipelineConfig parse_config(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        PipelineConfig cfg;
        const auto& ds = j.at("dataset");
        cfg.dataset.kind = dataset_kind_from_string(ds.at("kind").get<std::string>());
        cfg.dataset.interactions_path = ds.at("interactions").get<std::string>();
        if (ds.contains("items")) cfg.dataset.items_path = ds.at("items").get<std::string>();
        if (ds.contains("delimiter")) cfg.dataset.delimiter = ds.at("delimiter").get<std::string>();
        if (ds.contains("rating_map")) {
            const auto& rm = ds.at("rating_map");
            cfg.dataset.rating_map.like_min = rm.at("like_min").get<double>();
            cfg.dataset.rating_map.dislike_max = rm.at("dislike_max").get<double>();
            cfg.dataset.rating_map.scale_max = rm.at("scale_max").get<double>();
        }

        const auto& sp = j.at("split");
        cfg.split.k = sp.at("k").get<std::size_t>();
        cfg.split.min_history_exclusive = sp.at("min_history_exclusive").get<std::size_t>();
        cfg.split.test_users = sp.at("test_users").get<std::size_t>();
        cfg.split.train_users = sp.at("train_users").get<std::size_t>();
        for (const auto& entry : sp.at("window_partition"))
            cfg.split.window_partition.emplace_back(entry.at(0).get<std::size_t>(),
                                                    entry.at(1).get<int>());
        if (sp.contains("allow_overlap"))
            cfg.split.allow_overlap = sp.at("allow_overlap").get<bool>();
        if (sp.contains("seeds"))
            for (const auto& [k, v] : sp.at("seeds").items())
                cfg.split.seeds[k] = v.get<std::int64_t>();
        const std::pair<const char*, std::int64_t> default_seeds[] = {
            {"sample_test", 11}, {"sample_train", 12}, {"explore", 13}, {"pairs", 14},
            {"train", 15}};
        for (const auto& [purpose, seed] : default_seeds) cfg.split.seeds.emplace(purpose, seed);

        const auto& ex = j.at("explore");
        for (const auto& m : ex.at("models"))
            cfg.explore.models.push_back(detail::model_entry_from_json(m));
        cfg.explore.samples_per_model = ex.at("samples_per_model").get<int>();
        if (ex.contains("temperature")) cfg.explore.temperature = ex.at("temperature").get<double>();

        cfg.predictor = detail::model_entry_from_json(j.at("predictor"));

        if (j.contains("evaluate") && j.at("evaluate").contains("designated_model"))
            cfg.evaluate.designated_model =
                j.at("evaluate").at("designated_model").get<std::string>();

        if (j.contains("pairing")) {
            const auto& pa = j.at("pairing");
            if (pa.contains("max_pairs_per_user"))
                cfg.pairing.max_pairs_per_user = pa.at("max_pairs_per_user").get<std::size_t>();
            if (pa.contains("dedup_identical_texts"))
                cfg.pairing.dedup_identical_texts = pa.at("dedup_identical_texts").get<bool>();
            if (pa.contains("selection"))
                cfg.pairing.selection = pa.at("selection").get<std::string>();
        }

        if (j.contains("dpo")) {
            const auto& dp = j.at("dpo");
            if (dp.contains("beta")) cfg.dpo.beta = dp.at("beta").get<double>();
            if (dp.contains("ref_mode")) cfg.dpo.ref_mode = dp.at("ref_mode").get<std::string>();
            if (dp.contains("ref_delta")) cfg.dpo.ref_delta = dp.at("ref_delta").get<double>();
            if (dp.contains("feature_dim"))
                cfg.dpo.feature_dim = dp.at("feature_dim").get<std::uint32_t>();
            if (dp.contains("learning_rate"))
                cfg.dpo.train.learning_rate = dp.at("learning_rate").get<double>();
            if (dp.contains("epochs")) cfg.dpo.train.epochs = dp.at("epochs").get<int>();
            if (dp.contains("l2")) cfg.dpo.train.l2 = dp.at("l2").get<double>();
            if (dp.contains("batch_size")) cfg.dpo.train.batch_size = dp.at("batch_size").get<int>();
        }

        if (j.contains("output") && j.at("output").contains("root"))
            cfg.output.root = j.at("output").at("root").get<std::string>();

        if (j.contains("gateway")) {
            const auto& gw = j.at("gateway");
            if (gw.contains("cache_dir")) cfg.gateway.cache_dir = gw.at("cache_dir").get<std::string>();
            if (gw.contains("max_attempts")) cfg.gateway.max_attempts = gw.at("max_attempts").get<int>();
            if (gw.contains("backoff_ms")) cfg.gateway.backoff_ms = gw.at("backoff_ms").get<int>();
            if (gw.contains("endpoint_concurrency"))
                cfg.gateway.endpoint_concurrency = gw.at("endpoint_concurrency").get<int>();
        }
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
}

/// Canonical re-serialization: every field materialized, fixed order, fixed
/// 2-space indent. Byte-stable for a given parsed config.
inline std::string dump_config(const PipelineConfig& cfg) {
    ordered_json j;
    {
        ordered_json ds;
        ds["kind"] = to_string(cfg.dataset.kind);
        ds["interactions"] = cfg.dataset.interactions_path;
        ds["items"] = cfg.dataset.items_path;
        ds["delimiter"] = cfg.dataset.delimiter;
        ordered_json rm;
        rm["like_min"] = cfg.dataset.rating_map.like_min;
        rm["dislike_max"] = cfg.dataset.rating_map.dislike_max;
        rm["scale_max"] = cfg.dataset.rating_map.scale_max;
        ds["rating_map"] = rm;
        j["dataset"] = ds;
    }
    {
        ordered_json sp;
        sp["k"] = cfg.split.k;
        sp["min_history_exclusive"] = cfg.split.min_history_exclusive;
        sp["test_users"] = cfg.split.test_users;
        sp["train_users"] = cfg.split.train_users;
        ordered_json parts = ordered_json::array();
        for (const auto& [size, w] : cfg.split.window_partition)
            parts.push_back(ordered_json::array({size, w}));
        sp["window_partition"] = parts;
        sp["allow_overlap"] = cfg.split.allow_overlap;
        ordered_json seeds = ordered_json::object();
        for (const auto& [k, v] : cfg.split.seeds) seeds[k] = v;
        sp["seeds"] = seeds;
        j["split"] = sp;
    }
    {
        ordered_json ex;
        ordered_json models = ordered_json::array();
        for (const auto& m : cfg.explore.models) models.push_back(detail::model_entry_to_json(m));
        ex["models"] = models;
        ex["samples_per_model"] = cfg.explore.samples_per_model;
        ex["temperature"] = cfg.explore.temperature;
        j["explore"] = ex;
    }
    j["predictor"] = detail::model_entry_to_json(cfg.predictor);
    {
        ordered_json ev;
        ev["designated_model"] = cfg.evaluate.designated_model;
        j["evaluate"] = ev;
    }
    {
        ordered_json pa;
        pa["max_pairs_per_user"] = cfg.pairing.max_pairs_per_user;
        pa["dedup_identical_texts"] = cfg.pairing.dedup_identical_texts;
        pa["selection"] = cfg.pairing.selection;
        j["pairing"] = pa;
    }
    {
        ordered_json dp;
        dp["beta"] = cfg.dpo.beta;
        dp["ref_mode"] = cfg.dpo.ref_mode;
        dp["ref_delta"] = cfg.dpo.ref_delta;
        dp["feature_dim"] = cfg.dpo.feature_dim;
        dp["learning_rate"] = cfg.dpo.train.learning_rate;
        dp["epochs"] = cfg.dpo.train.epochs;
        dp["l2"] = cfg.dpo.train.l2;
        dp["batch_size"] = cfg.dpo.train.batch_size;
        j["dpo"] = dp;
    }
    {
        ordered_json out;
        out["root"] = cfg.output.root;
        j["output"] = out;
    }
    {
        ordered_json gw;
        gw["cache_dir"] = cfg.gateway.cache_dir;
        gw["max_attempts"] = cfg.gateway.max_attempts;
        gw["backoff_ms"] = cfg.gateway.backoff_ms;
        gw["endpoint_concurrency"] = cfg.gateway.endpoint_concurrency;
        j["gateway"] = gw;
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Validation and derived forms
// ---------------------------------------------------------------------------

inline std::filesystem::path resolve_path(const std::filesystem::path& base_dir,
                                          const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

/// Full structural validation; file paths are resolved against base_dir and
/// must exist.
inline void validate_config(const PipelineConfig& cfg, const std::filesystem::path& base_dir) {
    cfg.dataset.rating_map.validate();
    if (cfg.dataset.interactions_path.empty())
        throw ConfigError("dataset.interactions is required");
    if (!std::filesystem::exists(resolve_path(base_dir, cfg.dataset.interactions_path)))
        throw ConfigError("dataset.interactions not found: " + cfg.dataset.interactions_path);
    if (cfg.dataset.kind != DatasetKind::normalized) {
        if (cfg.dataset.items_path.empty())
            throw ConfigError("dataset.items sidecar is required for kind " +
                              std::string(to_string(cfg.dataset.kind)));
        if (!std::filesystem::exists(resolve_path(base_dir, cfg.dataset.items_path)))
            throw ConfigError("dataset.items not found: " + cfg.dataset.items_path);
    }

    if (cfg.split.k < 1) throw ConfigError("split.k must be >= 1");
    if (cfg.split.window_partition.empty())
        throw ConfigError("split.window_partition must name at least one (group_size, W)");
    std::size_t partition_total = 0;
    for (const auto& [size, w] : cfg.split.window_partition) {
        if (w < 1) throw ConfigError("window length must be >= 1");
        partition_total += size;
    }
    if (partition_total != cfg.split.train_users)
        throw ConfigError("window_partition group sizes sum to " +
                          std::to_string(partition_total) + " but train_users is " +
                          std::to_string(cfg.split.train_users));

    if (cfg.explore.models.empty()) throw ConfigError("explore.models must not be empty");
    for (const auto& m : cfg.explore.models) {
        m.spec.validate();
        if (m.fallback) {
            m.fallback->validate();
            if (m.fallback->kind == ModelKind::live)
                throw ConfigError("fallback for '" + m.spec.model_id + "' must be a mock");
        }
    }
    if (cfg.explore.samples_per_model < 1)
        throw ConfigError("explore.samples_per_model must be >= 1");
    if (cfg.explore.temperature <= 0.0)
        throw ConfigError("explore.temperature must be positive");

    cfg.predictor.spec.validate();
    if (cfg.predictor.spec.temperature != 0.0)
        throw ConfigError("predictor temperature must be 0");
    if (cfg.predictor.fallback) {
        cfg.predictor.fallback->validate();
        if (cfg.predictor.fallback->kind == ModelKind::live)
            throw ConfigError("predictor fallback must be a mock");
        if (cfg.predictor.fallback->temperature != 0.0)
            throw ConfigError("predictor fallback temperature must be 0");
    }

    if (!cfg.evaluate.designated_model.empty()) {
        bool found = false;
        for (const auto& m : cfg.explore.models)
            found = found || m.spec.model_id == cfg.evaluate.designated_model;
        if (!found)
            throw ConfigError("evaluate.designated_model '" + cfg.evaluate.designated_model +
                              "' is not an explore model");
    }

    if (cfg.pairing.selection != "all" && cfg.pairing.selection != "seeded_uniform")
        throw ConfigError("pairing.selection must be 'all' or 'seeded_uniform'");
    cfg.pairing.policy(0).validate();

    if (cfg.dpo.beta <= 0.0) throw ConfigError("dpo.beta must be positive");
    if (cfg.dpo.ref_mode != "zero" && cfg.dpo.ref_mode != "constant")
        throw ConfigError("dpo.ref_mode must be 'zero' or 'constant'");
    if (cfg.dpo.feature_dim < 1) throw ConfigError("dpo.feature_dim must be >= 1");
    cfg.dpo.train.validate();

    if (cfg.output.root.empty()) throw ConfigError("output.root must not be empty");
    if (cfg.gateway.max_attempts < 1) throw ConfigError("gateway.max_attempts must be >= 1");
    if (cfg.gateway.endpoint_concurrency < 1)
        throw ConfigError("gateway.endpoint_concurrency must be >= 1");
}

/// --mock: replace every live spec with its declared mock fallback.
inline void apply_mock_fallbacks(PipelineConfig& cfg) {
    auto swap_in = [](ModelEntry& entry, const char* what) {
        if (entry.spec.kind != ModelKind::live) return;
        if (!entry.fallback)
            throw ConfigError(std::string("--mock: live ") + what + " '" + entry.spec.model_id +
                              "' declares no mock fallback");
        entry.spec = *entry.fallback;
    };
    for (auto& m : cfg.explore.models) swap_in(m, "model");
    swap_in(cfg.predictor, "predictor");
}

/// --seed-override: rederive every purpose seed from one master value.
inline void apply_seed_override(PipelineConfig& cfg, std::int64_t master) {
    for (auto& [purpose, seed] : cfg.split.seeds)
        seed = static_cast<std::int64_t>(
            fnv1a64(purpose, static_cast<std::uint64_t>(master) ^ 0x9e3779b97f4a7c15ULL));
}

}  // namespace prefalign
