#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "prefalign/config.hpp"
#include "prefalign/corpus.hpp"
#include "prefalign/dpocore.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/evaluate.hpp"
#include "prefalign/explore.hpp"
#include "prefalign/modelgate.hpp"
#include "prefalign/pairgen.hpp"
#include "prefalign/prompts.hpp"
#include "prefalign/runstore.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Split descriptor (`split.json` artifact)
// ---------------------------------------------------------------------------

struct SplitInfo {
    std::size_t k = 10;
    std::vector<std::string> test_users;                         // sampled order
    std::vector<std::pair<std::string, int>> train_assignments;  // (user, W)
    std::vector<int> windows;                                    // distinct, ascending
    DatasetStats stats;
    bool allow_overlap = false;
};

inline ordered_json split_to_json(const SplitInfo& s) {
    ordered_json j;
    j["k"] = s.k;
    j["test_users"] = s.test_users;
    ordered_json assignments = ordered_json::array();
    for (const auto& [user, w] : s.train_assignments)
        assignments.push_back(ordered_json::array({user, w}));
    j["train_assignments"] = assignments;
    j["windows"] = s.windows;
    ordered_json st;
    st["n_users"] = s.stats.n_users;
    st["n_items"] = s.stats.n_items;
    st["n_train_rows"] = s.stats.n_train_rows;
    st["n_test_rows"] = s.stats.n_test_rows;
    j["stats"] = st;
    j["allow_overlap"] = s.allow_overlap;
    return j;
}

inline SplitInfo split_from_json(const ordered_json& j) {
    SplitInfo s;
    s.k = j.at("k").get<std::size_t>();
    for (const auto& u : j.at("test_users")) s.test_users.push_back(u.get<std::string>());
    for (const auto& a : j.at("train_assignments"))
        s.train_assignments.emplace_back(a.at(0).get<std::string>(), a.at(1).get<int>());
    for (const auto& w : j.at("windows")) s.windows.push_back(w.get<int>());
    const auto& st = j.at("stats");
    s.stats.n_users = st.at("n_users").get<std::size_t>();
    s.stats.n_items = st.at("n_items").get<std::size_t>();
    s.stats.n_train_rows = st.at("n_train_rows").get<std::size_t>();
    s.stats.n_test_rows = st.at("n_test_rows").get<std::size_t>();
    s.allow_overlap = j.at("allow_overlap").get<bool>();
    return s;
}

/// Assign train users to window groups by round-robin over the partition
/// entries, skipping groups that reached their configured size.
inline std::vector<std::pair<std::string, int>> round_robin_windows(
    const std::vector<std::string>& train_users,
    const std::vector<std::pair<std::size_t, int>>& partition) {
    std::vector<std::size_t> remaining;
    for (const auto& [size, w] : partition) remaining.push_back(size);
    std::vector<std::pair<std::string, int>> out;
    std::size_t cursor = 0;
    for (const auto& user : train_users) {
        std::size_t probed = 0;
        while (probed < partition.size() && remaining[cursor % partition.size()] == 0) {
            ++cursor;
            ++probed;
        }
        const std::size_t slot = cursor % partition.size();
        if (remaining[slot] == 0)
            throw ContractError("round_robin_windows: more users than partition capacity");
        --remaining[slot];
        out.emplace_back(user, partition[slot].second);
        ++cursor;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Instance reconstruction
// ---------------------------------------------------------------------------

struct BuiltInstances {
    std::vector<EvalInstance> test;       // one per (test user, supported W), sorted
    std::vector<EvalInstance> test_once;  // one per test user (10H condition)
    std::vector<EvalInstance> train;      // one per (train user, assigned W), sorted
    std::vector<EvalInstance> explore_set;  // dedup union of test+train by (user, W)
    std::map<std::string, SentimentLabel> truths;
    std::size_t skipped_short = 0;  // users/windows skipped for short history
};

inline int instance_window(const EvalInstance& inst) {
    return static_cast<int>(inst.split.w());
}

inline BuiltInstances build_instances(const std::vector<InteractionRecord>& records,
                                      const SplitInfo& split) {
    std::map<std::string, UserTimeline> timelines;
    for (auto& [user, recs] : group_by_user(records)) timelines.emplace(user, build_timeline(recs));

    BuiltInstances out;
    auto try_make = [&](const std::string& user, int w) -> std::optional<EvalInstance> {
        const auto it = timelines.find(user);
        if (it == timelines.end())
            throw ContractError("instance build: user '" + user + "' missing from corpus");
        try {
            return make_eval_instance(it->second, split.k, static_cast<std::size_t>(w));
        } catch (const InsufficientHistory&) {
            ++out.skipped_short;
            return std::nullopt;
        }
    };

    std::vector<std::string> sorted_test = split.test_users;
    std::sort(sorted_test.begin(), sorted_test.end());
    for (const auto& user : sorted_test) {
        bool have_any = false;
        for (int w : split.windows) {
            if (auto inst = try_make(user, w)) {
                if (!have_any) out.test_once.push_back(*inst);
                have_any = true;
                out.truths.emplace(user, inst->truth);
                out.test.push_back(std::move(*inst));
            }
        }
    }

    std::vector<std::pair<std::string, int>> sorted_train = split.train_assignments;
    std::sort(sorted_train.begin(), sorted_train.end());
    for (const auto& [user, w] : sorted_train) {
        if (auto inst = try_make(user, w)) {
            out.truths.emplace(user, inst->truth);
            out.train.push_back(std::move(*inst));
        }
    }

    std::set<std::pair<std::string, int>> seen;
    for (const auto* list : {&out.test, &out.train}) {
        for (const auto& inst : *list) {
            if (seen.emplace(inst.user_id, instance_window(inst)).second)
                out.explore_set.push_back(inst);
        }
    }
    std::sort(out.explore_set.begin(), out.explore_set.end(),
              [](const EvalInstance& a, const EvalInstance& b) {
                  return std::make_pair(a.user_id, instance_window(a)) <
                         std::make_pair(b.user_id, instance_window(b));
              });
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline context and stages
// ---------------------------------------------------------------------------

struct PipelineContext {
    PipelineConfig cfg;
    std::filesystem::path base_dir;  // config directory; relative paths resolve here
    std::shared_ptr<RunStore> store;
    std::shared_ptr<Gateway> gate;
    int workers = 1;
    bool force = false;
};

inline std::shared_ptr<Gateway> make_gateway(const PipelineConfig& cfg,
                                             const std::filesystem::path& base_dir,
                                             TransportFn transport = {},
                                             RequestObserver observer = {}) {
    GatewayOptions opts;
    if (!cfg.gateway.cache_dir.empty())
        opts.cache_dir = resolve_path(base_dir, cfg.gateway.cache_dir);
    opts.max_attempts = cfg.gateway.max_attempts;
    opts.backoff_base = std::chrono::milliseconds(cfg.gateway.backoff_ms);
    opts.per_endpoint_concurrency = cfg.gateway.endpoint_concurrency;
    opts.transport = std::move(transport);
    opts.on_request = std::move(observer);
    return std::make_shared<Gateway>(std::move(opts));
}

inline std::vector<InteractionRecord> load_dataset(const PipelineConfig& cfg,
                                                   const std::filesystem::path& base_dir) {
    const auto interactions = resolve_path(base_dir, cfg.dataset.interactions_path);
    std::ifstream in(interactions);
    if (!in.good()) throw ConfigError("cannot open dataset: " + interactions.string());
    if (cfg.dataset.kind == DatasetKind::normalized) return load_normalized(in);
    const auto items_path = resolve_path(base_dir, cfg.dataset.items_path);
    std::ifstream items_in(items_path);
    if (!items_in.good()) throw ConfigError("cannot open item sidecar: " + items_path.string());
    const auto items = load_item_attributes(items_in, cfg.dataset.kind, cfg.dataset.delimiter);
    return load_interactions(in, cfg.dataset.kind, items, cfg.dataset.rating_map,
                             cfg.dataset.delimiter);
}

// -- helpers over artifacts ---------------------------------------------------

inline std::vector<InteractionRecord> corpus_artifact(const RunStore& store) {
    std::istringstream in(store.get_artifact("ingest", "corpus.norm"));
    return load_normalized(in);
}

inline SplitInfo split_artifact(const RunStore& store) {
    return split_from_json(ordered_json::parse(store.get_artifact("ingest", "split.json")));
}

inline std::vector<ProfileSample> samples_artifact(const RunStore& store) {
    std::istringstream in(store.get_artifact("explore", "profiles.samples"));
    return load_samples(in);
}

inline std::string condition_id(std::size_t k) { return std::to_string(k) + "H"; }

inline std::string condition_id(std::size_t k, int w) {
    return std::to_string(k) + "H+" + std::to_string(w) + "P";
}

// -- ingest -------------------------------------------------------------------

inline void run_ingest(PipelineContext& ctx) {
    const auto& cfg = ctx.cfg;
    const auto records = load_dataset(cfg, ctx.base_dir);
    const auto eligible = filter_users(records, cfg.split.min_history_exclusive);
    if (cfg.split.test_users > eligible.size())
        throw ConfigError("test_users=" + std::to_string(cfg.split.test_users) + " but only " +
                          std::to_string(eligible.size()) + " users pass the history filter");

    SplitInfo split;
    split.k = cfg.split.k;
    split.allow_overlap = cfg.split.allow_overlap;
    split.test_users = sample_users(eligible, cfg.split.test_users, cfg.seed("sample_test"));

    std::vector<std::string> pool;
    if (cfg.split.allow_overlap) {
        pool = eligible;
    } else {
        std::set<std::string> test_set(split.test_users.begin(), split.test_users.end());
        for (const auto& u : eligible)
            if (!test_set.count(u)) pool.push_back(u);
    }
    if (cfg.split.train_users > pool.size())
        throw ConfigError("train_users=" + std::to_string(cfg.split.train_users) +
                          " but only " + std::to_string(pool.size()) +
                          " eligible users remain after test sampling");
    const auto train =
        sample_users(pool, cfg.split.train_users, cfg.seed("sample_train"));
    split.train_assignments = round_robin_windows(train, cfg.split.window_partition);
    split.windows = cfg.windows();
    split.stats = stats(records);
    split.stats.n_train_rows = train.size();
    split.stats.n_test_rows = split.test_users.size();

    std::set<std::string> selected(split.test_users.begin(), split.test_users.end());
    for (const auto& [user, w] : split.train_assignments) selected.insert(user);
    std::vector<InteractionRecord> kept;
    for (const auto& r : records)
        if (selected.count(r.user_id)) kept.push_back(r);

    std::ostringstream corpus_out;
    write_normalized(corpus_out, kept);
    ctx.store->put_artifact("ingest", "corpus.norm", corpus_out.str(), ctx.force);
    ctx.store->put_artifact("ingest", "split.json", split_to_json(split).dump(2) + "\n",
                            ctx.force, 1);
}

// -- explore ------------------------------------------------------------------

inline void run_explore(PipelineContext& ctx) {
    const auto records = corpus_artifact(*ctx.store);
    const auto split = split_artifact(*ctx.store);
    const auto built = build_instances(records, split);

    ExploreConfig ecfg;
    ecfg.models = ctx.cfg.explore_specs();
    ecfg.samples_per_model = ctx.cfg.explore.samples_per_model;
    ecfg.temperature = ctx.cfg.explore.temperature;
    ecfg.seed = ctx.cfg.seed("explore");

    const auto samples = explore_profiles(built.explore_set, ecfg, *ctx.gate, ctx.workers);
    std::ostringstream out;
    write_samples(out, samples);
    ctx.store->put_artifact("explore", "profiles.samples", out.str(), ctx.force);
}

// -- evaluate -----------------------------------------------------------------

inline void run_evaluate(PipelineContext& ctx) {
    const auto records = corpus_artifact(*ctx.store);
    const auto split = split_artifact(*ctx.store);
    const auto samples = samples_artifact(*ctx.store);
    const auto built = build_instances(records, split);

    const ModelSpec& predictor = ctx.cfg.predictor.spec;
    if (predictor.kind == ModelKind::mock_oracle) {
        std::unordered_map<std::string, SentimentLabel> table(built.truths.begin(),
                                                              built.truths.end());
        ctx.gate->set_oracle_table(std::move(table));
    }

    auto emit = [&](const std::string& id, const ConditionResult& result) {
        std::ostringstream out;
        write_outcomes(out, result.outcomes);
        ctx.store->put_artifact("evaluate", "outcomes." + id, out.str(), ctx.force);
        ctx.store->put_artifact("evaluate", "metrics." + id,
                                metrics_to_json(result.report).dump(2) + "\n", ctx.force, 1);
    };

    if (!built.test_once.empty()) {
        Condition base;
        base.id = condition_id(split.k);
        base.k = split.k;
        base.profile_source = ProfileSource::none;
        emit(base.id, run_condition(base, built.test_once, samples, predictor, *ctx.gate,
                                    ctx.workers));

        for (int w : split.windows) {
            std::vector<EvalInstance> at_w;
            for (const auto& inst : built.test)
                if (instance_window(inst) == w) at_w.push_back(inst);
            if (at_w.empty()) continue;
            Condition cond;
            cond.id = condition_id(split.k, w);
            cond.k = split.k;
            cond.window_w = w;
            cond.profile_source = ProfileSource::fixed;
            cond.designated_model = ctx.cfg.designated_model_id();
            emit(cond.id, run_condition(cond, at_w, samples, predictor, *ctx.gate, ctx.workers));
        }
    }

    // Per-sample evaluation of the training pool; feeds pair construction.
    Condition each;
    each.id = "train";
    each.k = split.k;
    each.profile_source = ProfileSource::each;
    if (built.train.empty()) {
        ctx.store->put_artifact("evaluate", "outcomes.train", "", ctx.force, 0);
    } else {
        const auto result =
            run_condition(each, built.train, samples, predictor, *ctx.gate, ctx.workers);
        std::ostringstream out;
        write_outcomes(out, result.outcomes);
        ctx.store->put_artifact("evaluate", "outcomes.train", out.str(), ctx.force);
        ctx.store->put_artifact("evaluate", "metrics.train",
                                metrics_to_json(result.report).dump(2) + "\n", ctx.force, 1);
    }
}

// -- pairs --------------------------------------------------------------------

inline void run_pairs(PipelineContext& ctx) {
    const auto split = split_artifact(*ctx.store);
    const auto samples = samples_artifact(*ctx.store);
    std::istringstream outcomes_in(ctx.store->get_artifact("evaluate", "outcomes.train"));
    const auto outcomes = load_outcomes(outcomes_in);

    // (user, W, model, sample_index) -> (correct, truth)
    std::map<std::tuple<std::string, int, std::string, int>, std::pair<bool, SentimentLabel>>
        outcome_index;
    for (const auto& o : outcomes) {
        if (!o.profile_ref) continue;
        outcome_index[{o.user_id, o.profile_ref->window_w, o.profile_ref->model_id,
                       o.profile_ref->sample_index}] = {o.correct, o.truth};
    }

    std::map<std::pair<std::string, int>, std::vector<const ProfileSample*>> pool;
    std::set<std::pair<std::string, int>> train_keys;
    for (const auto& [user, w] : split.train_assignments) train_keys.emplace(user, w);
    for (const auto& s : samples)
        if (s.ok && train_keys.count({s.user_id, s.window_w}))
            pool[{s.user_id, s.window_w}].push_back(&s);

    const PairingPolicy policy =
        ctx.cfg.pairing.policy(static_cast<std::uint64_t>(ctx.cfg.seed("pairs")));

    std::vector<PreferencePair> all_pairs;
    for (const auto& [key, sample_ptrs] : pool) {
        std::vector<EvaluatedSample> evaluated;
        std::optional<SentimentLabel> truth;
        for (const ProfileSample* s : sample_ptrs) {
            const auto it = outcome_index.find(
                {s->user_id, s->window_w, s->model_id, s->sample_index});
            if (it == outcome_index.end())
                throw ContractError("pairs: sample " + s->user_id + "/" + s->model_id + "#" +
                                    std::to_string(s->sample_index) + " lacks an outcome");
            evaluated.push_back({*s, it->second.first});
            truth = it->second.second;
        }
        if (evaluated.empty()) continue;
        auto pairs = pairs_for_user(evaluated, *truth, policy);
        all_pairs.insert(all_pairs.end(), pairs.begin(), pairs.end());
    }

    std::ostringstream out;
    write_pairs(out, all_pairs);
    ctx.store->put_artifact("pairs", "pairs.pref", out.str(), ctx.force, all_pairs.size());
}

// -- export -------------------------------------------------------------------

inline PromptLookup make_prompt_lookup(const std::vector<InteractionRecord>& records,
                                       std::size_t k) {
    auto timelines = std::make_shared<std::map<std::string, UserTimeline>>();
    for (auto& [user, recs] : group_by_user(records)) timelines->emplace(user, build_timeline(recs));
    return [timelines, k](const std::string& user, int w) -> std::string {
        const auto it = timelines->find(user);
        if (it == timelines->end())
            throw ContractError("provenance: user '" + user + "' no longer in corpus");
        try {
            const auto inst = make_eval_instance(it->second, k, static_cast<std::size_t>(w));
            return profile_prompt_for(inst).text;
        } catch (const InsufficientHistory& e) {
            throw ContractError("provenance: history for '" + user + "' shrank below W=" +
                                std::to_string(w) + " (" + e.what() + ")");
        }
    };
}

inline void run_export(PipelineContext& ctx) {
    const auto records = corpus_artifact(*ctx.store);
    const auto split = split_artifact(*ctx.store);
    std::istringstream pairs_in(ctx.store->get_artifact("pairs", "pairs.pref"));
    const auto pairs = load_pairs(pairs_in);
    const auto examples = to_dpo_examples(pairs, make_prompt_lookup(records, split.k));
    std::ostringstream out;
    export_examples(out, examples, ExportFormat::pairwise_records);
    ctx.store->put_artifact("export", "pairs.dpo", out.str(), ctx.force, examples.size());
}

// -- toy dpo ------------------------------------------------------------------

inline void run_toydpo(PipelineContext& ctx) {
    std::istringstream in(ctx.store->get_artifact("export", "pairs.dpo"));
    const auto examples = load_examples(in);
    TrainConfig tc = ctx.cfg.dpo.train;
    tc.seed = ctx.cfg.seed("train");
    const double ref_delta = ctx.cfg.dpo.ref_mode == "constant" ? ctx.cfg.dpo.ref_delta : 0.0;
    const auto result =
        train(examples, tc, ctx.cfg.dpo.feature_dim, ctx.cfg.dpo.beta, ref_delta);
    ctx.store->put_artifact("toy-dpo", "scorer.bin", serialize_scorer(result.scorer), ctx.force,
                            1);
    ctx.store->put_artifact("toy-dpo", "trace.txt", format_trace(result.trace), ctx.force,
                            result.trace.size());
}

// ---------------------------------------------------------------------------
// Stage dispatch
// ---------------------------------------------------------------------------

/// Runs one stage if pending (or failed), marking completion/failure in the
/// manifest. Returns false when the stage was already complete and untouched.
inline bool ensure_stage(PipelineContext& ctx, const std::string& stage) {
    if (ctx.store->stage_state(stage) == StageState::complete) {
        if (!ctx.force) return false;
        ctx.store->reset_stage(stage);
    }
    ctx.store->require_predecessors(stage);
    try {
        if (stage == "ingest")
            run_ingest(ctx);
        else if (stage == "explore")
            run_explore(ctx);
        else if (stage == "evaluate")
            run_evaluate(ctx);
        else if (stage == "pairs")
            run_pairs(ctx);
        else if (stage == "export")
            run_export(ctx);
        else if (stage == "toy-dpo")
            run_toydpo(ctx);
        else
            throw ContractError("unknown stage: '" + stage + "'");
    } catch (const std::exception& e) {
        ctx.store->mark_failed(stage, e.what());
        throw;
    }
    ctx.store->mark_complete(stage);
    return true;
}

inline void run_all_stages(PipelineContext& ctx) {
    while (auto next = ctx.store->resume()) ensure_stage(ctx, *next);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Condition table plus estimated-token summary, 4 decimal places.
inline std::string render_report(const RunStore& store) {
    const auto split = split_artifact(store);
    std::vector<std::string> condition_ids;
    condition_ids.push_back(condition_id(split.k));
    for (int w : split.windows) condition_ids.push_back(condition_id(split.k, w));

    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %10s %13s %10s %8s\n", "condition", "acc",
                  "weighted-F1", "macro-F1", "n");
    out += buf;
    for (const auto& id : condition_ids) {
        const auto metrics = metrics_from_json(
            ordered_json::parse(store.get_artifact("evaluate", "metrics." + id)));
        std::snprintf(buf, sizeof(buf), "%-12s %10.4f %13.4f %10.4f %8lld\n", id.c_str(),
                      metrics.accuracy, metrics.weighted_f1, metrics.macro_f1,
                      static_cast<long long>(metrics.n));
        out += buf;
    }

    // Mean estimated tokens: long-history text vs generated profile, per W.
    const auto records = corpus_artifact(store);
    const auto samples = samples_artifact(store);
    const auto built = build_instances(records, split);
    out += "\nestimated tokens (mean, ceil(bytes/4))\n";
    std::snprintf(buf, sizeof(buf), "%-12s %14s %14s\n", "window", "history", "profile");
    out += buf;
    for (int w : split.windows) {
        double hist_sum = 0.0;
        std::size_t hist_n = 0;
        for (const auto& inst : built.explore_set) {
            if (instance_window(inst) != w) continue;
            hist_sum += static_cast<double>(estimate_tokens(
                render_history_lines(inst.split.long_window, HistoryOrder::earliest_first)));
            ++hist_n;
        }
        double prof_sum = 0.0;
        std::size_t prof_n = 0;
        for (const auto& s : samples) {
            if (!s.ok || s.window_w != w) continue;
            prof_sum += static_cast<double>(estimate_tokens(s.text));
            ++prof_n;
        }
        std::snprintf(buf, sizeof(buf), "%-12d %14.4f %14.4f\n", w,
                      hist_n ? hist_sum / static_cast<double>(hist_n) : 0.0,
                      prof_n ? prof_sum / static_cast<double>(prof_n) : 0.0);
        out += buf;
    }
    return out;
}

}  // namespace prefalign
