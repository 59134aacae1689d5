#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/evaluate.hpp"
#include "prefalign/explore.hpp"
#include "prefalign/hash.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Positive/negative partition and pair construction (stage 3)
// ---------------------------------------------------------------------------

/// A profile sample joined with its downstream evaluation.
struct EvaluatedSample {
    ProfileSample sample;
    bool correct = false;
};

/// (chosen, rejected) profile pair for one user and one window length.
struct PreferencePair {
    std::string user_id;
    int window_w = 0;
    ProfileRef chosen_ref;
    ProfileRef rejected_ref;
    std::string chosen_text;
    std::string rejected_text;
    SentimentLabel truth = SentimentLabel::neutral;
};

struct PairingPolicy {
    enum class Selection { all, seeded_uniform };

    std::optional<std::size_t> max_pairs_per_user;  // nullopt = unlimited
    bool dedup_identical_texts = false;
    Selection selection = Selection::all;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_pairs_per_user.has_value() && *max_pairs_per_user < 1)
            throw ConfigError("max_pairs_per_user must be >= 1 when bounded");
        if (max_pairs_per_user.has_value() && selection == Selection::all)
            throw ConfigError("a bounded pair cap requires seeded_uniform selection");
    }
};

/// Split one user's evaluated samples (one window length) into correct and
/// incorrect pools, order preserved. Parse failures count as incorrect;
/// missing samples must have been excluded upstream.
inline std::pair<std::vector<EvaluatedSample>, std::vector<EvaluatedSample>> partition(
    const std::vector<EvaluatedSample>& evaluated) {
    std::pair<std::vector<EvaluatedSample>, std::vector<EvaluatedSample>> out;
    for (const auto& e : evaluated) {
        if (!e.sample.ok)
            throw ContractError("partition: missing sample reached pair construction");
        (e.correct ? out.first : out.second).push_back(e);
    }
    return out;
}

/// Cross product of correct x incorrect in (P+ index, P- index) order. An
/// empty side yields no pairs (the user is skipped). Identical-text pairs
/// are optionally dropped, then the seeded cap is applied; selection depends
/// only on (user_id, policy seed).
inline std::vector<PreferencePair> build_pairs(const std::vector<EvaluatedSample>& p_plus,
                                               const std::vector<EvaluatedSample>& p_minus,
                                               const PairingPolicy& policy) {
    policy.validate();
    if (p_plus.empty() || p_minus.empty()) return {};

    std::vector<PreferencePair> pairs;
    pairs.reserve(p_plus.size() * p_minus.size());
    for (const auto& plus : p_plus) {
        for (const auto& minus : p_minus) {
            if (plus.sample.user_id != minus.sample.user_id ||
                plus.sample.window_w != minus.sample.window_w)
                throw ContractError("build_pairs: mixed user or window in one pool");
            if (policy.dedup_identical_texts && plus.sample.text == minus.sample.text) continue;
            PreferencePair p;
            p.user_id = plus.sample.user_id;
            p.window_w = plus.sample.window_w;
            p.chosen_ref = ProfileRef{plus.sample.model_id, plus.sample.sample_index,
                                      plus.sample.window_w};
            p.rejected_ref = ProfileRef{minus.sample.model_id, minus.sample.sample_index,
                                        minus.sample.window_w};
            p.chosen_text = plus.sample.text;
            p.rejected_text = minus.sample.text;
            pairs.push_back(std::move(p));
        }
    }

    if (policy.max_pairs_per_user.has_value() && pairs.size() > *policy.max_pairs_per_user) {
        std::mt19937_64 gen(policy.seed ^ fnv1a64(pairs.front().user_id));
        auto keep = sample_indices(pairs.size(), *policy.max_pairs_per_user, gen);
        std::vector<PreferencePair> capped;
        capped.reserve(keep.size());
        for (std::size_t i : keep) capped.push_back(std::move(pairs[i]));
        pairs = std::move(capped);
    }
    return pairs;
}

/// Convenience wrapper: partition + guard + cross product for one user/window
/// pool, stamping the ground-truth label.
inline std::vector<PreferencePair> pairs_for_user(const std::vector<EvaluatedSample>& evaluated,
                                                  SentimentLabel truth,
                                                  const PairingPolicy& policy) {
    auto [p_plus, p_minus] = partition(evaluated);
    auto pairs = build_pairs(p_plus, p_minus, policy);
    for (auto& p : pairs) p.truth = truth;
    return pairs;
}

// ---------------------------------------------------------------------------
// DPO examples and export
// ---------------------------------------------------------------------------

/// One preference-tuning example: the profile-generation prompt over the
/// user's long history plus the chosen/rejected profile texts.
struct DpoExample {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    SentimentLabel label = SentimentLabel::neutral;
    std::string user_id;
    int window_w = 0;
    ProfileRef chosen_ref;
    ProfileRef rejected_ref;
};

/// Resolves the profile-generation prompt for (user_id, W); throws when the
/// history can no longer produce it.
using PromptLookup = std::function<std::string(const std::string& user_id, int window_w)>;

/// Prompts are re-rendered from the corpus so tuning-time conditioning is
/// identical to generation-time conditioning. Identical-text pairs cannot
/// form a valid example and are dropped.
inline std::vector<DpoExample> to_dpo_examples(const std::vector<PreferencePair>& pairs,
                                               const PromptLookup& prompt_for) {
    std::vector<DpoExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (p.chosen_text == p.rejected_text) continue;
        DpoExample e;
        e.prompt = prompt_for(p.user_id, p.window_w);
        e.chosen = p.chosen_text;
        e.rejected = p.rejected_text;
        e.label = p.truth;
        e.user_id = p.user_id;
        e.window_w = p.window_w;
        e.chosen_ref = p.chosen_ref;
        e.rejected_ref = p.rejected_ref;
        out.push_back(std::move(e));
    }
    return out;
}

enum class ExportFormat { pairwise_records, flat_records };

inline ExportFormat export_format_from_string(std::string_view s) {
    if (s == "pairwise_records") return ExportFormat::pairwise_records;
    if (s == "flat_records") return ExportFormat::flat_records;
    throw ConfigError("unknown export format: '" + std::string(s) + "'");
}

inline ordered_json example_meta(const DpoExample& e) {
    ordered_json meta;
    meta["user_id"] = e.user_id;
    meta["window_w"] = e.window_w;
    meta["chosen_model"] = e.chosen_ref.model_id;
    meta["chosen_index"] = e.chosen_ref.sample_index;
    meta["rejected_model"] = e.rejected_ref.model_id;
    meta["rejected_index"] = e.rejected_ref.sample_index;
    meta["label"] = to_string(e.label);
    return meta;
}

/// Byte-stable export for external preference-tuning trainers. The pairwise
/// form writes {"prompt","chosen","rejected","meta"} per line; the flat form
/// writes two lines per pair (response + preferred flag).
inline void export_examples(std::ostream& out, const std::vector<DpoExample>& examples,
                            ExportFormat format) {
    if (examples.empty()) throw EmptyDataset("export: no preference examples to write");
    for (const auto& e : examples) {
        if (format == ExportFormat::pairwise_records) {
            ordered_json j;
            j["prompt"] = e.prompt;
            j["chosen"] = e.chosen;
            j["rejected"] = e.rejected;
            j["meta"] = example_meta(e);
            out << j.dump() << '\n';
        } else {
            for (bool preferred : {true, false}) {
                ordered_json j;
                j["prompt"] = e.prompt;
                j["response"] = preferred ? e.chosen : e.rejected;
                j["preferred"] = preferred;
                j["meta"] = example_meta(e);
                out << j.dump() << '\n';
            }
        }
    }
}

inline DpoExample example_from_json(const ordered_json& j) {
    DpoExample e;
    e.prompt = j.at("prompt").get<std::string>();
    e.chosen = j.at("chosen").get<std::string>();
    e.rejected = j.at("rejected").get<std::string>();
    const auto& meta = j.at("meta");
    e.label = sentiment_from_string(meta.at("label").get<std::string>());
    e.user_id = meta.at("user_id").get<std::string>();
    e.window_w = meta.at("window_w").get<int>();
    e.chosen_ref = ProfileRef{meta.at("chosen_model").get<std::string>(),
                              meta.at("chosen_index").get<int>(), e.window_w};
    e.rejected_ref = ProfileRef{meta.at("rejected_model").get<std::string>(),
                                meta.at("rejected_index").get<int>(), e.window_w};
    return e;
}

inline std::vector<DpoExample> load_examples(std::istream& in) {
    std::vector<DpoExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(example_from_json(ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, "example", e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PreferencePair line records (`pairs.pref`)
// ---------------------------------------------------------------------------

inline ordered_json pair_to_json(const PreferencePair& p) {
    ordered_json j;
    j["user_id"] = p.user_id;
    j["window_w"] = p.window_w;
    j["chosen_model"] = p.chosen_ref.model_id;
    j["chosen_index"] = p.chosen_ref.sample_index;
    j["rejected_model"] = p.rejected_ref.model_id;
    j["rejected_index"] = p.rejected_ref.sample_index;
    j["chosen_text"] = p.chosen_text;
    j["rejected_text"] = p.rejected_text;
    j["truth"] = to_string(p.truth);
    return j;
}

inline PreferencePair pair_from_json(const ordered_json& j) {
    PreferencePair p;
    p.user_id = j.at("user_id").get<std::string>();
    p.window_w = j.at("window_w").get<int>();
    p.chosen_ref = ProfileRef{j.at("chosen_model").get<std::string>(),
                              j.at("chosen_index").get<int>(), p.window_w};
    p.rejected_ref = ProfileRef{j.at("rejected_model").get<std::string>(),
                                j.at("rejected_index").get<int>(), p.window_w};
    p.chosen_text = j.at("chosen_text").get<std::string>();
    p.rejected_text = j.at("rejected_text").get<std::string>();
    p.truth = sentiment_from_string(j.at("truth").get<std::string>());
    return p;
}

inline void write_pairs(std::ostream& out, const std::vector<PreferencePair>& pairs) {
    for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
}

inline std::vector<PreferencePair> load_pairs(std::istream& in) {
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(pair_from_json(ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, "pair", e.what());
        }
    }
    return out;
}

}  // namespace prefalign
