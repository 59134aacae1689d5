#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/explore.hpp"
#include "prefalign/modelgate.hpp"
#include "prefalign/parallel.hpp"
#include "prefalign/prompts.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Sentiment parsing
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool contains_whole_word(const std::string& text, const std::string& word) {
    std::size_t pos = 0;
    while ((pos = text.find(word, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
        const std::size_t end = pos + word.size();
        const bool right_ok = end == text.size() || !is_word_char(text[end]);
        if (left_ok && right_ok) return true;
        pos += 1;
    }
    return false;
}

}  // namespace detail

/// Lenient one-word parser. Exact label after trimming whitespace and
/// terminal punctuation wins; otherwise a single label occurring as a whole
/// word anywhere wins; two different labels (or none) is a parse failure.
inline std::optional<SentimentLabel> parse_sentiment(const std::string& raw) {
    std::string s = detail::lower(raw);
    auto is_ws = [](unsigned char c) { return std::isspace(c) != 0; };
    auto is_terminal = [](char c) {
        return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' ||
               c == '"' || c == '\'';
    };
    std::size_t begin = 0, end = s.size();
    while (begin < end && is_ws(s[begin])) ++begin;
    while (end > begin && (is_ws(s[end - 1]) || is_terminal(s[end - 1]))) --end;
    const std::string trimmed = s.substr(begin, end - begin);
    for (SentimentLabel label : kAllLabels)
        if (trimmed == to_string(label)) return label;

    std::optional<SentimentLabel> found;
    for (SentimentLabel label : kAllLabels) {
        if (detail::contains_whole_word(s, to_string(label))) {
            if (found.has_value()) return std::nullopt;  // ambiguous
            found = label;
        }
    }
    return found;
}

// ---------------------------------------------------------------------------
// Prediction outcomes
// ---------------------------------------------------------------------------

struct ProfileRef {
    std::string model_id;
    int sample_index = 0;
    int window_w = 0;
};

struct PredictionOutcome {
    std::string user_id;
    std::optional<ProfileRef> profile_ref;
    std::string raw_text;
    std::optional<SentimentLabel> parsed;
    SentimentLabel truth = SentimentLabel::neutral;
    bool correct = false;
    std::string note;  // transport note when the gateway gave up
};

/// Prediction prompt for one instance: K recent records earliest-first, the
/// optional profile text, and the target item line.
inline RenderedPrompt prediction_prompt_for(const EvalInstance& inst,
                                            const std::optional<std::string>& profile_text) {
    const std::string history =
        render_history_lines(inst.split.recent, HistoryOrder::earliest_first);
    return render_prediction_prompt(history, profile_text, render_item_line(inst.target),
                                    inst.user_id, inst.split.k());
}

/// Run the downstream predictor once. Gateway exhaustion never aborts a
/// batch: the outcome is recorded as a parse failure with a note.
inline PredictionOutcome predict(const EvalInstance& inst, const ProfileSample* profile,
                                 const ModelSpec& predictor, Gateway& gate) {
    if (predictor.temperature != 0.0)
        throw ContractError("predictor temperature must be 0, got " +
                            std::to_string(predictor.temperature));
    if (profile != nullptr && !profile->ok)
        throw ContractError("predict: profile sample has status=missing");

    PredictionOutcome out;
    out.user_id = inst.user_id;
    out.truth = inst.truth;
    std::optional<std::string> profile_text;
    if (profile != nullptr) {
        profile_text = profile->text;
        out.profile_ref = ProfileRef{profile->model_id, profile->sample_index, profile->window_w};
    }

    CompletionRequest req;
    req.prompt = prediction_prompt_for(inst, profile_text);
    req.temperature = 0.0;
    req.sample_index = 0;
    req.seed = 0;
    try {
        out.raw_text = gate.complete(predictor, req).text;
        out.parsed = parse_sentiment(out.raw_text);
    } catch (const TransportExhausted& e) {
        out.note = e.what();
    } catch (const NonRetryableHttp& e) {
        out.note = e.what();
    } catch (const MockError& e) {
        out.note = e.what();
    }
    out.correct = out.parsed.has_value() && *out.parsed == out.truth;
    return out;
}

// ---------------------------------------------------------------------------
// Confusion matrix and metrics
// ---------------------------------------------------------------------------

/// 3x3 grid indexed (truth, predicted) plus per-truth parse-failure counts.
/// Failures sit in the truth row (they cost recall) but in no predicted
/// column.
struct ConfusionMatrix {
    std::int64_t counts[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    std::int64_t failures[3] = {0, 0, 0};

    std::int64_t parse_failures() const { return failures[0] + failures[1] + failures[2]; }

    std::int64_t grid_total() const {
        std::int64_t t = 0;
        for (const auto& row : counts)
            for (std::int64_t c : row) t += c;
        return t;
    }

    std::int64_t total_outcomes() const { return grid_total() + parse_failures(); }

    std::int64_t diagonal() const { return counts[0][0] + counts[1][1] + counts[2][2]; }

    std::int64_t row_total(int truth) const {
        return counts[truth][0] + counts[truth][1] + counts[truth][2] + failures[truth];
    }

    std::int64_t column_total(int predicted) const {
        return counts[0][predicted] + counts[1][predicted] + counts[2][predicted];
    }
};

inline ConfusionMatrix confusion(const std::vector<PredictionOutcome>& outcomes) {
    ConfusionMatrix cm;
    for (const auto& o : outcomes) {
        const int t = static_cast<int>(o.truth);
        if (o.parsed.has_value())
            ++cm.counts[t][static_cast<int>(*o.parsed)];
        else
            ++cm.failures[t];
    }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total_outcomes();
    if (total == 0) throw UndefinedMetric("accuracy over zero outcomes");
    return static_cast<double>(cm.diagonal()) / static_cast<double>(total);
}

namespace detail {

inline double f1_for_class(const ConfusionMatrix& cm, int c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double col = static_cast<double>(cm.column_total(c));
    const double row = static_cast<double>(cm.row_total(c));
    const double precision = col > 0 ? tp / col : 0.0;
    const double recall = row > 0 ? tp / row : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

/// Per-class F1 averaged with weights proportional to true-class support
/// (parse failures included in support).
inline double weighted_f1(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total_outcomes();
    if (total == 0) throw UndefinedMetric("weighted_f1 over zero outcomes");
    double sum = 0.0;
    for (int c = 0; c < 3; ++c)
        sum += (static_cast<double>(cm.row_total(c)) / static_cast<double>(total)) *
               detail::f1_for_class(cm, c);
    return sum;
}

/// Per-class F1 averaged uniformly over the three classes.
inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total_outcomes() == 0) throw UndefinedMetric("macro_f1 over zero outcomes");
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) sum += detail::f1_for_class(cm, c);
    return sum / 3.0;
}

struct MetricsReport {
    std::string condition_id;
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double macro_f1 = 0.0;
    std::int64_t n = 0;
    std::int64_t parse_failures = 0;
};

inline MetricsReport metrics_from(const std::string& condition_id,
                                  const std::vector<PredictionOutcome>& outcomes) {
    if (outcomes.empty()) throw UndefinedMetric("no outcomes for condition " + condition_id);
    const ConfusionMatrix cm = confusion(outcomes);
    MetricsReport r;
    r.condition_id = condition_id;
    r.accuracy = accuracy(cm);
    r.weighted_f1 = weighted_f1(cm);
    r.macro_f1 = macro_f1(cm);
    r.n = cm.total_outcomes();
    r.parse_failures = cm.parse_failures();
    return r;
}

// ---------------------------------------------------------------------------
// Condition runner
// ---------------------------------------------------------------------------

enum class ProfileSource { none, fixed, each };

/// One experimental condition: "10H" (no profile) or "10H+<W>P" with
/// profiles generated from a W-long window. `fixed` evaluates the designated
/// model's sample 0 per user; `each` evaluates every ok sample (the pair
/// construction input).
struct Condition {
    std::string id;
    std::size_t k = 10;
    std::optional<int> window_w;
    ProfileSource profile_source = ProfileSource::none;
    std::string designated_model;  // for fixed; empty = first model seen
    int fixed_sample_index = 0;
};

struct ConditionResult {
    MetricsReport report;
    std::vector<PredictionOutcome> outcomes;
};

namespace detail {

/// (user_id, window_w) -> ok samples in pool order.
inline std::map<std::pair<std::string, int>, std::vector<const ProfileSample*>> index_ok_samples(
    const std::vector<ProfileSample>& samples) {
    std::map<std::pair<std::string, int>, std::vector<const ProfileSample*>> idx;
    for (const auto& s : samples)
        if (s.ok) idx[{s.user_id, s.window_w}].push_back(&s);
    return idx;
}

}  // namespace detail

inline ConditionResult run_condition(const Condition& cond,
                                     const std::vector<EvalInstance>& instances,
                                     const std::vector<ProfileSample>& samples,
                                     const ModelSpec& predictor, Gateway& gate,
                                     int workers = 1) {
    if (cond.profile_source == ProfileSource::fixed && !cond.window_w.has_value())
        throw ConfigError("condition '" + cond.id + "' needs a window length");

    // Work list: (instance, sample or null), one prediction each. `each`
    // mode follows every instance's own window when none is pinned.
    std::vector<std::pair<const EvalInstance*, const ProfileSample*>> work;
    if (cond.profile_source == ProfileSource::none) {
        for (const auto& inst : instances) work.emplace_back(&inst, nullptr);
    } else {
        auto idx = detail::index_ok_samples(samples);
        for (const auto& inst : instances) {
            const int w =
                cond.window_w.has_value() ? *cond.window_w : static_cast<int>(inst.split.w());
            auto it = idx.find({inst.user_id, w});
            if (it == idx.end()) {
                if (cond.profile_source == ProfileSource::each) continue;  // all missing
                throw ConfigError("condition '" + cond.id + "': no ok profiles for user '" +
                                  inst.user_id + "' at W=" + std::to_string(w));
            }
            if (cond.profile_source == ProfileSource::fixed) {
                const ProfileSample* chosen = nullptr;
                for (const ProfileSample* s : it->second) {
                    if (!cond.designated_model.empty() && s->model_id != cond.designated_model)
                        continue;
                    if (s->sample_index == cond.fixed_sample_index) {
                        chosen = s;
                        break;
                    }
                }
                if (chosen == nullptr)
                    throw ConfigError("condition '" + cond.id + "': designated sample missing for user '" +
                                      inst.user_id + "'");
                work.emplace_back(&inst, chosen);
            } else {
                for (const ProfileSample* s : it->second) work.emplace_back(&inst, s);
            }
        }
    }

    std::vector<PredictionOutcome> outcomes(work.size());
    parallel_for(work.size(), workers, [&](std::size_t i) {
        outcomes[i] = predict(*work[i].first, work[i].second, predictor, gate);
    });

    // Canonical order regardless of scheduling.
    std::sort(outcomes.begin(), outcomes.end(),
              [](const PredictionOutcome& a, const PredictionOutcome& b) {
                  auto key = [](const PredictionOutcome& o) {
                      const auto& r = o.profile_ref;
                      return std::make_tuple(o.user_id, r ? r->window_w : -1,
                                             r ? r->model_id : std::string(),
                                             r ? r->sample_index : -1);
                  };
                  return key(a) < key(b);
              });

    ConditionResult result;
    result.outcomes = std::move(outcomes);
    result.report = metrics_from(cond.id, result.outcomes);
    return result;
}

// ---------------------------------------------------------------------------
// Line-record serialization (`outcomes.*`, `metrics.*`)
// ---------------------------------------------------------------------------

inline ordered_json outcome_to_json(const PredictionOutcome& o) {
    ordered_json j;
    j["user_id"] = o.user_id;
    if (o.profile_ref.has_value()) {
        ordered_json ref;
        ref["model_id"] = o.profile_ref->model_id;
        ref["sample_index"] = o.profile_ref->sample_index;
        ref["window_w"] = o.profile_ref->window_w;
        j["profile_ref"] = ref;
    } else {
        j["profile_ref"] = nullptr;
    }
    j["raw_text"] = o.raw_text;
    j["parsed"] = o.parsed.has_value() ? ordered_json(to_string(*o.parsed)) : ordered_json(nullptr);
    j["truth"] = to_string(o.truth);
    j["correct"] = o.correct;
    j["note"] = o.note;
    return j;
}

inline PredictionOutcome outcome_from_json(const ordered_json& j) {
    PredictionOutcome o;
    o.user_id = j.at("user_id").get<std::string>();
    if (!j.at("profile_ref").is_null()) {
        const auto& ref = j.at("profile_ref");
        o.profile_ref = ProfileRef{ref.at("model_id").get<std::string>(),
                                   ref.at("sample_index").get<int>(),
                                   ref.at("window_w").get<int>()};
    }
    o.raw_text = j.at("raw_text").get<std::string>();
    if (!j.at("parsed").is_null())
        o.parsed = sentiment_from_string(j.at("parsed").get<std::string>());
    o.truth = sentiment_from_string(j.at("truth").get<std::string>());
    o.correct = j.at("correct").get<bool>();
    o.note = j.at("note").get<std::string>();
    return o;
}

inline void write_outcomes(std::ostream& out, const std::vector<PredictionOutcome>& outcomes) {
    for (const auto& o : outcomes) out << outcome_to_json(o).dump() << '\n';
}

inline std::vector<PredictionOutcome> load_outcomes(std::istream& in) {
    std::vector<PredictionOutcome> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(outcome_from_json(ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, "outcome", e.what());
        }
    }
    return out;
}

inline ordered_json metrics_to_json(const MetricsReport& r) {
    ordered_json j;
    j["condition_id"] = r.condition_id;
    j["accuracy"] = r.accuracy;
    j["weighted_f1"] = r.weighted_f1;
    j["macro_f1"] = r.macro_f1;
    j["n"] = r.n;
    j["parse_failures"] = r.parse_failures;
    return j;
}

inline MetricsReport metrics_from_json(const ordered_json& j) {
    MetricsReport r;
    r.condition_id = j.at("condition_id").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.n = j.at("n").get<std::int64_t>();
    r.parse_failures = j.at("parse_failures").get<std::int64_t>();
    return r;
}

}  // namespace prefalign
