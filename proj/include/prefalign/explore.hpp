#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/modelgate.hpp"
#include "prefalign/parallel.hpp"
#include "prefalign/prompts.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Profile pool (stage 1)
// ---------------------------------------------------------------------------

/// One generated profile. A permanently failed generation is kept as a
/// missing sample so downstream accounting still sees the full grid.
struct ProfileSample {
    std::string user_id;
    std::string model_id;
    int sample_index = 0;
    int window_w = 0;
    std::string text;
    std::string prompt_digest;  // cache key of the generating request
    bool ok = false;
};

struct ExploreConfig {
    std::vector<ModelSpec> models;
    int samples_per_model = 10;
    double temperature = 1.0;
    std::int64_t seed = 0;

    void validate() const {
        if (models.empty()) throw ConfigError("explore requires at least one generator model");
        if (samples_per_model < 1) throw ConfigError("explore requires samples_per_model >= 1");
        if (temperature <= 0.0) throw ConfigError("exploration temperature must be positive");
        for (const auto& m : models) m.validate();
    }
};

/// Profile-generation prompt for one instance's long history, rendered
/// earliest-first like the prediction prompt.
inline RenderedPrompt profile_prompt_for(const EvalInstance& inst) {
    const std::string history =
        render_history_lines(inst.split.long_window, HistoryOrder::earliest_first);
    return render_profile_prompt(history, inst.user_id, inst.split.w());
}

/// Draw N samples per (instance, model). Output cardinality is always
/// |instances| x |models| x N counting missing samples, sorted by
/// (user_id, model_id, sample_index, window_w) so any worker count and
/// completion order produce the same list.
inline std::vector<ProfileSample> explore_profiles(const std::vector<EvalInstance>& instances,
                                                   const ExploreConfig& cfg, Gateway& gate,
                                                   int workers = 1) {
    cfg.validate();
    const std::size_t n_models = cfg.models.size();
    const std::size_t n = cfg.samples_per_model;
    const std::size_t total = instances.size() * n_models * n;

    std::vector<ProfileSample> out(total);
    parallel_for(total, workers, [&](std::size_t task) {
        const std::size_t inst_i = task / (n_models * n);
        const std::size_t model_i = (task / n) % n_models;
        const int sample_i = static_cast<int>(task % n);
        const EvalInstance& inst = instances[inst_i];
        const ModelSpec& model = cfg.models[model_i];

        CompletionRequest req;
        req.prompt = profile_prompt_for(inst);
        req.temperature = cfg.temperature;
        req.sample_index = sample_i;
        req.seed = cfg.seed;

        ProfileSample& sample = out[task];
        sample.user_id = inst.user_id;
        sample.model_id = model.model_id;
        sample.sample_index = sample_i;
        sample.window_w = static_cast<int>(inst.split.w());
        sample.prompt_digest = cache_key(model, req).hex();
        try {
            sample.text = gate.complete(model, req).text;
            sample.ok = true;
        } catch (const TransportExhausted&) {
            sample.ok = false;
        } catch (const NonRetryableHttp&) {
            sample.ok = false;
        } catch (const MockError&) {
            sample.ok = false;
        }
    });

    std::sort(out.begin(), out.end(), [](const ProfileSample& a, const ProfileSample& b) {
        return std::tie(a.user_id, a.model_id, a.sample_index, a.window_w) <
               std::tie(b.user_id, b.model_id, b.sample_index, b.window_w);
    });
    return out;
}

struct PoolCounts {
    std::size_t ok = 0;
    std::size_t missing = 0;
};

struct PoolSummary {
    std::map<std::string, PoolCounts> per_user;
    std::map<std::string, PoolCounts> per_model;
};

inline PoolSummary pool_summary(const std::vector<ProfileSample>& samples) {
    PoolSummary s;
    for (const auto& p : samples) {
        auto& u = s.per_user[p.user_id];
        auto& m = s.per_model[p.model_id];
        if (p.ok) {
            ++u.ok;
            ++m.ok;
        } else {
            ++u.missing;
            ++m.missing;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Line-record serialization (`profiles.samples`)
// ---------------------------------------------------------------------------

inline ordered_json sample_to_json(const ProfileSample& p) {
    ordered_json j;
    j["user_id"] = p.user_id;
    j["model_id"] = p.model_id;
    j["sample_index"] = p.sample_index;
    j["window_w"] = p.window_w;
    j["text"] = p.text;
    j["prompt_digest"] = p.prompt_digest;
    j["status"] = p.ok ? "ok" : "missing";
    return j;
}

inline ProfileSample sample_from_json(const ordered_json& j) {
    ProfileSample p;
    p.user_id = j.at("user_id").get<std::string>();
    p.model_id = j.at("model_id").get<std::string>();
    p.sample_index = j.at("sample_index").get<int>();
    p.window_w = j.at("window_w").get<int>();
    p.text = j.at("text").get<std::string>();
    p.prompt_digest = j.at("prompt_digest").get<std::string>();
    const std::string status = j.at("status").get<std::string>();
    if (status != "ok" && status != "missing")
        throw ContractError("bad profile sample status: '" + status + "'");
    p.ok = status == "ok";
    return p;
}

inline void write_samples(std::ostream& out, const std::vector<ProfileSample>& samples) {
    for (const auto& p : samples) out << sample_to_json(p).dump() << '\n';
}

inline std::vector<ProfileSample> load_samples(std::istream& in) {
    std::vector<ProfileSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(sample_from_json(ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, "sample", e.what());
        }
    }
    return out;
}

}  // namespace prefalign
