#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/hash.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline const std::array<const char*, 6>& pipeline_stages() {
    static const std::array<const char*, 6> stages = {"ingest",  "explore", "evaluate",
                                                      "pairs",   "export",  "toy-dpo"};
    return stages;
}

enum class StageState { pending, complete, failed };

struct ArtifactRecord {
    std::string path;  // relative to the run directory
    std::string digest;
    std::size_t n_records = 0;
};

struct StageRecord {
    StageState state = StageState::pending;
    std::string note;  // failure note
    std::vector<ArtifactRecord> artifacts;
};

struct RunManifest {
    std::string run_id;
    std::string config_digest;
    std::int64_t created_at = 0;
    std::map<std::string, std::int64_t> seeds;
    std::map<std::string, StageRecord> stages;
};

namespace detail {

inline ordered_json manifest_to_json(const RunManifest& m) {
    ordered_json j;
    j["run_id"] = m.run_id;
    j["config_digest"] = m.config_digest;
    j["created_at"] = m.created_at;
    ordered_json seeds = ordered_json::object();
    for (const auto& [k, v] : m.seeds) seeds[k] = v;
    j["seeds"] = seeds;
    ordered_json stages = ordered_json::object();
    for (const char* name : pipeline_stages()) {
        const auto it = m.stages.find(name);
        const StageRecord rec = it == m.stages.end() ? StageRecord{} : it->second;
        ordered_json s;
        switch (rec.state) {
            case StageState::pending: s["state"] = "pending"; break;
            case StageState::complete: s["state"] = "complete"; break;
            case StageState::failed: s["state"] = "failed"; break;
        }
        if (!rec.note.empty()) s["note"] = rec.note;
        ordered_json arts = ordered_json::array();
        for (const auto& a : rec.artifacts) {
            ordered_json aj;
            aj["path"] = a.path;
            aj["digest"] = a.digest;
            aj["n_records"] = a.n_records;
            arts.push_back(aj);
        }
        s["artifacts"] = arts;
        stages[name] = s;
    }
    j["stages"] = stages;
    return j;
}

inline RunManifest manifest_from_json(const ordered_json& j) {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.created_at = j.at("created_at").get<std::int64_t>();
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::int64_t>();
    for (const auto& [name, s] : j.at("stages").items()) {
        StageRecord rec;
        const std::string state = s.at("state").get<std::string>();
        if (state == "pending")
            rec.state = StageState::pending;
        else if (state == "complete")
            rec.state = StageState::complete;
        else if (state == "failed")
            rec.state = StageState::failed;
        else
            throw StoreError(StoreError::Kind::corruption, "bad stage state '" + state + "'");
        if (s.contains("note")) rec.note = s.at("note").get<std::string>();
        for (const auto& a : s.at("artifacts"))
            rec.artifacts.push_back(ArtifactRecord{a.at("path").get<std::string>(),
                                                   a.at("digest").get<std::string>(),
                                                   a.at("n_records").get<std::size_t>()});
        m.stages[name] = rec;
    }
    return m;
}

inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
    static std::atomic<std::uint64_t> counter{0};
    const auto tmp =
        path.parent_path() / (path.filename().string() + ".tmp." +
                              std::to_string(counter.fetch_add(1)));
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out.good())
            throw StoreError(StoreError::Kind::not_found,
                             "cannot open for write: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out.good())
            throw StoreError(StoreError::Kind::corruption, "short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good())
        throw StoreError(StoreError::Kind::not_found, "cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::size_t count_lines(std::string_view content) {
    std::size_t n = 0;
    for (char c : content)
        if (c == '\n') ++n;
    if (!content.empty() && content.back() != '\n') ++n;
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run store
// ---------------------------------------------------------------------------

/// File-backed store for one pipeline run. Artifacts are written to a temp
/// file and renamed; the manifest is rewritten whole-file atomically after
/// every artifact, so a killed process leaves either no artifact or a
/// complete, manifest-referenced one.
class RunStore {
public:
    static RunStore init(const std::filesystem::path& root, const std::string& run_id,
                         const std::string& config_text,
                         std::map<std::string, std::int64_t> seeds = {}) {
        const auto dir = root / run_id;
        if (std::filesystem::exists(dir))
            throw StoreError(StoreError::Kind::collision, "run already exists: " + dir.string());
        std::filesystem::create_directories(dir);
        detail::atomic_write(dir / "config", config_text);
        RunStore store(dir);
        store.manifest_.run_id = run_id;
        store.manifest_.config_digest = sha256_hex(config_text);
        store.manifest_.created_at = static_cast<std::int64_t>(std::time(nullptr));
        store.manifest_.seeds = std::move(seeds);
        for (const char* stage : pipeline_stages()) store.manifest_.stages[stage] = {};
        store.save_manifest();
        return store;
    }

    static RunStore open(const std::filesystem::path& root, const std::string& run_id) {
        const auto dir = root / run_id;
        if (!std::filesystem::exists(dir / "manifest"))
            throw StoreError(StoreError::Kind::not_found, "no manifest in " + dir.string());
        RunStore store(dir);
        try {
            store.manifest_ =
                detail::manifest_from_json(ordered_json::parse(detail::read_file(dir / "manifest")));
        } catch (const nlohmann::json::exception& e) {
            throw StoreError(StoreError::Kind::corruption,
                             "manifest unreadable: " + std::string(e.what()));
        }
        const std::string config = detail::read_file(dir / "config");
        if (sha256_hex(config) != store.manifest_.config_digest)
            throw StoreError(StoreError::Kind::corruption,
                             "stored config does not match manifest digest");
        return store;
    }

    static RunStore open_or_init(const std::filesystem::path& root, const std::string& run_id,
                                 const std::string& config_text,
                                 std::map<std::string, std::int64_t> seeds = {}) {
        if (std::filesystem::exists(root / run_id / "manifest")) {
            RunStore store = open(root, run_id);
            if (store.manifest_.config_digest != sha256_hex(config_text))
                throw ConfigError("run '" + run_id +
                                  "' was created with a different config; use a new --run-id");
            return store;
        }
        return init(root, run_id, config_text, std::move(seeds));
    }

    const RunManifest& manifest() const { return manifest_; }
    const std::filesystem::path& dir() const { return dir_; }

    StageState stage_state(const std::string& stage) const {
        return stage_record(stage).state;
    }

    ArtifactRecord put_artifact(const std::string& stage, const std::string& filename,
                                std::string_view content, bool force = false,
                                std::optional<std::size_t> n_records = std::nullopt) {
        StageRecord& rec = stage_record_mut(stage);
        if (rec.state == StageState::complete && !force)
            throw StoreError(StoreError::Kind::immutability,
                             "stage '" + stage + "' is complete; re-put requires --force");
        detail::atomic_write(dir_ / filename, content);
        ArtifactRecord art;
        art.path = filename;
        art.digest = sha256_hex(content);
        art.n_records = n_records.value_or(detail::count_lines(content));
        auto it = std::find_if(rec.artifacts.begin(), rec.artifacts.end(),
                               [&](const ArtifactRecord& a) { return a.path == filename; });
        if (it == rec.artifacts.end())
            rec.artifacts.push_back(art);
        else
            *it = art;
        save_manifest();
        return art;
    }

    /// Digest-verified read of a completed stage's artifact.
    std::string get_artifact(const std::string& stage, const std::string& filename) const {
        const StageRecord& rec = stage_record(stage);
        if (rec.state != StageState::complete)
            throw StoreError(StoreError::Kind::stage_order,
                             "stage '" + stage + "' is not complete");
        const auto it = std::find_if(rec.artifacts.begin(), rec.artifacts.end(),
                                     [&](const ArtifactRecord& a) { return a.path == filename; });
        if (it == rec.artifacts.end())
            throw StoreError(StoreError::Kind::not_found,
                             "stage '" + stage + "' has no artifact '" + filename + "'");
        std::string content = detail::read_file(dir_ / filename);
        if (sha256_hex(content) != it->digest)
            throw StoreError(StoreError::Kind::corruption,
                             "artifact '" + filename + "' does not match its recorded digest");
        return content;
    }

    void mark_complete(const std::string& stage) {
        StageRecord& rec = stage_record_mut(stage);
        rec.state = StageState::complete;
        rec.note.clear();
        save_manifest();
    }

    void mark_failed(const std::string& stage, const std::string& note) {
        StageRecord& rec = stage_record_mut(stage);
        rec.state = StageState::failed;
        rec.note = note;
        save_manifest();
    }

    /// Reset a completed stage back to pending (used by --force reruns).
    void reset_stage(const std::string& stage) {
        StageRecord& rec = stage_record_mut(stage);
        rec.state = StageState::pending;
        rec.note.clear();
        save_manifest();
    }

    /// First stage in pipeline order that is not complete; nullopt when done.
    std::optional<std::string> resume() const {
        for (const char* stage : pipeline_stages())
            if (stage_record(stage).state != StageState::complete) return std::string(stage);
        return std::nullopt;
    }

    /// Every stage before `stage` must already be complete.
    void require_predecessors(const std::string& stage) const {
        for (const char* s : pipeline_stages()) {
            if (stage == s) return;
            if (stage_record(s).state != StageState::complete)
                throw StoreError(StoreError::Kind::stage_order,
                                 "stage '" + stage + "' requires completed '" + std::string(s) +
                                     "' first");
        }
        throw ContractError("unknown stage: '" + stage + "'");
    }

private:
    explicit RunStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const StageRecord& stage_record(const std::string& stage) const {
        const auto it = manifest_.stages.find(stage);
        if (it == manifest_.stages.end()) throw ContractError("unknown stage: '" + stage + "'");
        return it->second;
    }

    StageRecord& stage_record_mut(const std::string& stage) {
        const auto it = manifest_.stages.find(stage);
        if (it == manifest_.stages.end()) throw ContractError("unknown stage: '" + stage + "'");
        return it->second;
    }

    void save_manifest() const {
        detail::atomic_write(dir_ / "manifest", detail::manifest_to_json(manifest_).dump(2) + "\n");
    }

    std::filesystem::path dir_;
    RunManifest manifest_;
};

}  // namespace prefalign
