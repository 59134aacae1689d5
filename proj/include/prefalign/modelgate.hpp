#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/errors.hpp"
#include "prefalign/hash.hpp"
#include "prefalign/prompts.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Model specs and requests
// ---------------------------------------------------------------------------

enum class ModelKind { live, mock_oracle, mock_constant, mock_scripted, mock_hash };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::live: return "live";
        case ModelKind::mock_oracle: return "mock_oracle";
        case ModelKind::mock_constant: return "mock_constant";
        case ModelKind::mock_scripted: return "mock_scripted";
        case ModelKind::mock_hash: return "mock_hash";
    }
    return "?";
}

inline ModelKind model_kind_from_string(std::string_view s) {
    if (s == "live") return ModelKind::live;
    if (s == "mock_oracle") return ModelKind::mock_oracle;
    if (s == "mock_constant") return ModelKind::mock_constant;
    if (s == "mock_scripted") return ModelKind::mock_scripted;
    if (s == "mock_hash") return ModelKind::mock_hash;
    throw ConfigError("unknown model kind: '" + std::string(s) + "'");
}

/// Ordered substring rules; the first match answers. A missing default plus
/// no match is a mock error.
struct MockScript {
    std::vector<std::pair<std::string, std::string>> rules;
    std::optional<std::string> default_reply;
};

struct ModelSpec {
    std::string model_id;
    ModelKind kind = ModelKind::live;
    std::string endpoint;  // URL for live specs, free tag for mocks
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::string constant_text;  // mock_constant payload
    MockScript script;          // mock_scripted payload

    void validate() const {
        if (model_id.empty()) throw ConfigError("model spec requires a model_id");
        if (temperature < 0.0 || temperature > 2.0)
            throw ConfigError("model '" + model_id + "': temperature outside [0, 2]");
        if (kind == ModelKind::live && endpoint.empty())
            throw ConfigError("live model '" + model_id + "' requires an endpoint URL");
        if (kind == ModelKind::mock_constant && constant_text.empty())
            throw ConfigError("mock_constant model '" + model_id + "' requires text");
        if (kind == ModelKind::mock_scripted && script.rules.empty() &&
            !script.default_reply.has_value())
            throw ConfigError("mock_scripted model '" + model_id +
                              "' requires at least one rule or a default reply");
    }
};

struct CompletionRequest {
    RenderedPrompt prompt;
    double temperature = 0.0;
    int sample_index = 0;
    std::int64_t seed = 0;
};

struct CompletionResult {
    std::string text;
    std::string model_id;
    bool cached = false;
    std::int64_t latency_ms = 0;
    int attempt = 0;
};

struct CacheKey {
    Sha256Digest digest{};

    std::string hex() const { return to_hex(digest.data(), digest.size()); }
    bool operator==(const CacheKey& o) const { return digest == o.digest; }
};

namespace detail {

inline std::string canonical_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

/// Content address of one completion: any change to the model, the prompt
/// text, the temperature, the sample index, or the seed changes the digest.
inline CacheKey cache_key(const ModelSpec& spec, const CompletionRequest& req) {
    std::string material;
    material.reserve(req.prompt.text.size() + 64);
    material += spec.model_id;
    material += '\x1e';
    material += req.prompt.text;
    material += '\x1e';
    material += detail::canonical_double(req.temperature);
    material += '\x1e';
    material += std::to_string(req.sample_index);
    material += '\x1e';
    material += std::to_string(req.seed);
    return CacheKey{sha256(material)};
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct TransportReply {
    bool ok = false;  // transport-level success (a response arrived)
    int status = 0;
    std::string body;
    std::string error;
};

using TransportFn = std::function<TransportReply(const ModelSpec&, const std::string& body)>;
using RequestObserver = std::function<void(const ModelSpec&, const CompletionRequest&)>;

struct GatewayOptions {
    std::filesystem::path cache_dir;  // empty: in-memory cache only
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{200};
    int per_endpoint_concurrency = 4;
    TransportFn transport;        // test hook; defaults to HTTP chat completions
    RequestObserver on_request;   // instrumentation hook, called for every request
    std::string api_key_env = "PREFALIGN_API_KEY";
};

namespace detail {

class Semaphore {
public:
    explicit Semaphore(int count) : count_(count) {}

    void acquire() {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return count_ > 0; });
        --count_;
    }

    void release() {
        {
            std::lock_guard lock(m_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    int count_;
};

struct ParsedUrl {
    bool https = false;
    std::string host;
    int port = 0;
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    ParsedUrl out;
    std::string rest;
    if (url.rfind("https://", 0) == 0) {
        out.https = true;
        rest = url.substr(8);
    } else if (url.rfind("http://", 0) == 0) {
        rest = url.substr(7);
    } else {
        throw ConfigError("endpoint URL must start with http:// or https://: " + url);
    }
    auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    out.path = slash == std::string::npos ? "/" : rest.substr(slash);
    auto colon = hostport.find(':');
    if (colon == std::string::npos) {
        out.host = hostport;
        out.port = out.https ? 443 : 80;
    } else {
        out.host = hostport.substr(0, colon);
        out.port = std::stoi(hostport.substr(colon + 1));
    }
    if (out.host.empty()) throw ConfigError("endpoint URL has no host: " + url);
    return out;
}

}  // namespace detail

/// Uniform completion front door. Consults the content-addressed cache, then
/// either evaluates a mock or calls the live endpoint with bounded retries
/// and per-endpoint concurrency limits, and stores the result before
/// returning it.
class Gateway {
public:
    explicit Gateway(GatewayOptions opts = {}) : opts_(std::move(opts)) {
        if (opts_.max_attempts < 1) throw ConfigError("gateway max_attempts must be >= 1");
        if (opts_.per_endpoint_concurrency < 1)
            throw ConfigError("gateway per_endpoint_concurrency must be >= 1");
        if (!opts_.cache_dir.empty()) std::filesystem::create_directories(opts_.cache_dir);
    }

    void set_oracle_table(std::unordered_map<std::string, SentimentLabel> table) {
        std::lock_guard lock(oracle_mutex_);
        oracle_table_ = std::move(table);
    }

    CompletionResult complete(const ModelSpec& spec, const CompletionRequest& req) {
        spec.validate();
        if (req.sample_index < 0) throw ContractError("sample_index must be >= 0");
        if (req.temperature < 0.0 || req.temperature > 2.0)
            throw ContractError("request temperature outside [0, 2]");
        if (opts_.on_request) opts_.on_request(spec, req);

        const CacheKey key = cache_key(spec, req);
        const std::string hex = key.hex();

        if (auto hit = cache_get(hex)) {
            CompletionResult res;
            res.text = *hit;
            res.model_id = spec.model_id;
            res.cached = true;
            return res;
        }

        const auto t0 = std::chrono::steady_clock::now();
        std::string text;
        int attempt = 1;
        switch (spec.kind) {
            case ModelKind::mock_constant: text = spec.constant_text; break;
            case ModelKind::mock_scripted: text = eval_scripted(spec, req); break;
            case ModelKind::mock_hash: text = eval_hash(spec, req, key); break;
            case ModelKind::mock_oracle: text = eval_oracle(req); break;
            case ModelKind::live: text = live_call(spec, req, attempt); break;
        }
        const auto t1 = std::chrono::steady_clock::now();

        cache_put(hex, spec, req, text);

        CompletionResult res;
        res.text = std::move(text);
        res.model_id = spec.model_id;
        res.cached = false;
        res.latency_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
        res.attempt = attempt;
        return res;
    }

    const GatewayOptions& options() const { return opts_; }

private:
    // -- mock behaviors ------------------------------------------------------

    static std::string eval_scripted(const ModelSpec& spec, const CompletionRequest& req) {
        for (const auto& [pattern, reply] : spec.script.rules)
            if (req.prompt.text.find(pattern) != std::string::npos) return reply;
        if (spec.script.default_reply) return *spec.script.default_reply;
        throw MockError("scripted mock '" + spec.model_id + "': no rule matched and no default");
    }

    static std::string eval_hash(const ModelSpec& spec, const CompletionRequest& req,
                                 const CacheKey& key) {
        const std::string hex = key.hex();
        std::string text = "sample " + spec.model_id + "/" + std::to_string(req.sample_index) +
                           " digest " + hex.substr(0, 12) + " marker-" +
                           ((key.digest[0] & 1) ? "odd" : "even");
        return text;
    }

    std::string eval_oracle(const CompletionRequest& req) {
        if (req.prompt.meta.template_id == TemplateId::lettinggo_predict) {
            std::lock_guard lock(oracle_mutex_);
            auto it = oracle_table_.find(req.prompt.meta.user_id);
            if (it == oracle_table_.end())
                throw MockError("oracle mock: user '" + req.prompt.meta.user_id +
                                "' not in truth table");
            return to_string(it->second);
        }
        return "PROFILE: fixed placeholder profile from the oracle mock.";
    }

    // -- live transport ------------------------------------------------------

    std::string live_call(const ModelSpec& spec, const CompletionRequest& req, int& attempt_out) {
        (void)detail::parse_url(spec.endpoint);  // reject bad URLs before any attempt
        const std::string body = build_request_body(spec, req);
        std::string last_error = "no attempt made";
        for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
            attempt_out = attempt;
            if (attempt > 1) backoff_sleep(req.seed, attempt - 1);
            TransportReply reply = run_transport(spec, body);
            if (!reply.ok) {
                last_error = reply.error.empty() ? "transport failure" : reply.error;
                continue;
            }
            if (reply.status == 429 || reply.status >= 500) {
                last_error = "status " + std::to_string(reply.status);
                continue;
            }
            if (reply.status < 200 || reply.status >= 300)
                throw NonRetryableHttp(reply.status, reply.body);
            if (auto text = extract_content(reply.body)) return *text;
            last_error = "unparseable completion body";
        }
        throw TransportExhausted(opts_.max_attempts, last_error);
    }

    static std::string build_request_body(const ModelSpec& spec, const CompletionRequest& req) {
        ordered_json messages = ordered_json::array();
        for (const auto& [role, segment] : req.prompt.role_layout) {
            ordered_json m;
            m["role"] = role == Role::system ? "system" : "user";
            m["content"] = segment;
            messages.push_back(m);
        }
        ordered_json j;
        j["model"] = spec.model_id;
        j["messages"] = messages;
        j["temperature"] = req.temperature;
        j["max_tokens"] = spec.max_output_tokens;
        return j.dump();
    }

    static std::optional<std::string> extract_content(const std::string& body) {
        try {
            auto j = nlohmann::json::parse(body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
    }

    TransportReply run_transport(const ModelSpec& spec, const std::string& body) {
        detail::Semaphore& sem = endpoint_semaphore(spec.endpoint);
        sem.acquire();
        TransportReply reply;
        try {
            reply = opts_.transport ? opts_.transport(spec, body) : http_transport(spec, body);
        } catch (...) {
            sem.release();
            throw;
        }
        sem.release();
        return reply;
    }

    TransportReply http_transport(const ModelSpec& spec, const std::string& body) {
        TransportReply out;
        try {
            auto url = detail::parse_url(spec.endpoint);
            httplib::Headers headers;
            if (const char* key = std::getenv(opts_.api_key_env.c_str()))
                headers.emplace("Authorization", std::string("Bearer ") + key);
            auto roundtrip = [&](auto& client) {
                client.set_connection_timeout(std::chrono::seconds(10));
                client.set_read_timeout(std::chrono::seconds(120));
                return client.Post(url.path, headers, body, "application/json");
            };
            httplib::Result res = [&] {
                if (url.https) {
                    httplib::SSLClient client(url.host, url.port);
                    return roundtrip(client);
                }
                httplib::Client client(url.host, url.port);
                return roundtrip(client);
            }();
            if (!res) {
                out.error = httplib::to_string(res.error());
                return out;
            }
            out.ok = true;
            out.status = res->status;
            out.body = res->body;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
        return out;
    }

    detail::Semaphore& endpoint_semaphore(const std::string& endpoint) {
        std::lock_guard lock(sem_mutex_);
        auto it = semaphores_.find(endpoint);
        if (it == semaphores_.end())
            it = semaphores_
                     .emplace(endpoint,
                              std::make_unique<detail::Semaphore>(opts_.per_endpoint_concurrency))
                     .first;
        return *it->second;
    }

    void backoff_sleep(std::int64_t seed, int failed_attempts) {
        const auto base = opts_.backoff_base.count();
        if (base <= 0) return;
        std::int64_t delay = base << std::min(failed_attempts - 1, 12);
        delay = std::min<std::int64_t>(delay, 30000);
        const std::uint64_t jitter =
            fnv1a64(std::to_string(seed) + ":" + std::to_string(failed_attempts)) %
            static_cast<std::uint64_t>(base);
        std::this_thread::sleep_for(std::chrono::milliseconds(delay + (std::int64_t)jitter));
    }

    // -- cache ---------------------------------------------------------------

    std::optional<std::string> cache_get(const std::string& hex) {
        {
            std::lock_guard lock(mem_mutex_);
            auto it = memory_.find(hex);
            if (it != memory_.end()) return it->second;
        }
        if (opts_.cache_dir.empty()) return std::nullopt;
        const auto path = cache_path(hex);
        std::ifstream in(path, std::ios::binary);
        if (!in.good()) return std::nullopt;
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto nl = all.find('\n');
        if (nl == std::string::npos) return std::nullopt;  // truncated entry; treat as miss
        std::string text = all.substr(nl + 1);
        {
            std::lock_guard lock(mem_mutex_);
            memory_[hex] = text;
        }
        return text;
    }

    void cache_put(const std::string& hex, const ModelSpec& spec, const CompletionRequest& req,
                   const std::string& text) {
        {
            std::lock_guard lock(mem_mutex_);
            memory_[hex] = text;
        }
        if (opts_.cache_dir.empty()) return;
        ordered_json header;
        header["model_id"] = spec.model_id;
        header["temperature"] = req.temperature;
        header["seed"] = req.seed;
        header["sample_index"] = req.sample_index;
        header["created_at"] = static_cast<std::int64_t>(std::time(nullptr));
        const auto path = cache_path(hex);
        std::filesystem::create_directories(path.parent_path());
        static std::atomic<std::uint64_t> tmp_counter{0};
        const auto tmp = path.string() + ".tmp." + std::to_string(tmp_counter.fetch_add(1));
        {
            std::ofstream out(tmp, std::ios::binary);
            out << header.dump() << '\n' << text;
        }
        std::filesystem::rename(tmp, path);  // atomic; identical values by construction
    }

    std::filesystem::path cache_path(const std::string& hex) const {
        return opts_.cache_dir / hex.substr(0, 2) / hex.substr(2, 2) / (hex + ".rec");
    }

    GatewayOptions opts_;
    std::mutex mem_mutex_;
    std::unordered_map<std::string, std::string> memory_;
    std::mutex sem_mutex_;
    std::unordered_map<std::string, std::unique_ptr<detail::Semaphore>> semaphores_;
    std::mutex oracle_mutex_;
    std::unordered_map<std::string, SentimentLabel> oracle_table_;
};

}  // namespace prefalign
