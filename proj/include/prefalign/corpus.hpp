#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/errors.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Sentiment labels
// ---------------------------------------------------------------------------

enum class SentimentLabel : int { like = 0, neutral = 1, dislike = 2 };

inline const char* to_string(SentimentLabel s) {
    switch (s) {
        case SentimentLabel::like: return "like";
        case SentimentLabel::neutral: return "neutral";
        case SentimentLabel::dislike: return "dislike";
    }
    return "?";
}

inline SentimentLabel sentiment_from_string(std::string_view s) {
    if (s == "like") return SentimentLabel::like;
    if (s == "neutral") return SentimentLabel::neutral;
    if (s == "dislike") return SentimentLabel::dislike;
    throw ContractError("unknown sentiment label: '" + std::string(s) + "'");
}

constexpr std::array<SentimentLabel, 3> kAllLabels = {
    SentimentLabel::like, SentimentLabel::neutral, SentimentLabel::dislike};

// ---------------------------------------------------------------------------
// Rating -> sentiment mapping
// ---------------------------------------------------------------------------

/// Threshold map from a dataset-native rating scale onto the three labels.
/// like: rating >= like_min; dislike: rating <= dislike_max; else neutral.
struct RatingMap {
    double like_min = 4.0;
    double dislike_max = 2.0;
    double scale_max = 5.0;

    void validate() const {
        if (!(dislike_max < like_min && like_min <= scale_max))
            throw ConfigError("rating map requires dislike_max < like_min <= scale_max");
    }
};

inline SentimentLabel map_rating_to_sentiment(double rating, const RatingMap& map) {
    map.validate();
    if (rating < 0.0 || rating > map.scale_max)
        throw ContractError("rating " + std::to_string(rating) + " outside [0, " +
                            std::to_string(map.scale_max) + "]");
    if (rating >= map.like_min) return SentimentLabel::like;
    if (rating <= map.dislike_max) return SentimentLabel::dislike;
    return SentimentLabel::neutral;
}

// ---------------------------------------------------------------------------
// Interaction records
// ---------------------------------------------------------------------------

using AttributeList = std::vector<std::pair<std::string, std::string>>;

/// One timestamped user-item event with item attributes and ground truth.
struct InteractionRecord {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
    double rating = 0.0;
    SentimentLabel sentiment = SentimentLabel::neutral;
    AttributeList attributes;
};

enum class DatasetKind { movielens, amazon_books, yelp, normalized };

inline DatasetKind dataset_kind_from_string(std::string_view s) {
    if (s == "movielens") return DatasetKind::movielens;
    if (s == "amazon_books") return DatasetKind::amazon_books;
    if (s == "yelp") return DatasetKind::yelp;
    if (s == "normalized") return DatasetKind::normalized;
    throw ConfigError("unknown dataset kind: '" + std::string(s) + "'");
}

inline const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::movielens: return "movielens";
        case DatasetKind::amazon_books: return "amazon_books";
        case DatasetKind::yelp: return "yelp";
        case DatasetKind::normalized: return "normalized";
    }
    return "?";
}

/// Item attribute names per dataset, in render order.
inline std::vector<std::string> attribute_names(DatasetKind k) {
    switch (k) {
        case DatasetKind::movielens: return {"Title", "Genre"};
        case DatasetKind::amazon_books: return {"Title", "Category"};
        case DatasetKind::yelp: return {"Business name", "Category"};
        case DatasetKind::normalized:
            throw ConfigError("normalized records carry their own attribute names");
    }
    return {};
}

inline std::string default_delimiter(DatasetKind k) {
    switch (k) {
        case DatasetKind::movielens: return "::";
        case DatasetKind::amazon_books: return ",";
        case DatasetKind::yelp: return "\t";
        case DatasetKind::normalized: return "";
    }
    return "";
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, const std::string& delim) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = line.find(delim, pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + delim.size();
    }
    return out;
}

inline double parse_rating(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line_no, "rating", "not a number: '" + s + "'");
    return v;
}

inline std::int64_t parse_timestamp(const std::string& s, std::size_t line_no) {
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(line_no, "timestamp", "not an integer: '" + s + "'");
    if (v < 0) throw ParseError(line_no, "timestamp", "negative timestamp");
    return v;
}

}  // namespace detail

using ItemAttributes = std::unordered_map<std::string, AttributeList>;

/// Sidecar parser: item_id followed by one value per dataset attribute name.
inline ItemAttributes load_item_attributes(std::istream& in, DatasetKind kind,
                                           const std::string& delimiter = "") {
    if (kind == DatasetKind::normalized)
        throw ConfigError("normalized datasets have no attribute sidecar");
    const std::string delim = delimiter.empty() ? default_delimiter(kind) : delimiter;
    const auto names = attribute_names(kind);
    ItemAttributes out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, delim);
        if (fields.size() != 1 + names.size())
            throw ParseError(line_no, "item_id",
                             "expected " + std::to_string(1 + names.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        AttributeList attrs;
        for (std::size_t i = 0; i < names.size(); ++i) attrs.emplace_back(names[i], fields[i + 1]);
        out[fields[0]] = std::move(attrs);
    }
    return out;
}

/// Parse a delimited interaction file (user_id, item_id, rating, timestamp),
/// joining item attributes from the sidecar and labeling via the rating map.
inline std::vector<InteractionRecord> load_interactions(std::istream& in, DatasetKind kind,
                                                        const ItemAttributes& items,
                                                        const RatingMap& map,
                                                        const std::string& delimiter = "") {
    if (kind == DatasetKind::normalized)
        throw ConfigError("use load_normalized for normalized input");
    const std::string delim = delimiter.empty() ? default_delimiter(kind) : delimiter;
    std::vector<InteractionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split_fields(line, delim);
        if (fields.size() != 4)
            throw ParseError(line_no, "row",
                             "expected 4 fields (user_id, item_id, rating, timestamp), got " +
                                 std::to_string(fields.size()));
        InteractionRecord rec;
        rec.user_id = fields[0];
        rec.item_id = fields[1];
        if (rec.user_id.empty()) throw ParseError(line_no, "user_id", "empty");
        if (rec.item_id.empty()) throw ParseError(line_no, "item_id", "empty");
        rec.rating = detail::parse_rating(fields[2], line_no);
        rec.timestamp = detail::parse_timestamp(fields[3], line_no);
        auto it = items.find(rec.item_id);
        if (it == items.end())
            throw ParseError(line_no, "item_id", "item '" + rec.item_id + "' not in sidecar");
        rec.attributes = it->second;
        try {
            rec.sentiment = map_rating_to_sentiment(rec.rating, map);
        } catch (const ContractError& e) {
            throw ParseError(line_no, "rating", e.what());
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// Normalized line-record form: one JSON object per line with fields exactly
// (user_id, item_id, timestamp, rating, sentiment, attributes).

inline ordered_json record_to_json(const InteractionRecord& r) {
    ordered_json j;
    j["user_id"] = r.user_id;
    j["item_id"] = r.item_id;
    j["timestamp"] = r.timestamp;
    j["rating"] = r.rating;
    j["sentiment"] = to_string(r.sentiment);
    ordered_json attrs = ordered_json::array();
    for (const auto& [k, v] : r.attributes) attrs.push_back(ordered_json::array({k, v}));
    j["attributes"] = attrs;
    return j;
}

inline InteractionRecord record_from_json(const ordered_json& j) {
    InteractionRecord r;
    r.user_id = j.at("user_id").get<std::string>();
    r.item_id = j.at("item_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    r.rating = j.at("rating").get<double>();
    r.sentiment = sentiment_from_string(j.at("sentiment").get<std::string>());
    for (const auto& pair : j.at("attributes"))
        r.attributes.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    return r;
}

inline void write_normalized(std::ostream& out, const std::vector<InteractionRecord>& records) {
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

inline std::vector<InteractionRecord> load_normalized(std::istream& in) {
    std::vector<InteractionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(ordered_json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, "record", e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Timelines and history splits
// ---------------------------------------------------------------------------

/// One user's records sorted most-recent-first (index 0 is the newest event;
/// ties keep input order).
struct UserTimeline {
    std::string user_id;
    std::vector<InteractionRecord> records;

    std::size_t length() const { return records.size(); }
};

inline UserTimeline build_timeline(std::vector<InteractionRecord> records) {
    if (records.empty()) throw ContractError("build_timeline: no records");
    const std::string& uid = records.front().user_id;
    for (const auto& r : records)
        if (r.user_id != uid)
            throw ContractError("build_timeline: mixed user_ids ('" + uid + "' vs '" + r.user_id +
                                "')");
    std::stable_sort(records.begin(), records.end(),
                     [](const InteractionRecord& a, const InteractionRecord& b) {
                         return a.timestamp > b.timestamp;
                     });
    return UserTimeline{uid, std::move(records)};
}

/// Disjoint recent/long windows. `recent` holds the K newest records behind
/// the target; `long_window` holds the W records behind those.
struct HistorySplit {
    std::vector<InteractionRecord> recent;
    std::vector<InteractionRecord> long_window;

    std::size_t k() const { return recent.size(); }
    std::size_t w() const { return long_window.size(); }
};

/// Held-out prediction instance: newest record is the target, the next K are
/// the recent history, the W after that are the long history.
struct EvalInstance {
    std::string user_id;
    InteractionRecord target;
    SentimentLabel truth = SentimentLabel::neutral;
    HistorySplit split;
};

inline EvalInstance make_eval_instance(const UserTimeline& timeline, std::size_t k,
                                       std::size_t w) {
    const std::size_t need = 1 + k + w;
    if (timeline.length() < need) throw InsufficientHistory(need, timeline.length());
    EvalInstance inst;
    inst.user_id = timeline.user_id;
    inst.target = timeline.records[0];
    inst.truth = inst.target.sentiment;
    inst.split.recent.assign(timeline.records.begin() + 1, timeline.records.begin() + 1 + k);
    inst.split.long_window.assign(timeline.records.begin() + 1 + k,
                                  timeline.records.begin() + 1 + k + w);
    return inst;
}

// ---------------------------------------------------------------------------
// User selection and dataset statistics
// ---------------------------------------------------------------------------

/// Users with strictly more than min_exclusive interactions, in first-seen order.
inline std::vector<std::string> filter_users(const std::vector<InteractionRecord>& records,
                                             std::size_t min_exclusive) {
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> seen_order;
    for (const auto& r : records) {
        if (counts.emplace(r.user_id, 0).second) seen_order.push_back(r.user_id);
        ++counts[r.user_id];
    }
    std::vector<std::string> out;
    for (const auto& u : seen_order)
        if (counts[u] > min_exclusive) out.push_back(u);
    return out;
}

/// Deterministic uniform sample of n users from an ordered candidate list.
inline std::vector<std::string> sample_users(const std::vector<std::string>& eligible,
                                             std::size_t n, std::uint64_t seed) {
    if (n > eligible.size())
        throw ContractError("sample_users: requested " + std::to_string(n) + " of " +
                            std::to_string(eligible.size()));
    std::mt19937_64 gen(seed);
    std::vector<std::string> pool = eligible;
    deterministic_shuffle(pool, gen);
    pool.resize(n);
    return pool;
}

struct DatasetStats {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::size_t n_train_rows = 0;
    std::size_t n_test_rows = 0;
};

inline DatasetStats stats(const std::vector<InteractionRecord>& records) {
    std::unordered_set<std::string> users, items;
    for (const auto& r : records) {
        users.insert(r.user_id);
        items.insert(r.item_id);
    }
    DatasetStats s;
    s.n_users = users.size();
    s.n_items = items.size();
    return s;
}

/// Group records by user preserving input order inside each group.
inline std::unordered_map<std::string, std::vector<InteractionRecord>> group_by_user(
    const std::vector<InteractionRecord>& records) {
    std::unordered_map<std::string, std::vector<InteractionRecord>> out;
    for (const auto& r : records) out[r.user_id].push_back(r);
    return out;
}

}  // namespace prefalign
