#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "prefalign/corpus.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Synthetic offline dataset
// ---------------------------------------------------------------------------

/// Deterministic movielens-format dataset generator. Every user has at least
/// 81 interactions, so instances up to W = 70 (with K = 10 and one target)
/// exist for everyone. The newest interaction's rating is forced so target
/// truths follow `truth_cycle` by user index.
struct FixtureSpec {
    int n_users = 200;
    int n_items = 300;
    std::uint64_t seed = 20240501;
    // Default mix: mostly-like targets so a profile-sensitive scripted
    // predictor separates cleanly from the profile-free default reply.
    std::vector<SentimentLabel> truth_cycle = {
        SentimentLabel::like,    SentimentLabel::like,    SentimentLabel::like,
        SentimentLabel::like,    SentimentLabel::like,    SentimentLabel::like,
        SentimentLabel::neutral, SentimentLabel::neutral, SentimentLabel::neutral,
        SentimentLabel::dislike};

    static FixtureSpec balanced(int n_users_divisible_by_3, std::uint64_t seed = 20240501) {
        FixtureSpec s;
        s.n_users = n_users_divisible_by_3;
        s.seed = seed;
        s.truth_cycle = {SentimentLabel::like, SentimentLabel::neutral, SentimentLabel::dislike};
        return s;
    }
};

struct FixtureData {
    std::string interactions;  // user::item::rating::timestamp
    std::string items;         // item::Title::Genre
};

namespace detail {

inline const std::vector<std::string>& fixture_genres() {
    static const std::vector<std::string> genres = {"Action",  "Comedy",  "Drama",
                                                    "Thriller", "Romance", "SciFi",
                                                    "Horror",  "Documentary"};
    return genres;
}

inline std::string fixture_item_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "m%03d", i);
    return buf;
}

inline std::string fixture_user_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "u%03d", i);
    return buf;
}

inline double rating_for(SentimentLabel truth) {
    switch (truth) {
        case SentimentLabel::like: return 5.0;
        case SentimentLabel::neutral: return 3.0;
        case SentimentLabel::dislike: return 1.0;
    }
    return 3.0;
}

}  // namespace detail

inline FixtureData generate_fixture(const FixtureSpec& spec) {
    if (spec.n_users < 1 || spec.n_items < 1 || spec.truth_cycle.empty())
        throw ConfigError("fixture spec needs users, items and a truth cycle");
    FixtureData data;
    char buf[128];

    const auto& genres = detail::fixture_genres();
    for (int i = 0; i < spec.n_items; ++i) {
        const std::string& g1 = genres[i % genres.size()];
        std::string genre = g1;
        if (i % 3 == 0) {
            const std::string& g2 = genres[(i / 3 + 1) % genres.size()];
            if (g2 != g1) genre += "|" + g2;
        }
        std::snprintf(buf, sizeof(buf), "%s::Movie %03d::%s\n",
                      detail::fixture_item_id(i).c_str(), i, genre.c_str());
        data.items += buf;
    }

    for (int u = 0; u < spec.n_users; ++u) {
        std::mt19937_64 gen(spec.seed ^ (0x5851f42d4c957f2dULL * (u + 1)));
        const std::string user = detail::fixture_user_id(u);
        const int length = 81 + u % 10;
        const SentimentLabel truth = spec.truth_cycle[u % spec.truth_cycle.size()];
        for (int j = 0; j < length; ++j) {
            const int item = static_cast<int>(bounded_draw(gen, spec.n_items));
            const bool is_target = j == length - 1;
            const double rating = is_target
                                      ? detail::rating_for(truth)
                                      : 1.0 + static_cast<double>(bounded_draw(gen, 5));
            const std::int64_t ts = 1000000000LL + 100000LL * u + 60LL * j;
            std::snprintf(buf, sizeof(buf), "%s::%s::%.1f::%lld\n", user.c_str(),
                          detail::fixture_item_id(item).c_str(), rating,
                          static_cast<long long>(ts));
            data.interactions += buf;
        }
    }
    return data;
}

inline void write_fixture(const std::filesystem::path& dir, const FixtureSpec& spec) {
    std::filesystem::create_directories(dir);
    const FixtureData data = generate_fixture(spec);
    std::ofstream(dir / "interactions.dat", std::ios::binary) << data.interactions;
    std::ofstream(dir / "items.dat", std::ios::binary) << data.items;
}

}  // namespace prefalign
