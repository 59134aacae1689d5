#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>
#include <sstream>

#include "prefalign/pairgen.hpp"
#include "test_util.hpp"

using namespace prefalign;

namespace {

EvaluatedSample evaluated(const std::string& user, const std::string& model, int index, int w,
                          bool correct, std::string text = {}) {
    EvaluatedSample e;
    e.sample.user_id = user;
    e.sample.model_id = model;
    e.sample.sample_index = index;
    e.sample.window_w = w;
    e.sample.text = text.empty()
                        ? "profile " + model + "#" + std::to_string(index)
                        : std::move(text);
    e.sample.ok = true;
    e.correct = correct;
    return e;
}

using RefPair = std::pair<std::pair<std::string, int>, std::pair<std::string, int>>;

RefPair ref_of(const PreferencePair& p) {
    return {{p.chosen_ref.model_id, p.chosen_ref.sample_index},
            {p.rejected_ref.model_id, p.rejected_ref.sample_index}};
}

/// Brute-force enumeration oracle: every (correct, incorrect) combination.
std::set<RefPair> enumerate_pairs(const std::vector<EvaluatedSample>& pool) {
    std::set<RefPair> out;
    for (const auto& a : pool)
        for (const auto& b : pool)
            if (a.correct && !b.correct)
                out.insert({{a.sample.model_id, a.sample.sample_index},
                            {b.sample.model_id, b.sample.sample_index}});
    return out;
}

const PairingPolicy kUnlimited{};  // no cap, no dedup, selection=all

}  // namespace

TEST_CASE("partition splits by correctness and preserves order") {
    std::vector<EvaluatedSample> pool;
    for (int i = 0; i < 10; ++i) pool.push_back(evaluated("u", "m", i, 30, i < 6));
    const auto [plus, minus] = partition(pool);
    REQUIRE(plus.size() == 6);
    REQUIRE(minus.size() == 4);
    for (std::size_t i = 1; i < plus.size(); ++i)
        CHECK(plus[i - 1].sample.sample_index < plus[i].sample.sample_index);

    // A missing sample must never reach partition.
    auto bad = pool;
    bad[0].sample.ok = false;
    CHECK_THROWS_AS(partition(bad), ContractError);
}

TEST_CASE("build_pairs: cross product in lexicographic order") {
    std::vector<EvaluatedSample> plus = {evaluated("u", "m", 0, 30, true),
                                         evaluated("u", "m", 1, 30, true)};
    std::vector<EvaluatedSample> minus = {evaluated("u", "m", 2, 30, false),
                                          evaluated("u", "m", 3, 30, false),
                                          evaluated("u", "m", 4, 30, false)};
    const auto pairs = build_pairs(plus, minus, kUnlimited);
    REQUIRE(pairs.size() == 6);
    CHECK(pairs[0].chosen_ref.sample_index == 0);
    CHECK(pairs[0].rejected_ref.sample_index == 2);
    CHECK(pairs[1].rejected_ref.sample_index == 3);
    CHECK(pairs[3].chosen_ref.sample_index == 1);
    CHECK(pairs[5].rejected_ref.sample_index == 4);
}

TEST_CASE("guard: an empty side yields zero pairs") {
    std::vector<EvaluatedSample> plus = {evaluated("u", "m", 0, 30, true),
                                         evaluated("u", "m", 1, 30, true),
                                         evaluated("u", "m", 2, 30, true),
                                         evaluated("u", "m", 3, 30, true),
                                         evaluated("u", "m", 4, 30, true)};
    CHECK(build_pairs(plus, {}, kUnlimited).empty());
    CHECK(build_pairs({}, plus, kUnlimited).empty());
    CHECK(build_pairs({}, {}, kUnlimited).empty());
}

TEST_CASE("oracle equivalence on 50 synthetic users with random flags") {
    std::mt19937_64 gen(515);
    for (int user = 0; user < 50; ++user) {
        std::vector<EvaluatedSample> pool;
        const std::string uid = "u" + std::to_string(user);
        for (int m = 0; m < 2; ++m)
            for (int n = 0; n < 10; ++n)
                pool.push_back(
                    evaluated(uid, "model" + std::to_string(m), n, 30, (gen() & 1) != 0));
        const auto [plus, minus] = partition(pool);
        const auto pairs = build_pairs(plus, minus, kUnlimited);
        std::set<RefPair> got;
        for (const auto& p : pairs) got.insert(ref_of(p));
        REQUIRE(got.size() == pairs.size());  // no duplicates
        REQUIRE(got == enumerate_pairs(pool));
    }
}

TEST_CASE("seeded cap: deterministic subset of bounded size") {
    std::vector<EvaluatedSample> plus, minus;
    for (int i = 0; i < 4; ++i) plus.push_back(evaluated("u", "m", i, 30, true));
    for (int i = 4; i < 9; ++i) minus.push_back(evaluated("u", "m", i, 30, false));

    PairingPolicy policy;
    policy.max_pairs_per_user = 10;
    policy.selection = PairingPolicy::Selection::seeded_uniform;
    policy.seed = 99;
    const auto a = build_pairs(plus, minus, policy);
    const auto b = build_pairs(plus, minus, policy);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(ref_of(a[i]) == ref_of(b[i]));

    // Different seed may select differently but respects the cap and validity.
    policy.seed = 100;
    const auto c = build_pairs(plus, minus, policy);
    CHECK(c.size() == 10);
    const auto full = enumerate_pairs([&] {
        auto pool = plus;
        pool.insert(pool.end(), minus.begin(), minus.end());
        return pool;
    }());
    for (const auto& p : c) CHECK(full.count(ref_of(p)) == 1);

    // Selection is a pure function of (user_id, seed): a second user with the
    // same pool shape gets an independent but deterministic selection.
    std::vector<EvaluatedSample> plus2, minus2;
    for (int i = 0; i < 4; ++i) plus2.push_back(evaluated("v", "m", i, 30, true));
    for (int i = 4; i < 9; ++i) minus2.push_back(evaluated("v", "m", i, 30, false));
    policy.seed = 99;
    const auto d = build_pairs(plus2, minus2, policy);
    CHECK(d.size() == 10);
}

TEST_CASE("dedup drops identical-text pairs") {
    std::vector<EvaluatedSample> plus = {evaluated("u", "m", 0, 30, true, "same text"),
                                         evaluated("u", "m", 1, 30, true, "unique plus")};
    std::vector<EvaluatedSample> minus = {evaluated("u", "m", 2, 30, false, "same text")};
    PairingPolicy dedup;
    dedup.dedup_identical_texts = true;
    const auto pairs = build_pairs(plus, minus, dedup);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].chosen_text == "unique plus");
}

TEST_CASE("mixed user or window pools are rejected") {
    std::vector<EvaluatedSample> plus = {evaluated("u", "m", 0, 30, true)};
    std::vector<EvaluatedSample> minus = {evaluated("v", "m", 1, 30, false)};
    CHECK_THROWS_AS(build_pairs(plus, minus, kUnlimited), ContractError);
    std::vector<EvaluatedSample> minus_w = {evaluated("u", "m", 1, 50, false)};
    CHECK_THROWS_AS(build_pairs(plus, minus_w, kUnlimited), ContractError);
}

TEST_CASE("to_dpo_examples renders prompts and keeps provenance") {
    std::vector<EvaluatedSample> pool = {evaluated("u7", "m", 0, 30, true),
                                         evaluated("u7", "m", 1, 30, false)};
    const auto pairs = pairs_for_user(pool, SentimentLabel::like, kUnlimited);
    REQUIRE(pairs.size() == 1);

    int lookups = 0;
    const auto examples = to_dpo_examples(pairs, [&](const std::string& user, int w) {
        ++lookups;
        return "PROMPT(" + user + "," + std::to_string(w) + ")";
    });
    REQUIRE(examples.size() == 1);
    CHECK(lookups == 1);
    CHECK(examples[0].prompt == "PROMPT(u7,30)");
    CHECK(examples[0].label == SentimentLabel::like);
    CHECK(examples[0].chosen != examples[0].rejected);

    CHECK(to_dpo_examples({}, [](const std::string&, int) -> std::string {
              throw ContractError("never called");
          }).empty());

    // Provenance failure propagates.
    CHECK_THROWS_AS(to_dpo_examples(pairs,
                                    [](const std::string&, int) -> std::string {
                                        throw ContractError("history shrank");
                                    }),
                    ContractError);
}

TEST_CASE("export pairwise format: key order and byte stability") {
    std::vector<EvaluatedSample> pool = {evaluated("u1", "m", 0, 30, true),
                                         evaluated("u1", "m", 1, 30, false)};
    const auto pairs = pairs_for_user(pool, SentimentLabel::neutral, kUnlimited);
    const auto examples =
        to_dpo_examples(pairs, [](const std::string& u, int w) { return "P"; });

    std::ostringstream out;
    export_examples(out, examples, ExportFormat::pairwise_records);
    const std::string line = out.str();
    const auto j = ordered_json::parse(line.substr(0, line.find('\n')));
    auto it = j.begin();
    CHECK(it.key() == "prompt");
    CHECK((++it).key() == "chosen");
    CHECK((++it).key() == "rejected");
    CHECK((++it).key() == "meta");
    CHECK(j.at("meta").at("user_id") == "u1");
    CHECK(j.at("meta").at("window_w") == 30);
    CHECK(j.at("meta").at("chosen_model") == "m");
    CHECK(j.at("meta").at("chosen_index") == 0);
    CHECK(j.at("meta").at("rejected_model") == "m");
    CHECK(j.at("meta").at("rejected_index") == 1);

    std::ostringstream out2;
    export_examples(out2, examples, ExportFormat::pairwise_records);
    CHECK(out.str() == out2.str());

    // Round trip.
    std::istringstream in(out.str());
    const auto back = load_examples(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].chosen == examples[0].chosen);
}

TEST_CASE("export flat format writes two lines per pair") {
    std::vector<EvaluatedSample> pool = {evaluated("u1", "m", 0, 30, true),
                                         evaluated("u1", "m", 1, 30, false)};
    const auto examples =
        to_dpo_examples(pairs_for_user(pool, SentimentLabel::like, kUnlimited),
                        [](const std::string&, int) { return "P"; });
    std::ostringstream out;
    export_examples(out, examples, ExportFormat::flat_records);
    std::istringstream in(out.str());
    std::string l1, l2;
    REQUIRE(std::getline(in, l1));
    REQUIRE(std::getline(in, l2));
    CHECK(ordered_json::parse(l1).at("preferred") == true);
    CHECK(ordered_json::parse(l2).at("preferred") == false);
    CHECK(ordered_json::parse(l1).at("response") == examples[0].chosen);
    CHECK(ordered_json::parse(l2).at("response") == examples[0].rejected);
}

TEST_CASE("export refuses an empty example list") {
    std::ostringstream out;
    CHECK_THROWS_AS(export_examples(out, {}, ExportFormat::pairwise_records), EmptyDataset);
    CHECK(out.str().empty());
}

TEST_CASE("pairs.pref line records round trip") {
    std::vector<EvaluatedSample> pool = {evaluated("uA", "m1", 0, 50, true),
                                         evaluated("uA", "m2", 1, 50, false)};
    const auto pairs = pairs_for_user(pool, SentimentLabel::dislike, kUnlimited);
    std::ostringstream out;
    write_pairs(out, pairs);
    std::istringstream in(out.str());
    const auto back = load_pairs(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].truth == SentimentLabel::dislike);
    CHECK(back[0].window_w == 50);
    std::ostringstream out2;
    write_pairs(out2, back);
    CHECK(out.str() == out2.str());
}
