#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "prefalign/evaluate.hpp"
#include "test_util.hpp"

using namespace prefalign;
using test_util::make_record;

// ---------------------------------------------------------------------------
// Independent brute-force oracle: per-class precision/recall/F1 computed from
// first principles on raw counts. Kept deliberately separate from the
// implementation under test.
// ---------------------------------------------------------------------------

namespace oracle {

struct Result {
    double accuracy;
    double weighted_f1;
    double macro_f1;
};

inline Result compute(const long long counts[3][3], const long long failures[3]) {
    long long total = 0;
    for (int t = 0; t < 3; ++t) {
        total += failures[t];
        for (int p = 0; p < 3; ++p) total += counts[t][p];
    }
    long long diag = 0;
    for (int c = 0; c < 3; ++c) diag += counts[c][c];

    double f1[3];
    double support[3];
    for (int c = 0; c < 3; ++c) {
        long long predicted_as_c = 0;
        for (int t = 0; t < 3; ++t) predicted_as_c += counts[t][c];
        long long truly_c = failures[c];
        for (int p = 0; p < 3; ++p) truly_c += counts[c][p];
        support[c] = static_cast<double>(truly_c);
        const double tp = static_cast<double>(counts[c][c]);
        const double prec = predicted_as_c > 0 ? tp / static_cast<double>(predicted_as_c) : 0.0;
        const double rec = truly_c > 0 ? tp / static_cast<double>(truly_c) : 0.0;
        f1[c] = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    Result r;
    r.accuracy = static_cast<double>(diag) / static_cast<double>(total);
    r.weighted_f1 = 0.0;
    for (int c = 0; c < 3; ++c)
        r.weighted_f1 += support[c] / static_cast<double>(total) * f1[c];
    r.macro_f1 = (f1[0] + f1[1] + f1[2]) / 3.0;
    return r;
}

}  // namespace oracle

namespace {

ConfusionMatrix matrix_from(const long long counts[3][3], const long long failures[3]) {
    ConfusionMatrix cm;
    for (int t = 0; t < 3; ++t) {
        cm.failures[t] = failures[t];
        for (int p = 0; p < 3; ++p) cm.counts[t][p] = counts[t][p];
    }
    return cm;
}

}  // namespace

TEST_CASE("parse_sentiment normalization and ambiguity") {
    CHECK(parse_sentiment("like") == SentimentLabel::like);
    CHECK(parse_sentiment(" Neutral.\n") == SentimentLabel::neutral);
    CHECK(parse_sentiment("DISLIKE!") == SentimentLabel::dislike);
    CHECK(parse_sentiment("\"like\"") == SentimentLabel::like);
    CHECK(parse_sentiment("I would say the user will like this") == SentimentLabel::like);
    CHECK_FALSE(parse_sentiment("I would say like, maybe dislike").has_value());
    CHECK_FALSE(parse_sentiment("").has_value());
    CHECK_FALSE(parse_sentiment("unlikely").has_value());   // not a whole word
    CHECK_FALSE(parse_sentiment("likes").has_value());      // not a whole word
    CHECK_FALSE(parse_sentiment("no opinion").has_value());
    CHECK(parse_sentiment("like like like") == SentimentLabel::like);  // one distinct label
}

TEST_CASE("confusion counts cells and failures separately") {
    std::vector<PredictionOutcome> outcomes;
    for (int i = 0; i < 3; ++i) {
        PredictionOutcome o;
        o.user_id = "u";
        o.truth = SentimentLabel::like;
        o.parsed = SentimentLabel::like;
        o.correct = true;
        outcomes.push_back(o);
    }
    PredictionOutcome failure;
    failure.truth = SentimentLabel::neutral;
    failure.parsed = std::nullopt;
    outcomes.push_back(failure);

    const auto cm = confusion(outcomes);
    CHECK(cm.counts[0][0] == 3);
    CHECK(cm.parse_failures() == 1);
    CHECK(cm.grid_total() == 3);
    CHECK(cm.total_outcomes() == 4);

    CHECK(confusion({}).total_outcomes() == 0);
}

TEST_CASE("accuracy from hand-counted matrices") {
    {
        long long counts[3][3] = {{45, 5, 0}, {20, 0, 0}, {30, 0, 0}};
        long long failures[3] = {0, 0, 0};
        // diag = 45, total = 100
        CHECK(accuracy(matrix_from(counts, failures)) ==
              Catch::Approx(0.45).epsilon(1e-15));
    }
    {
        long long counts[3][3] = {{9, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        long long failures[3] = {1, 0, 0};
        // 9 correct of 10 outcomes
        CHECK(accuracy(matrix_from(counts, failures)) == Catch::Approx(0.9).epsilon(1e-15));
    }
    CHECK_THROWS_AS(accuracy(ConfusionMatrix{}), UndefinedMetric);
    CHECK_THROWS_AS(weighted_f1(ConfusionMatrix{}), UndefinedMetric);
    CHECK_THROWS_AS(macro_f1(ConfusionMatrix{}), UndefinedMetric);
}

TEST_CASE("perfect diagonal gives all metrics 1.0") {
    long long counts[3][3] = {{7, 0, 0}, {0, 4, 0}, {0, 0, 9}};
    long long failures[3] = {0, 0, 0};
    const auto cm = matrix_from(counts, failures);
    CHECK(accuracy(cm) == 1.0);
    CHECK(weighted_f1(cm) == 1.0);
    CHECK(macro_f1(cm) == 1.0);
}

TEST_CASE("spec example matrix matches the brute-force oracle to 1e-12") {
    long long counts[3][3] = {{8, 2, 0}, {1, 4, 0}, {0, 1, 4}};
    long long failures[3] = {0, 0, 0};
    const auto cm = matrix_from(counts, failures);
    const auto expect = oracle::compute(counts, failures);
    CHECK(std::abs(weighted_f1(cm) - expect.weighted_f1) < 1e-12);
    CHECK(std::abs(macro_f1(cm) - expect.macro_f1) < 1e-12);
    CHECK(std::abs(accuracy(cm) - expect.accuracy) < 1e-12);
}

TEST_CASE("single-class data: macro 1/3, weighted 1.0") {
    long long counts[3][3] = {{12, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    long long failures[3] = {0, 0, 0};
    const auto cm = matrix_from(counts, failures);
    CHECK(weighted_f1(cm) == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(macro_f1(cm) == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("100 random matrices with failures agree with the oracle to 1e-12") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        long long counts[3][3];
        long long failures[3];
        long long total = 0;
        for (int t = 0; t < 3; ++t) {
            failures[t] = static_cast<long long>(gen() % 4);
            total += failures[t];
            for (int p = 0; p < 3; ++p) {
                counts[t][p] = static_cast<long long>(gen() % 30);
                total += counts[t][p];
            }
        }
        if (total == 0) counts[0][0] = 1;
        const auto cm = matrix_from(counts, failures);
        const auto expect = oracle::compute(counts, failures);
        REQUIRE(std::abs(weighted_f1(cm) - expect.weighted_f1) < 1e-12);
        REQUIRE(std::abs(macro_f1(cm) - expect.macro_f1) < 1e-12);
        REQUIRE(std::abs(accuracy(cm) - expect.accuracy) < 1e-12);

        // Bounds.
        REQUIRE(accuracy(cm) >= 0.0);
        REQUIRE(accuracy(cm) <= 1.0);
        REQUIRE(weighted_f1(cm) >= 0.0);
        REQUIRE(weighted_f1(cm) <= 1.0);
        REQUIRE(macro_f1(cm) >= 0.0);
        REQUIRE(macro_f1(cm) <= 1.0);
    }
}

TEST_CASE("label permutation leaves accuracy and macro_f1 unchanged") {
    std::mt19937_64 gen(7);
    const int perm[3] = {2, 0, 1};  // cyclic relabeling
    for (int trial = 0; trial < 20; ++trial) {
        long long counts[3][3];
        long long failures[3];
        for (int t = 0; t < 3; ++t) {
            failures[t] = static_cast<long long>(gen() % 3);
            for (int p = 0; p < 3; ++p) counts[t][p] = static_cast<long long>(gen() % 20);
        }
        counts[0][0] += 1;
        long long pcounts[3][3];
        long long pfailures[3];
        for (int t = 0; t < 3; ++t) {
            pfailures[perm[t]] = failures[t];
            for (int p = 0; p < 3; ++p) pcounts[perm[t]][perm[p]] = counts[t][p];
        }
        const auto cm = matrix_from(counts, failures);
        const auto pcm = matrix_from(pcounts, pfailures);
        REQUIRE(std::abs(accuracy(cm) - accuracy(pcm)) < 1e-15);
        REQUIRE(std::abs(macro_f1(cm) - macro_f1(pcm)) < 1e-15);
    }
}

TEST_CASE("equal support makes weighted and macro F1 coincide") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 20; ++trial) {
        // Build rows with equal totals (support 20 each, no failures).
        long long counts[3][3];
        long long failures[3] = {0, 0, 0};
        for (int t = 0; t < 3; ++t) {
            long long a = static_cast<long long>(gen() % 21);
            long long b = static_cast<long long>(gen() % (21 - a));
            counts[t][0] = a;
            counts[t][1] = b;
            counts[t][2] = 20 - a - b;
        }
        const auto cm = matrix_from(counts, failures);
        REQUIRE(std::abs(weighted_f1(cm) - macro_f1(cm)) < 1e-12);
    }
}

TEST_CASE("repairing a parse failure never decreases any metric") {
    std::mt19937_64 gen(13);
    for (int trial = 0; trial < 50; ++trial) {
        long long counts[3][3];
        long long failures[3];
        for (int t = 0; t < 3; ++t) {
            failures[t] = 1 + static_cast<long long>(gen() % 3);
            for (int p = 0; p < 3; ++p) counts[t][p] = static_cast<long long>(gen() % 10);
        }
        const int c = static_cast<int>(gen() % 3);  // class whose failure we repair
        const auto before = matrix_from(counts, failures);
        long long counts2[3][3];
        long long failures2[3];
        std::memcpy(counts2, counts, sizeof(counts));
        std::memcpy(failures2, failures, sizeof(failures));
        failures2[c] -= 1;
        counts2[c][c] += 1;
        const auto after = matrix_from(counts2, failures2);
        REQUIRE(accuracy(after) >= accuracy(before) - 1e-15);
        REQUIRE(weighted_f1(after) >= weighted_f1(before) - 1e-15);
        REQUIRE(macro_f1(after) >= macro_f1(before) - 1e-15);
    }
}

// ---------------------------------------------------------------------------
// predict() against mocks
// ---------------------------------------------------------------------------

namespace {

EvalInstance small_instance(const std::string& user, SentimentLabel truth) {
    // Titles embed the user id: distinct users must render distinct prompt
    // text, as real histories do, or the content-addressed cache would
    // legitimately coalesce their completions.
    std::vector<InteractionRecord> records;
    const int total = 41;  // 1 + K10 + W30
    for (int i = 0; i < total; ++i)
        records.push_back(make_record(user, "i" + std::to_string(i), 3.0, 1000 + total - i,
                                      SentimentLabel::neutral,
                                      {{"Title", user + "-T" + std::to_string(i)}, {"Genre", "G"}}));
    auto timeline = build_timeline(records);
    timeline.records[0].sentiment = truth;
    return make_eval_instance(timeline, 10, 30);
}

ProfileSample ok_sample(const std::string& user, const std::string& text) {
    ProfileSample s;
    s.user_id = user;
    s.model_id = "gen";
    s.sample_index = 0;
    s.window_w = 30;
    s.text = text;
    s.ok = true;
    return s;
}

}  // namespace

TEST_CASE("predict with oracle mock is always correct") {
    Gateway gate;
    gate.set_oracle_table({{"u1", SentimentLabel::dislike}});
    ModelSpec oracle_spec;
    oracle_spec.model_id = "oracle";
    oracle_spec.kind = ModelKind::mock_oracle;
    const auto inst = small_instance("u1", SentimentLabel::dislike);
    const auto outcome = predict(inst, nullptr, oracle_spec, gate);
    CHECK(outcome.correct);
    CHECK(outcome.parsed == SentimentLabel::dislike);
}

TEST_CASE("predict with constant mock scores against truth") {
    Gateway gate;
    ModelSpec constant;
    constant.model_id = "const-like";
    constant.kind = ModelKind::mock_constant;
    constant.constant_text = "like";
    const auto inst = small_instance("u1", SentimentLabel::dislike);
    const auto outcome = predict(inst, nullptr, constant, gate);
    CHECK_FALSE(outcome.correct);
    CHECK(outcome.parsed == SentimentLabel::like);
    CHECK(outcome.truth == SentimentLabel::dislike);
}

TEST_CASE("scripted mock rewards the profile block") {
    Gateway gate;
    ModelSpec scripted;
    scripted.model_id = "profile-sensitive";
    scripted.kind = ModelKind::mock_scripted;
    scripted.script.rules = {{"USER PROFILE:", "neutral"}};
    scripted.script.default_reply = "dislike";

    const auto inst = small_instance("u1", SentimentLabel::neutral);
    const auto sample = ok_sample("u1", "a helpful profile");
    CHECK(predict(inst, &sample, scripted, gate).correct);
    CHECK_FALSE(predict(inst, nullptr, scripted, gate).correct);
}

TEST_CASE("predictor temperature must be zero") {
    Gateway gate;
    ModelSpec warm;
    warm.model_id = "warm";
    warm.kind = ModelKind::mock_constant;
    warm.constant_text = "like";
    warm.temperature = 0.7;
    const auto inst = small_instance("u1", SentimentLabel::like);
    CHECK_THROWS_AS(predict(inst, nullptr, warm, gate), ContractError);
}

TEST_CASE("gateway exhaustion records a failed outcome instead of aborting") {
    GatewayOptions opts;
    opts.max_attempts = 2;
    opts.backoff_base = std::chrono::milliseconds(1);
    opts.transport = [](const ModelSpec&, const std::string&) {
        TransportReply r;
        r.ok = false;
        r.error = "refused";
        return r;
    };
    Gateway gate(std::move(opts));
    ModelSpec live;
    live.model_id = "down";
    live.kind = ModelKind::live;
    live.endpoint = "http://127.0.0.1:1/x";
    const auto inst = small_instance("u1", SentimentLabel::like);
    const auto outcome = predict(inst, nullptr, live, gate);
    CHECK_FALSE(outcome.correct);
    CHECK_FALSE(outcome.parsed.has_value());
    CHECK_FALSE(outcome.note.empty());
}

TEST_CASE("run_condition aggregates to a metrics report") {
    Gateway gate;
    gate.set_oracle_table({{"u1", SentimentLabel::like},
                           {"u2", SentimentLabel::neutral},
                           {"u3", SentimentLabel::dislike}});
    ModelSpec oracle_spec;
    oracle_spec.model_id = "oracle";
    oracle_spec.kind = ModelKind::mock_oracle;

    std::vector<EvalInstance> instances = {small_instance("u1", SentimentLabel::like),
                                           small_instance("u2", SentimentLabel::neutral),
                                           small_instance("u3", SentimentLabel::dislike)};
    Condition cond;
    cond.id = "10H";
    cond.profile_source = ProfileSource::none;
    const auto result = run_condition(cond, instances, {}, oracle_spec, gate);
    CHECK(result.report.accuracy == 1.0);
    CHECK(result.report.weighted_f1 == 1.0);
    CHECK(result.report.n == 3);

    ModelSpec constant;
    constant.model_id = "const";
    constant.kind = ModelKind::mock_constant;
    constant.constant_text = "like";
    const auto flat = run_condition(cond, instances, {}, constant, gate);
    CHECK(flat.report.accuracy == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("outcome line records round trip byte-stable") {
    PredictionOutcome o;
    o.user_id = "u1";
    o.profile_ref = ProfileRef{"gen", 3, 30};
    o.raw_text = " Like.\n";
    o.parsed = SentimentLabel::like;
    o.truth = SentimentLabel::like;
    o.correct = true;
    PredictionOutcome f;
    f.user_id = "u2";
    f.raw_text = "???";
    f.truth = SentimentLabel::neutral;
    f.note = "transport exhausted";

    std::ostringstream out;
    write_outcomes(out, {o, f});
    std::istringstream in(out.str());
    const auto back = load_outcomes(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].profile_ref->sample_index == 3);
    CHECK(back[1].parsed == std::nullopt);
    std::ostringstream out2;
    write_outcomes(out2, back);
    CHECK(out.str() == out2.str());
}
