#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "prefalign/errors.hpp"
#include "prefalign/hash.hpp"
#include "prefalign/pairgen.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

// ---------------------------------------------------------------------------
// Hashed bag-of-ngrams featurizer
// ---------------------------------------------------------------------------

/// Sparse feature vector; entries sorted by index, indices unique.
struct SparseVec {
    std::vector<std::pair<std::uint32_t, double>> entries;
};

namespace detail {

inline std::vector<std::string> tokenize_lower(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline void hash_into(std::map<std::uint32_t, double>& acc, std::string_view ngram,
                      std::uint32_t feature_dim) {
    const std::uint64_t h = fnv1a64(ngram);
    const auto idx = static_cast<std::uint32_t>(h % feature_dim);
    const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
    acc[idx] += sign;
}

}  // namespace detail

/// Signed hashing of unigrams and bigrams over lowercase alphanumeric tokens.
inline SparseVec featurize(std::string_view text, std::uint32_t feature_dim) {
    if (feature_dim < 1) throw ContractError("featurize: feature_dim must be >= 1");
    const auto tokens = detail::tokenize_lower(text);
    std::map<std::uint32_t, double> acc;
    for (const auto& t : tokens) detail::hash_into(acc, t, feature_dim);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        detail::hash_into(acc, tokens[i] + '\x1f' + tokens[i + 1], feature_dim);
    SparseVec v;
    v.entries.reserve(acc.size());
    for (const auto& [idx, val] : acc)
        if (val != 0.0) v.entries.emplace_back(idx, val);
    return v;
}

inline double dot(const std::vector<double>& theta, const SparseVec& v) {
    double s = 0.0;
    for (const auto& [idx, val] : v.entries) {
        if (idx >= theta.size()) throw ContractError("feature index out of range");
        s += theta[idx] * val;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Loss and gradient
// ---------------------------------------------------------------------------

struct FeaturePair {
    SparseVec plus;
    SparseVec minus;
};

/// Featurized preference batch. With beta = 1 and zero reference deltas the
/// loss below is exactly mean(-log sigmoid(score+ - score-)); the beta
/// temperature and per-pair reference deltas extend it to the standard
/// reference-anchored form.
struct DpoBatch {
    std::vector<FeaturePair> pairs;
    double beta = 1.0;
    std::vector<double> reference_deltas;  // empty = all zero

    void validate() const {
        if (beta <= 0.0) throw ContractError("dpo batch: beta must be positive");
        if (!reference_deltas.empty() && reference_deltas.size() != pairs.size())
            throw ContractError("dpo batch: reference_deltas length mismatch");
    }

    double ref_delta(std::size_t i) const {
        return reference_deltas.empty() ? 0.0 : reference_deltas[i];
    }
};

namespace detail {

inline double softplus(double x) {  // log(1 + e^x), stable at both tails
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Fixed-order pairwise tree reduction; bit-stable for a given input order.
inline double pairwise_sum(const double* xs, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xs[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(xs, half) + pairwise_sum(xs + half, n - half);
}

inline double pair_margin(const std::vector<double>& theta, const FeaturePair& p) {
    return dot(theta, p.plus) - dot(theta, p.minus);
}

}  // namespace detail

/// mean over pairs of -log sigmoid(beta * ((theta.phi+ - theta.phi-) - ref)).
inline double dpo_loss(const std::vector<double>& theta, const DpoBatch& batch) {
    batch.validate();
    if (batch.pairs.empty()) throw ContractError("dpo_loss: empty batch");
    std::vector<double> losses(batch.pairs.size());
    for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
        const double z = batch.beta * (detail::pair_margin(theta, batch.pairs[i]) -
                                       batch.ref_delta(i));
        losses[i] = detail::softplus(-z);
    }
    return detail::pairwise_sum(losses.data(), losses.size()) /
           static_cast<double>(losses.size());
}

/// Analytic gradient of dpo_loss (the regularizer, when any, is added by the
/// trainer, not here). Accumulated in pair-index order.
inline std::vector<double> dpo_grad(const std::vector<double>& theta, const DpoBatch& batch) {
    batch.validate();
    if (batch.pairs.empty()) throw ContractError("dpo_grad: empty batch");
    std::vector<double> grad(theta.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.pairs.size());
    for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
        const FeaturePair& p = batch.pairs[i];
        const double z =
            batch.beta * (detail::pair_margin(theta, p) - batch.ref_delta(i));
        const double coef = -batch.beta * detail::sigmoid(-z) * inv_n;
        for (const auto& [idx, val] : p.plus.entries) grad[idx] += coef * val;
        for (const auto& [idx, val] : p.minus.entries) grad[idx] -= coef * val;
    }
    return grad;
}

/// Central finite differences on every touched coordinate; returns the max
/// relative error against the analytic gradient.
inline double grad_check(const std::vector<double>& theta, const DpoBatch& batch, double step) {
    if (step <= 0.0) throw ContractError("grad_check: step must be positive");
    const auto analytic = dpo_grad(theta, batch);
    std::vector<std::uint32_t> touched;
    for (const auto& p : batch.pairs) {
        for (const auto& [idx, val] : p.plus.entries) touched.push_back(idx);
        for (const auto& [idx, val] : p.minus.entries) touched.push_back(idx);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    std::vector<double> probe = theta;
    double max_err = 0.0;
    for (std::uint32_t idx : touched) {
        const double saved = probe[idx];
        probe[idx] = saved + step;
        const double up = dpo_loss(probe, batch);
        probe[idx] = saved - step;
        const double down = dpo_loss(probe, batch);
        probe[idx] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[idx];
        const double err = std::abs(a - numeric) /
                           std::max({1.0, std::abs(a), std::abs(numeric)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

// ---------------------------------------------------------------------------
// Toy scorer training
// ---------------------------------------------------------------------------

struct ToyScorer {
    std::uint32_t feature_dim = 1 << 16;
    std::int64_t seed = 0;
    std::vector<double> theta;

    double score(std::string_view text) const {
        return dot(theta, featurize(text, feature_dim));
    }
};

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 10;
    double l2 = 0.0;
    std::int64_t seed = 0;
    int batch_size = 0;  // <= 0: full batch

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (l2 < 0.0) throw ConfigError("l2 must be >= 0");
    }
};

struct TraceRow {
    int epoch = 0;  // 0 is the pre-training baseline
    double loss = 0.0;
    double pairwise_acc = 0.0;
};

struct TrainResult {
    ToyScorer scorer;
    std::vector<TraceRow> trace;
};

/// Fraction of pairs scored chosen > rejected; exact ties count one half.
inline double pairwise_accuracy(const std::vector<double>& theta,
                                const std::vector<FeaturePair>& pairs) {
    if (pairs.empty()) throw UndefinedMetric("pairwise_accuracy over zero pairs");
    double wins = 0.0;
    for (const auto& p : pairs) {
        const double d = detail::pair_margin(theta, p);
        if (d > 0)
            wins += 1.0;
        else if (d == 0)
            wins += 0.5;
    }
    return wins / static_cast<double>(pairs.size());
}

inline std::vector<FeaturePair> featurize_examples(const std::vector<DpoExample>& examples,
                                                   std::uint32_t feature_dim) {
    std::vector<FeaturePair> pairs;
    pairs.reserve(examples.size());
    for (const auto& e : examples)
        pairs.push_back({featurize(e.chosen, feature_dim), featurize(e.rejected, feature_dim)});
    return pairs;
}

/// Largest step size with a guaranteed monotone full-batch descent for this
/// batch (1 / smoothness bound, with the l2 term included).
inline double stable_learning_rate(const DpoBatch& batch, double l2 = 0.0) {
    double max_sq = 0.0;
    for (const auto& p : batch.pairs) {
        std::map<std::uint32_t, double> delta;
        for (const auto& [idx, val] : p.plus.entries) delta[idx] += val;
        for (const auto& [idx, val] : p.minus.entries) delta[idx] -= val;
        double sq = 0.0;
        for (const auto& [idx, val] : delta) sq += val * val;
        max_sq = std::max(max_sq, sq);
    }
    const double smoothness = batch.beta * batch.beta * 0.25 * max_sq + 2.0 * l2;
    if (smoothness <= 0.0) return 1.0;
    return 1.0 / smoothness;
}

/// Mini-batch gradient descent with a deterministic shuffle schedule. The
/// traced loss is the full-batch objective (dpo loss + l2 penalty).
inline TrainResult train(const std::vector<DpoExample>& examples, const TrainConfig& cfg,
                         std::uint32_t feature_dim = 1 << 16, double beta = 1.0,
                         double ref_delta = 0.0) {
    cfg.validate();
    if (examples.empty()) throw EmptyDataset("train: empty example stream");

    DpoBatch full;
    full.pairs = featurize_examples(examples, feature_dim);
    full.beta = beta;
    if (ref_delta != 0.0) full.reference_deltas.assign(full.pairs.size(), ref_delta);

    std::vector<double> theta(feature_dim, 0.0);
    auto objective = [&] {
        double l2_term = 0.0;
        if (cfg.l2 > 0.0)
            for (double t : theta) l2_term += t * t;
        return dpo_loss(theta, full) + cfg.l2 * l2_term;
    };
    auto record = [&](int epoch, std::vector<TraceRow>& trace) {
        TraceRow row;
        row.epoch = epoch;
        row.loss = objective();
        row.pairwise_acc = pairwise_accuracy(theta, full.pairs);
        if (!(row.loss <= 1e6))  // catches NaN as well
            throw DivergenceError(epoch, row.loss);
        trace.push_back(row);
    };

    TrainResult result;
    record(0, result.trace);

    const std::size_t n = full.pairs.size();
    const std::size_t batch_size =
        cfg.batch_size <= 0 ? n : std::min<std::size_t>(cfg.batch_size, n);
    std::mt19937_64 gen(static_cast<std::uint64_t>(cfg.seed));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        deterministic_shuffle(order, gen);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t stop = std::min(n, start + batch_size);
            DpoBatch mini;
            mini.beta = beta;
            mini.pairs.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) mini.pairs.push_back(full.pairs[order[i]]);
            if (ref_delta != 0.0) mini.reference_deltas.assign(mini.pairs.size(), ref_delta);
            auto grad = dpo_grad(theta, mini);
            if (cfg.l2 > 0.0)
                for (std::size_t i = 0; i < theta.size(); ++i) grad[i] += 2.0 * cfg.l2 * theta[i];
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.learning_rate * grad[i];
        }
        record(epoch, result.trace);
    }

    result.scorer.feature_dim = feature_dim;
    result.scorer.seed = cfg.seed;
    result.scorer.theta = std::move(theta);
    return result;
}

// ---------------------------------------------------------------------------
// Scorer file and training trace
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const std::string& s, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline constexpr char kScorerMagic[9] = "PFALSCR1";

inline std::string serialize_scorer(const ToyScorer& s) {
    std::string out(kScorerMagic, 8);
    detail::put_u64_le(out, s.feature_dim);
    detail::put_u64_le(out, static_cast<std::uint64_t>(s.seed));
    for (double t : s.theta) {
        std::uint64_t bits = 0;
        static_assert(sizeof(bits) == sizeof(t));
        std::memcpy(&bits, &t, sizeof(bits));
        detail::put_u64_le(out, bits);
    }
    return out;
}

inline ToyScorer deserialize_scorer(const std::string& bytes) {
    if (bytes.size() < 24 || bytes.compare(0, 8, kScorerMagic, 8) != 0)
        throw ContractError("scorer file: bad magic or truncated header");
    ToyScorer s;
    s.feature_dim = static_cast<std::uint32_t>(detail::get_u64_le(bytes, 8));
    s.seed = static_cast<std::int64_t>(detail::get_u64_le(bytes, 16));
    const std::size_t n = (bytes.size() - 24) / 8;
    if (24 + n * 8 != bytes.size() || n != s.feature_dim)
        throw ContractError("scorer file: length does not match feature_dim");
    s.theta.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t bits = detail::get_u64_le(bytes, 24 + i * 8);
        std::memcpy(&s.theta[i], &bits, sizeof(double));
    }
    return s;
}

inline std::string format_trace(const std::vector<TraceRow>& trace) {
    std::string out = "epoch\tloss\tpairwise_accuracy\n";
    char buf[96];
    for (const auto& row : trace) {
        std::snprintf(buf, sizeof(buf), "%d\t%.12g\t%.6f\n", row.epoch, row.loss,
                      row.pairwise_acc);
        out += buf;
    }
    return out;
}

}  // namespace prefalign
