#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "prefalign/errors.hpp"

namespace prefalign {

// std::mt19937_64's output sequence is fully specified by the standard; the
// standard *distributions* are not. All sampling below draws from the raw
// engine so results are identical across toolchains.

/// Uniform integer in [0, n) by rejection.
inline std::uint64_t bounded_draw(std::mt19937_64& gen, std::uint64_t n) {
    if (n == 0) throw ContractError("bounded_draw: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen();
    while (v >= limit) v = gen();
    return v % n;
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& gen) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(bounded_draw(gen, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Choose n_take of n_total indices uniformly without replacement, returned
/// in increasing order (callers keep their original element order).
inline std::vector<std::size_t> sample_indices(std::size_t n_total, std::size_t n_take,
                                               std::mt19937_64& gen) {
    if (n_take > n_total) throw ContractError("sample_indices: n_take exceeds n_total");
    std::vector<std::size_t> idx(n_total);
    for (std::size_t i = 0; i < n_total; ++i) idx[i] = i;
    // Partial Fisher-Yates: the first n_take slots end up a uniform subset.
    for (std::size_t i = 0; i < n_take; ++i) {
        std::size_t j = i + static_cast<std::size_t>(bounded_draw(gen, n_total - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n_take);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace prefalign
