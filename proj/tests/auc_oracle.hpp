#pragma once

// O(n^2) pair counting: P(score_pos > score_neg) + P(tie) / 2.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace nfuse::testing {

inline std::optional<double> pair_count_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

struct BinaryInstance {
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;
};

// Size 2..50, both classes present, scores drawn from a coarse grid so ties
// are frequent, plus exact duplicates injected.
inline BinaryInstance random_binary_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> size(2, 50);
  std::uniform_int_distribution<int> level(0, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BinaryInstance inst;
  const std::size_t n = size(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = unit(rng) < 0.5 ? level(rng) / 10.0 : unit(rng);
    inst.scores.push_back(s);
    inst.positive.push_back(unit(rng) < 0.4 ? 1 : 0);
  }
  for (std::size_t k = 0; k < n / 5; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    inst.scores[pick(rng)] = inst.scores[pick(rng)];
  }
  inst.positive[0] = 1;
  inst.positive[1] = 0;
  return inst;
}

}  // namespace nfuse::testing
