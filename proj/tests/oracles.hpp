#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace testing {

// Brute force over all positive/negative pairs.
inline double auroc_pairs(std::span<const double> s, std::span<const int> y) {
  double credit = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return credit / pairs;
}

// Rank of each item = 1 + #items ahead of it (higher score, or equal score and
// lower index), found by counting; precision@rank summed in rank order.
inline double ap_ranks(std::span<const double> s, std::span<const int> y) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank[i];
    }
  }
  std::vector<std::size_t> pos_ranks;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i]) pos_ranks.push_back(rank[i]);
  }
  std::sort(pos_ranks.begin(), pos_ranks.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < pos_ranks.size(); ++k) {
    sum += static_cast<double>(k + 1) / static_cast<double>(pos_ranks[k]);
  }
  return sum / static_cast<double>(pos_ranks.size());
}

}  // namespace testing
