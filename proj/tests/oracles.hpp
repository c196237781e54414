#pragma once

// Brute-force reference implementations used as test oracles.

#include <httpsem/httpsem.hpp>

namespace oracle {

using namespace httpsem;

// Best depth-1 split by weighted Gini, compared exactly as fractions.
// Ties go to the lower feature, then the lower threshold. No split unless
// it strictly lowers impurity.
struct Stump {
  bool split = false;
  std::size_t feature = 0;
  double threshold = 0;
  std::vector<std::uint32_t> root, left, right;
};

inline Stump best_stump(const std::vector<std::vector<double>>& x, const std::vector<int>& y, std::size_t k) {
  const std::size_t n = x.size(), d = x.at(0).size();
  Stump s;
  s.root.assign(k, 0);
  for (int c : y) ++s.root[static_cast<std::size_t>(c)];
  // Score = sum(l^2)/nl + sum(r^2)/nr; larger is purer. Kept as num/den.
  std::int64_t best_num = 0, best_den = 1;
  for (auto c : s.root) best_num += std::int64_t{c} * c;
  best_den = static_cast<std::int64_t>(n);
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<double> values;
    for (const auto& row : x) values.push_back(row[f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t t = 0; t + 1 < values.size(); ++t) {
      double thr = (values[t] + values[t + 1]) / 2;
      std::vector<std::uint32_t> l(k, 0), r(k, 0);
      for (std::size_t i = 0; i < n; ++i) (x[i][f] <= thr ? l : r)[static_cast<std::size_t>(y[i])]++;
      std::int64_t nl = 0, nr = 0, sl = 0, sr = 0;
      for (std::size_t c = 0; c < k; ++c) {
        nl += l[c];
        nr += r[c];
        sl += std::int64_t{l[c]} * l[c];
        sr += std::int64_t{r[c]} * r[c];
      }
      std::int64_t num = sl * nr + sr * nl, den = nl * nr;
      // Candidates are visited in (feature, threshold) order, so only a
      // strictly better score replaces the incumbent.
      if (num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        s.split = true;
        s.feature = f;
        s.threshold = thr;
        s.left = l;
        s.right = r;
      }
    }
  }
  return s;
}

// Label-pair based metrics, straight from the definitions.
inline double macro_f1(const std::vector<std::pair<int, int>>& pairs, std::size_t k) {
  double sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (auto [t, p] : pairs) {
      bool is_t = static_cast<std::size_t>(t) == c, is_p = static_cast<std::size_t>(p) == c;
      tp += is_t && is_p;
      fp += !is_t && is_p;
      fn += is_t && !is_p;
    }
    double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(k);
}

inline double accuracy(const std::vector<std::pair<int, int>>& pairs) {
  double hit = 0;
  for (auto [t, p] : pairs) hit += t == p;
  return hit / static_cast<double>(pairs.size());
}

}  // namespace oracle
