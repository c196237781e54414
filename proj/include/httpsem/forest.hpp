#pragma once

// Random forest classifier: CART trees on Gini impurity with bootstrap
// resampling, per-node random feature subsets and native categorical splits.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "rng.hpp"

namespace httpsem {

struct TrainParams {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;           // 0 = unlimited
  std::size_t min_leaf = 1;
  std::size_t features_per_split = 0;  // 0 = ceil(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t n_jobs = 1;              // 0 = hardware concurrency

  bool operator==(const TrainParams& o) const {
    return n_trees == o.n_trees && max_depth == o.max_depth && min_leaf == o.min_leaf &&
           features_per_split == o.features_per_split && bootstrap == o.bootstrap && seed == o.seed;
  }
};

// Row-major samples with integer class labels.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n_features, std::vector<bool> categorical = {})
      : n_features_(n_features), categorical_(std::move(categorical)) {
    if (categorical_.empty()) categorical_.assign(n_features_, false);
    if (categorical_.size() != n_features_) throw SchemaError("categorical mask length mismatch");
  }

  void add(std::span<const double> x, int label) {
    if (x.size() != n_features_)
      throw SchemaError("sample has " + std::to_string(x.size()) + " features, expected " +
                        std::to_string(n_features_));
    if (label < 0) throw Error("negative class label");
    values_.insert(values_.end(), x.begin(), x.end());
    labels_.push_back(label);
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t n_features() const { return n_features_; }
  const std::vector<bool>& categorical() const { return categorical_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * n_features_, n_features_);
  }
  double at(std::size_t i, std::size_t f) const { return values_[i * n_features_ + f]; }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t n_classes() const {
    return labels_.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels_.begin(), labels_.end())) + 1;
  }

 private:
  std::size_t n_features_ = 0;
  std::vector<bool> categorical_;
  std::vector<double> values_;
  std::vector<int> labels_;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // numeric: x <= threshold goes left
  std::vector<std::int64_t> left_codes;  // categorical: code in set goes left (sorted)
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<std::uint32_t> counts;  // leaves only
  double importance = 0.0;            // weighted impurity decrease of this split

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      const double v = x[static_cast<std::size_t>(n.feature)];
      bool go_left;
      if (n.left_codes.empty()) {
        go_left = v <= n.threshold;
      } else {
        go_left = std::binary_search(n.left_codes.begin(), n.left_codes.end(), static_cast<std::int64_t>(v));
      }
      i = static_cast<std::size_t>(go_left ? n.left : n.right);
    }
    return nodes[i];
  }
  bool operator==(const Tree&) const = default;
};

struct ForestPrediction {
  int label = 0;
  std::vector<double> scores;
};

struct GiniImportance {
  std::vector<double> weights;
  bool no_splits = false;
};

class Forest;
inline Forest train_forest(const Dataset& data, const TrainParams& params, std::size_t n_classes = 0);

class Forest {
 public:
  Forest() = default;

  std::size_t n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const TrainParams& params() const { return params_; }
  const std::string& schema_id() const { return schema_id_; }
  void set_schema_id(std::string id) { schema_id_ = std::move(id); }
  const std::vector<std::string>& labels() const { return labels_; }
  void set_labels(std::vector<std::string> labels) { labels_ = std::move(labels); }
  const std::vector<bool>& categorical() const { return categorical_; }

  // Class scores are the mean of per-tree leaf class frequencies; ties in
  // the argmax go to the lowest class index.
  ForestPrediction predict(std::span<const double> x) const {
    if (x.size() != n_features_)
      throw SchemaError("predict: vector has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(n_features_));
    ForestPrediction p;
    p.scores.assign(n_classes_, 0.0);
    for (const auto& t : trees_) {
      const auto& leaf = t.leaf_for(x);
      double total = 0;
      for (auto c : leaf.counts) total += c;
      if (total <= 0) continue;
      for (std::size_t k = 0; k < n_classes_; ++k) p.scores[k] += leaf.counts[k] / total;
    }
    double sum = 0;
    for (double s : p.scores) sum += s;
    if (sum > 0)
      for (double& s : p.scores) s /= sum;
    p.label = static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
    return p;
  }

  int predict_label(std::span<const double> x) const { return predict(x).label; }

  GiniImportance gini_importance() const {
    GiniImportance g;
    g.weights.assign(n_features_, 0.0);
    for (const auto& t : trees_)
      for (const auto& n : t.nodes)
        if (!n.is_leaf()) g.weights[static_cast<std::size_t>(n.feature)] += n.importance;
    double total = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    if (total <= 0) {
      g.no_splits = true;
      std::fill(g.weights.begin(), g.weights.end(), 0.0);
      return g;
    }
    for (double& w : g.weights) w /= total;
    return g;
  }

  bool operator==(const Forest&) const = default;

  friend Forest train_forest(const Dataset& data, const TrainParams& params, std::size_t n_classes);
  friend nlohmann::json to_json(const Forest& f);
  friend Forest forest_from_json(const nlohmann::json& j);

 private:
  std::size_t n_classes_ = 0;
  std::size_t n_features_ = 0;
  std::vector<bool> categorical_;
  std::vector<Tree> trees_;
  TrainParams params_;
  std::string schema_id_;
  std::vector<std::string> labels_;
};

namespace detail {

// Split quality is sum_k(left_k^2)/n_left + sum_k(right_k^2)/n_right, which
// grows as the weighted child Gini impurity shrinks.
struct SplitCandidate {
  bool valid = false;
  double score = 0.0;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::vector<std::int64_t> left_codes;
};

inline double tie_epsilon(std::size_t n) { return 1e-12 * static_cast<double>(std::max<std::size_t>(n, 1)); }

// Better score wins; near-equal scores go to the lower feature index, then the
// lower threshold.
inline bool better_split(double score, std::size_t feature, double threshold, const SplitCandidate& best,
                         double eps) {
  if (!best.valid) return true;
  if (score > best.score + eps) return true;
  if (score < best.score - eps) return false;
  if (feature != best.feature) return feature < best.feature;
  return threshold < best.threshold;
}

inline double midpoint(double a, double b) {
  double m = a + (b - a) / 2.0;
  return (m >= b) ? a : m;
}

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, const TrainParams& params, std::size_t n_classes, std::size_t mtry,
              std::uint64_t seed)
      : data_(data), params_(params), k_(n_classes), mtry_(mtry), rng_(seed) {
    feature_order_.resize(data.n_features());
    std::iota(feature_order_.begin(), feature_order_.end(), std::size_t{0});
  }

  Tree build() {
    const std::size_t n = data_.size();
    std::vector<std::uint32_t> idx(n);
    if (params_.bootstrap) {
      for (auto& i : idx) i = static_cast<std::uint32_t>(rng_.below(n));
    } else {
      std::iota(idx.begin(), idx.end(), 0u);
    }
    n_root_ = static_cast<double>(n);
    Tree tree;
    struct Work {
      std::size_t node, begin, end, depth;
    };
    std::vector<Work> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, n, 0});
    std::vector<std::uint32_t> counts(k_);
    while (!stack.empty()) {
      Work w = stack.back();
      stack.pop_back();
      std::fill(counts.begin(), counts.end(), 0u);
      for (std::size_t i = w.begin; i < w.end; ++i) ++counts[static_cast<std::size_t>(data_.label(idx[i]))];
      const std::size_t m = w.end - w.begin;
      std::size_t nonzero = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
      bool leaf = nonzero <= 1 || m < 2 * params_.min_leaf ||
                  (params_.max_depth > 0 && w.depth >= params_.max_depth);
      SplitCandidate best;
      if (!leaf) {
        best = find_split(std::span<const std::uint32_t>(idx).subspan(w.begin, m), counts);
        double parent = 0;
        for (auto c : counts) parent += static_cast<double>(c) * c;
        parent /= static_cast<double>(m);
        if (!best.valid || best.score <= parent + tie_epsilon(m)) {
          leaf = true;
        } else {
          tree.nodes[w.node].importance = (best.score - parent) / n_root_;
        }
      }
      if (leaf) {
        tree.nodes[w.node].counts = counts;
        continue;
      }
      auto goes_left = [&](std::uint32_t s) {
        double v = data_.at(s, best.feature);
        if (best.left_codes.empty()) return v <= best.threshold;
        return std::binary_search(best.left_codes.begin(), best.left_codes.end(), static_cast<std::int64_t>(v));
      };
      auto mid = std::stable_partition(idx.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                       idx.begin() + static_cast<std::ptrdiff_t>(w.end), goes_left);
      std::size_t split = static_cast<std::size_t>(mid - idx.begin());
      auto left = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      auto right = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      auto& node = tree.nodes[w.node];
      node.feature = static_cast<std::int32_t>(best.feature);
      node.threshold = best.threshold;
      node.left_codes = std::move(best.left_codes);
      node.left = left;
      node.right = right;
      // Right child is pushed first so the left subtree is built first.
      stack.push_back({static_cast<std::size_t>(right), split, w.end, w.depth + 1});
      stack.push_back({static_cast<std::size_t>(left), w.begin, split, w.depth + 1});
    }
    return tree;
  }

 private:
  // Examines features in random order until mtry non-constant ones have been
  // evaluated (or all are exhausted).
  SplitCandidate find_split(std::span<const std::uint32_t> idx, const std::vector<std::uint32_t>& counts) {
    SplitCandidate best;
    const std::size_t d = feature_order_.size();
    std::size_t evaluated = 0;
    for (std::size_t j = 0; j < d && evaluated < mtry_; ++j) {
      std::size_t pick = j + rng_.below(d - j);
      std::swap(feature_order_[j], feature_order_[pick]);
      std::size_t f = feature_order_[j];
      bool informative = data_.categorical()[f] ? categorical_split(idx, counts, f, best)
                                                : numeric_split(idx, counts, f, best);
      if (informative) ++evaluated;
    }
    return best;
  }

  bool numeric_split(std::span<const std::uint32_t> idx, const std::vector<std::uint32_t>& counts, std::size_t f,
                     SplitCandidate& best) {
    const std::size_t m = idx.size();
    buf_.resize(m);
    for (std::size_t i = 0; i < m; ++i) buf_[i] = {data_.at(idx[i], f), data_.label(idx[i])};
    std::sort(buf_.begin(), buf_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (buf_.front().first == buf_.back().first) return false;
    left_.assign(k_, 0.0);
    right_.assign(counts.begin(), counts.end());
    double sq_left = 0, sq_right = 0;
    for (double c : right_) sq_right += c * c;
    const double eps = tie_epsilon(m);
    const std::size_t min_leaf = params_.min_leaf;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      auto c = static_cast<std::size_t>(buf_[i].second);
      sq_left += 2 * left_[c] + 1;
      left_[c] += 1;
      sq_right -= 2 * right_[c] - 1;
      right_[c] -= 1;
      if (buf_[i].first == buf_[i + 1].first) continue;
      const std::size_t nl = i + 1, nr = m - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      double score = sq_left / static_cast<double>(nl) + sq_right / static_cast<double>(nr);
      double thr = midpoint(buf_[i].first, buf_[i + 1].first);
      if (better_split(score, f, thr, best, eps)) {
        best.valid = true;
        best.score = score;
        best.feature = f;
        best.threshold = thr;
        best.left_codes.clear();
      }
    }
    return true;
  }

  // Codes are ordered by the proportion of one class and split at the best
  // prefix. With two classes this ordering is exact; with more, every class
  // is tried as the "one" in a one-vs-rest ordering.
  bool categorical_split(std::span<const std::uint32_t> idx, const std::vector<std::uint32_t>& counts,
                         std::size_t f, SplitCandidate& best) {
    std::map<std::int64_t, std::vector<double>> by_code;
    for (auto s : idx) {
      auto& v = by_code[static_cast<std::int64_t>(data_.at(s, f))];
      if (v.empty()) v.assign(k_, 0.0);
      v[static_cast<std::size_t>(data_.label(s))] += 1;
    }
    if (by_code.size() < 2) return false;
    std::vector<std::pair<std::int64_t, const std::vector<double>*>> codes;
    for (const auto& [code, v] : by_code) codes.emplace_back(code, &v);
    const std::size_t m = idx.size();
    const double eps = tie_epsilon(m);
    std::vector<std::size_t> order_classes;
    if (k_ == 2) {
      order_classes.push_back(1);
    } else {
      for (std::size_t c = 0; c < k_; ++c)
        if (counts[c] > 0) order_classes.push_back(c);
    }
    for (std::size_t cls : order_classes) {
      auto sorted = codes;
      std::stable_sort(sorted.begin(), sorted.end(), [cls](const auto& a, const auto& b) {
        double ta = std::accumulate(a.second->begin(), a.second->end(), 0.0);
        double tb = std::accumulate(b.second->begin(), b.second->end(), 0.0);
        double pa = (*a.second)[cls] / ta, pb = (*b.second)[cls] / tb;
        if (pa != pb) return pa > pb;
        return a.first < b.first;
      });
      left_.assign(k_, 0.0);
      right_.assign(counts.begin(), counts.end());
      double nl = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        for (std::size_t c = 0; c < k_; ++c) {
          double v = (*sorted[i].second)[c];
          left_[c] += v;
          right_[c] -= v;
          nl += v;
        }
        double nr = static_cast<double>(m) - nl;
        if (nl < static_cast<double>(params_.min_leaf) || nr < static_cast<double>(params_.min_leaf)) continue;
        double sq_l = 0, sq_r = 0;
        for (std::size_t c = 0; c < k_; ++c) {
          sq_l += left_[c] * left_[c];
          sq_r += right_[c] * right_[c];
        }
        double score = sq_l / nl + sq_r / nr;
        // Categorical candidates share threshold 0, so on a tie the first one
        // found is kept.
        if (better_split(score, f, 0.0, best, eps)) {
          best.valid = true;
          best.score = score;
          best.feature = f;
          best.threshold = 0.0;
          best.left_codes.clear();
          for (std::size_t j = 0; j <= i; ++j) best.left_codes.push_back(sorted[j].first);
          std::sort(best.left_codes.begin(), best.left_codes.end());
        }
      }
    }
    return true;
  }

  const Dataset& data_;
  const TrainParams& params_;
  std::size_t k_;
  std::size_t mtry_;
  Rng rng_;
  double n_root_ = 1;
  std::vector<std::size_t> feature_order_;
  std::vector<std::pair<double, int>> buf_;
  std::vector<double> left_, right_;
};

}  // namespace detail

inline std::size_t default_features_per_split(std::size_t d) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d)))));
}

// Trains n_trees trees, each from its own seed derived from params.seed, so
// the result does not depend on n_jobs.
inline Forest train_forest(const Dataset& data, const TrainParams& params, std::size_t n_classes) {
  if (data.empty()) throw Error("train_forest: no samples");
  if (params.n_trees == 0) throw Error("train_forest: n_trees must be >= 1");
  if (params.min_leaf == 0) throw Error("train_forest: min_leaf must be >= 1");
  const std::size_t d = data.n_features();
  if (d == 0) throw Error("train_forest: no features");
  std::size_t mtry = params.features_per_split ? params.features_per_split : default_features_per_split(d);
  if (mtry > d) throw Error("train_forest: features_per_split exceeds feature count");
  Forest f;
  f.n_classes_ = std::max(n_classes, data.n_classes());
  f.n_features_ = d;
  f.categorical_ = data.categorical();
  f.params_ = params;
  f.trees_.resize(params.n_trees);

  std::size_t jobs = params.n_jobs ? params.n_jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, params.n_trees);
  auto build = [&](std::size_t t) {
    detail::TreeBuilder b(data, params, f.n_classes_, mtry, derive_seed(params.seed, t));
    f.trees_[t] = b.build();
  };
  if (jobs <= 1) {
    for (std::size_t t = 0; t < params.n_trees; ++t) build(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t t; (t = next.fetch_add(1)) < params.n_trees;) build(t);
      });
    for (auto& th : pool) th.join();
  }
  return f;
}

inline nlohmann::json to_json(const Forest& f) {
  using nlohmann::json;
  json trees = json::array();
  for (const auto& t : f.trees_) {
    std::vector<std::int32_t> feature, left, right;
    std::vector<double> threshold, importance;
    std::vector<std::uint32_t> counts;
    json codes = json::array();
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const auto& n = t.nodes[i];
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      importance.push_back(n.importance);
      if (n.is_leaf()) counts.insert(counts.end(), n.counts.begin(), n.counts.end());
      if (!n.left_codes.empty()) codes.push_back(json::array({i, n.left_codes}));
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"importance", importance},
                     {"leaf_counts", counts},
                     {"codes", codes}});
  }
  std::vector<std::size_t> categorical;
  for (std::size_t i = 0; i < f.categorical_.size(); ++i)
    if (f.categorical_[i]) categorical.push_back(i);
  const auto& p = f.params_;
  return {{"format", "httpsem.forest"},
          {"version", 1},
          {"schema_id", f.schema_id_},
          {"n_features", f.n_features_},
          {"n_classes", f.n_classes_},
          {"labels", f.labels_},
          {"categorical", categorical},
          {"params",
           {{"n_trees", p.n_trees},
            {"max_depth", p.max_depth},
            {"min_leaf", p.min_leaf},
            {"features_per_split", p.features_per_split},
            {"bootstrap", p.bootstrap},
            {"seed", p.seed}}},
          {"trees", trees}};
}

inline Forest forest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "httpsem.forest") throw ParseError("not a forest model");
  if (j.at("version").get<int>() != 1) throw ParseError("unsupported forest model version");
  Forest f;
  f.schema_id_ = j.at("schema_id").get<std::string>();
  f.n_features_ = j.at("n_features").get<std::size_t>();
  f.n_classes_ = j.at("n_classes").get<std::size_t>();
  f.labels_ = j.at("labels").get<std::vector<std::string>>();
  f.categorical_.assign(f.n_features_, false);
  for (auto i : j.at("categorical").get<std::vector<std::size_t>>()) f.categorical_.at(i) = true;
  const auto& pj = j.at("params");
  f.params_.n_trees = pj.at("n_trees").get<std::size_t>();
  f.params_.max_depth = pj.at("max_depth").get<std::size_t>();
  f.params_.min_leaf = pj.at("min_leaf").get<std::size_t>();
  f.params_.features_per_split = pj.at("features_per_split").get<std::size_t>();
  f.params_.bootstrap = pj.at("bootstrap").get<bool>();
  f.params_.seed = pj.at("seed").get<std::uint64_t>();
  for (const auto& tj : j.at("trees")) {
    Tree t;
    auto feature = tj.at("feature").get<std::vector<std::int32_t>>();
    auto threshold = tj.at("threshold").get<std::vector<double>>();
    auto left = tj.at("left").get<std::vector<std::int32_t>>();
    auto right = tj.at("right").get<std::vector<std::int32_t>>();
    auto importance = tj.at("importance").get<std::vector<double>>();
    auto counts = tj.at("leaf_counts").get<std::vector<std::uint32_t>>();
    t.nodes.resize(feature.size());
    std::size_t c = 0;
    for (std::size_t i = 0; i < feature.size(); ++i) {
      auto& n = t.nodes[i];
      n.feature = feature[i];
      n.threshold = threshold.at(i);
      n.left = left.at(i);
      n.right = right.at(i);
      n.importance = importance.at(i);
      if (n.is_leaf()) {
        if (c + f.n_classes_ > counts.size()) throw ParseError("forest model: leaf counts truncated");
        n.counts.assign(counts.begin() + static_cast<std::ptrdiff_t>(c),
                        counts.begin() + static_cast<std::ptrdiff_t>(c + f.n_classes_));
        c += f.n_classes_;
      } else if (n.feature >= static_cast<std::int32_t>(f.n_features_) || n.left < 0 || n.right < 0 ||
                 n.left >= static_cast<std::int32_t>(feature.size()) ||
                 n.right >= static_cast<std::int32_t>(feature.size())) {
        throw ParseError("forest model: node references out of range");
      }
    }
    for (const auto& cj : tj.at("codes")) {
      auto node = cj.at(0).get<std::size_t>();
      t.nodes.at(node).left_codes = cj.at(1).get<std::vector<std::int64_t>>();
    }
    f.trees_.push_back(std::move(t));
  }
  return f;
}

}  // namespace httpsem
