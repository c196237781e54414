#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace httpsem;

namespace {

Dataset make(const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  Dataset d(x.at(0).size());
  for (std::size_t i = 0; i < x.size(); ++i) d.add(x[i], y[i]);
  return d;
}

TrainParams stump_params(std::size_t d) {
  TrainParams p;
  p.n_trees = 1;
  p.max_depth = 1;
  p.bootstrap = false;
  p.features_per_split = d;
  p.seed = 4;
  return p;
}

// Independent walk over the node array.
std::vector<double> trace_scores(const Forest& f, const std::vector<double>& x) {
  std::vector<double> acc(f.n_classes(), 0.0);
  for (const auto& t : f.trees()) {
    std::int32_t i = 0;
    while (t.nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = t.nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    const auto& counts = t.nodes[static_cast<std::size_t>(i)].counts;
    double total = 0;
    for (auto c : counts) total += c;
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += counts[k] / total;
  }
  for (double& a : acc) a /= static_cast<double>(f.trees().size());
  return acc;
}

}  // namespace

TEST(Forest, SingleClassPredictsThatClass) {
  Rng rng(1);
  Dataset d(3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x = {rng.uniform(), rng.uniform(), rng.uniform()};
    d.add(x, 2);
  }
  auto f = train_forest(d, TrainParams{});
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    EXPECT_EQ(f.predict_label(x), 2);
  }
  EXPECT_TRUE(f.gini_importance().no_splits);
}

TEST(Forest, SeparableByOneThresholdFitsPerfectly) {
  Rng rng(2);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    x.push_back({a, b});
    y.push_back(b > 0.37 ? 1 : 0);
  }
  auto st = oracle::best_stump(x, y, 2);
  ASSERT_TRUE(st.split);
  EXPECT_EQ(st.feature, 1u);
  EXPECT_EQ(st.left[1] + st.right[0], 0u);
  auto f = train_forest(make(x, y), TrainParams{.n_trees = 10, .seed = 3});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(f.predict_label(x[i]), y[i]);
}

TEST(Forest, FixedSeedSameSerialization) {
  Rng rng(3);
  Dataset d(4);
  for (int i = 0; i < 150; ++i) {
    std::vector<double> x = {rng.uniform(), rng.uniform(), double(rng.below(3)), rng.uniform()};
    d.add(x, static_cast<int>(rng.below(3)));
  }
  TrainParams p{.n_trees = 8, .seed = 99};
  auto a = to_json(train_forest(d, p)).dump();
  auto b = to_json(train_forest(d, p)).dump();
  EXPECT_EQ(a, b);
  p.n_jobs = 3;
  EXPECT_EQ(to_json(train_forest(d, p)).dump(), a);
  p.seed = 100;
  EXPECT_NE(to_json(train_forest(d, p)).dump(), a);
}

TEST(Forest, JsonRoundTrip) {
  Rng rng(4);
  Dataset d(3, {false, true, false});
  for (int i = 0; i < 120; ++i) {
    std::vector<double> x = {rng.uniform(), double(rng.below(5)), rng.uniform()};
    d.add(x, x[1] >= 3 ? 1 : 0);
  }
  auto f = train_forest(d, TrainParams{.n_trees = 5, .seed = 1});
  auto g = forest_from_json(to_json(f));
  EXPECT_EQ(f, g);
  EXPECT_THROW(forest_from_json(nlohmann::json{{"format", "x"}}), ParseError);
}

TEST(Forest, SingleLeafScores) {
  Dataset d(1);
  std::vector<double> x = {1.0};
  for (int i = 0; i < 3; ++i) d.add(x, 0);
  d.add(x, 1);
  auto f = train_forest(d, stump_params(1));
  auto p = f.predict(x);
  EXPECT_EQ(p.label, 0);
  EXPECT_DOUBLE_EQ(p.scores[0], 0.75);
  EXPECT_DOUBLE_EQ(p.scores[1], 0.25);
}

TEST(Forest, TiesGoToLowerClass) {
  Dataset d(1);
  std::vector<double> x = {1.0};
  d.add(x, 1);
  d.add(x, 0);
  auto p = train_forest(d, stump_params(1)).predict(x);
  EXPECT_DOUBLE_EQ(p.scores[0], 0.5);
  EXPECT_EQ(p.label, 0);
}

TEST(Forest, ScoresEqualTracedLeafAverage) {
  Rng rng(5);
  Dataset d(5);
  std::vector<std::vector<double>> probes;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.uniform();
    d.add(x, x[0] + 0.5 * x[1] + 0.3 * rng.uniform() > 1.0 ? 1 : (x[2] > 0.7 ? 2 : 0));
    if (i % 20 == 0) probes.push_back(x);
  }
  auto f = train_forest(d, TrainParams{.n_trees = 10, .seed = 6});
  for (const auto& x : probes) {
    auto p = f.predict(x);
    auto expect = trace_scores(f, x);
    double sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(p.scores[k], expect[k], 1e-12);
      EXPECT_GE(p.scores[k], 0.0);
      sum += p.scores[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(f.predict(x).scores, p.scores);
  }
}

TEST(Forest, SchemaMismatchThrows) {
  Dataset d(2);
  std::vector<double> x = {0, 1};
  d.add(x, 0);
  EXPECT_THROW(d.add(std::vector<double>{1.0}, 0), SchemaError);
  auto f = train_forest(d, TrainParams{.n_trees = 1});
  EXPECT_THROW(f.predict(std::vector<double>{1, 2, 3}), SchemaError);
}

TEST(Forest, OnlyInformativeFeatureCarriesImportance) {
  Rng rng(7);
  Dataset d(6);
  for (int i = 0; i < 400; ++i) {
    std::vector<double> x(6);
    for (auto& v : x) v = rng.uniform();
    d.add(x, x[0] > 0.5 ? 1 : 0);
  }
  auto g = train_forest(d, TrainParams{.n_trees = 30, .seed = 8}).gini_importance();
  EXPECT_GT(g.weights[0], 0.9);
  EXPECT_NEAR(std::accumulate(g.weights.begin(), g.weights.end(), 0.0), 1.0, 1e-9);
}

TEST(Forest, ConstantColumnPositionDoesNotMatter) {
  Rng rng(9);
  Dataset a(4), b(4);
  for (int i = 0; i < 150; ++i) {
    double u = rng.uniform(), v = rng.uniform(), w = rng.uniform();
    int y = u + v > 1.0 ? 1 : 0;
    a.add(std::vector<double>{7.0, u, v, w}, y);
    b.add(std::vector<double>{u, v, w, 7.0}, y);
  }
  TrainParams p{.n_trees = 5, .features_per_split = 4, .seed = 10};
  auto ga = train_forest(a, p).gini_importance().weights;
  auto gb = train_forest(b, p).gini_importance().weights;
  EXPECT_EQ(ga[0], 0.0);
  EXPECT_EQ(gb[3], 0.0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(ga[static_cast<std::size_t>(k + 1)], gb[static_cast<std::size_t>(k)], 1e-12);
}

TEST(Forest, CategoricalSplitSeparatesCodeSets) {
  Dataset d(1, {true});
  for (int rep = 0; rep < 10; ++rep)
    for (int code : {3, 8, 1, 5}) d.add(std::vector<double>{double(code)}, code == 8 || code == 1 ? 1 : 0);
  auto f = train_forest(d, stump_params(1));
  const auto& root = f.trees()[0].nodes[0];
  ASSERT_FALSE(root.is_leaf());
  EXPECT_TRUE(root.left_codes == (std::vector<std::int64_t>{1, 8}) || root.left_codes == (std::vector<std::int64_t>{3, 5}));
  for (int code : {3, 8, 1, 5}) EXPECT_EQ(f.predict_label(std::vector<double>{double(code)}), code == 8 || code == 1);
}

TEST(ForestProperty, LeavesRespectMinLeafAndFeatureRange) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t dims = 1 + rng.below(6);
    Dataset d(dims);
    for (int i = 0; i < 120; ++i) {
      std::vector<double> x(dims);
      for (auto& v : x) v = double(rng.below(10));
      d.add(x, static_cast<int>(rng.below(3)));
    }
    TrainParams p{.n_trees = 4, .min_leaf = 1 + rng.below(6), .seed = rng.next()};
    auto f = train_forest(d, p);
    for (const auto& t : f.trees())
      for (const auto& n : t.nodes) {
        if (n.is_leaf()) {
          ASSERT_GE(std::accumulate(n.counts.begin(), n.counts.end(), 0u), p.min_leaf);
        } else {
          ASSERT_LT(static_cast<std::size_t>(n.feature), dims);
        }
      }
  }
}

TEST(ForestProperty, StumpMatchesExhaustiveSearch) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 2 + rng.below(199), dims = 1 + rng.below(8), k = 2 + rng.below(3);
    std::vector<std::vector<double>> x(n, std::vector<double>(dims));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : x[i]) v = double(rng.below(trial % 2 ? 6 : 400)) / 8.0;
      y[i] = static_cast<int>(rng.below(k));
    }
    auto expect = oracle::best_stump(x, y, k);
    auto f = train_forest(make(x, y), stump_params(dims), k);
    const auto& nodes = f.trees()[0].nodes;
    if (!expect.split) {
      ASSERT_EQ(nodes.size(), 1u);
      ASSERT_EQ(nodes[0].counts, expect.root);
      continue;
    }
    ASSERT_EQ(nodes.size(), 3u) << "trial " << trial;
    ASSERT_EQ(static_cast<std::size_t>(nodes[0].feature), expect.feature) << "trial " << trial;
    ASSERT_EQ(nodes[0].threshold, expect.threshold);
    ASSERT_EQ(nodes[static_cast<std::size_t>(nodes[0].left)].counts, expect.left);
    ASSERT_EQ(nodes[static_cast<std::size_t>(nodes[0].right)].counts, expect.right);
  }
}
