#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "fixtures.hpp"

using namespace httpsem;

namespace {

std::size_t pid(const ProblemRegistry& reg, const std::string& id) { return *reg.find(id); }

std::vector<double> block(const std::vector<double>& v, const ProblemRegistry& reg, std::size_t p) {
  auto off = reg.enhanced_offset(p);
  return {v.begin() + static_cast<std::ptrdiff_t>(off),
          v.begin() + static_cast<std::ptrdiff_t>(off + reg[p].labels.size())};
}

// Request-only state: every row has method and the three presence problems.
PredictionState request_state(const ProblemRegistry& reg, const std::vector<int>& referer) {
  PredictionState s;
  for (std::size_t h = 0; h < referer.size(); ++h) {
    std::vector<int> row(reg.size(), -1);
    row[pid(reg, "request.method")] = 0;
    row[pid(reg, "request.Cookie")] = 0;
    row[pid(reg, "request.Origin")] = 0;
    row[pid(reg, "request.Referer")] = referer[h];
    s.header_records.push_back(2 * h);
    s.labels.push_back(row);
  }
  return s;
}

TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.forest.n_trees = 5;
  cfg.forest.min_leaf = 5;
  cfg.feature_fraction = 1.0;
  cfg.seed = seed;
  return cfg;
}

const ModelBundle& shared_bundle() {
  static const ModelBundle b = [] {
    SynthSpec spec;
    spec.seed = 12;
    spec.n_connections = 80;
    return train_bundle(synthesize_corpus(spec), small_config());
  }();
  return b;
}

}  // namespace

TEST(EnhancedFeatures, RefererCountsLeaveOutTheTarget) {
  auto reg = default_registry(Protocol::http1);
  // Target at position 3; 4 of the other 6 requests carry a Referer.
  auto s = request_state(reg, {1, 1, 0, 1, 1, 0, 1});
  auto x = build_enhanced_features(s, 3, pid(reg, "request.Referer"), reg);
  ASSERT_EQ(x.size(), reg.enhanced_length());
  EXPECT_EQ(block(x, reg, pid(reg, "request.Referer")), (std::vector<double>{2, 4}));
  // The target's other problems still count.
  auto m = block(x, reg, pid(reg, "request.method"));
  EXPECT_EQ(m[0], 7);
  EXPECT_EQ(std::accumulate(m.begin(), m.end(), 0.0), 7);
  for (auto v : block(x, reg, pid(reg, "response.Server"))) EXPECT_EQ(v, 0);
}

TEST(EnhancedFeatures, ExcludeWholeRecordDropsTheTargetRow) {
  auto reg = default_registry(Protocol::http1);
  auto s = request_state(reg, {1, 1, 0, 1, 1, 0, 1});
  InferenceConfig cfg;
  cfg.exclude_whole_record = true;
  auto x = build_enhanced_features(s, 3, pid(reg, "request.Referer"), reg, Mode::standard, cfg);
  EXPECT_EQ(block(x, reg, pid(reg, "request.Referer")), (std::vector<double>{2, 4}));
  EXPECT_EQ(block(x, reg, pid(reg, "request.method"))[0], 6);

  auto one = request_state(reg, {1});
  auto z = build_enhanced_features(one, 0, pid(reg, "request.Referer"), reg, Mode::standard, cfg);
  for (auto v : z) EXPECT_EQ(v, 0);
}

TEST(EnhancedFeatures, SingleHeaderRecordHasAnEmptyTargetBlock) {
  auto reg = default_registry(Protocol::http2);
  auto s = request_state(reg, {1});
  for (const char* id : {"request.Referer", "request.method", "request.Cookie"}) {
    auto x = build_enhanced_features(s, 0, pid(reg, id), reg);
    for (auto v : block(x, reg, pid(reg, id))) EXPECT_EQ(v, 0) << id;
  }
}

TEST(EnhancedFeatures, MixedDirectionsTabulatedByHand) {
  auto reg = default_registry(Protocol::http1);
  const auto method = pid(reg, "request.method"), status = pid(reg, "response.status-code"),
             server = pid(reg, "response.Server"), etag = pid(reg, "response.Etag");
  // request (POST), response (200, nginx, etag present), response (404, Apache, etag absent)
  PredictionState s;
  s.header_records = {4, 5, 7};
  s.labels.assign(3, std::vector<int>(reg.size(), -1));
  s.labels[0][method] = 1;
  s.labels[1][status] = 1;
  s.labels[1][server] = 3;
  s.labels[1][etag] = 1;
  s.labels[2][status] = 9;
  s.labels[2][server] = 6;
  s.labels[2][etag] = 0;

  auto x = build_enhanced_features(s, 1, server, reg);
  std::vector<double> expect(reg.enhanced_length(), 0.0);
  expect[reg.enhanced_offset(method) + 1] = 1;
  expect[reg.enhanced_offset(status) + 1] = 1;  // target's own status
  expect[reg.enhanced_offset(status) + 9] = 1;
  expect[reg.enhanced_offset(server) + 6] = 1;  // target's own server left out
  expect[reg.enhanced_offset(etag) + 1] = 1;
  expect[reg.enhanced_offset(etag) + 0] = 1;
  EXPECT_EQ(x, expect);
}

TEST(EnhancedFeatures, BlocksSumToContributingRecords) {
  Rng rng(44);
  auto reg = default_registry(Protocol::http2);
  for (int trial = 0; trial < 50; ++trial) {
    PredictionState s;
    const auto n = static_cast<std::size_t>(rng.between(1, 30));
    for (std::size_t h = 0; h < n; ++h) {
      std::vector<int> row(reg.size(), -1);
      const Side side = rng.bernoulli(0.5) ? Side::client : Side::server;
      for (std::size_t q = 0; q < reg.size(); ++q)
        if (reg[q].side == side && rng.bernoulli(0.9)) row[q] = static_cast<int>(rng.below(reg[q].labels.size()));
      s.header_records.push_back(h);
      s.labels.push_back(row);
    }
    const auto pos = rng.below(n), p = rng.below(reg.size());
    for (Mode mode : {Mode::standard, Mode::tor}) {
      auto x = build_enhanced_features(s, pos, p, reg, mode);
      auto ctx = context_positions(mode, n, pos, InferenceConfig{});
      for (std::size_t q = 0; q < reg.size(); ++q) {
        double expect = 0;
        for (auto j : ctx) expect += s.labels[j][q] >= 0;
        if (q != p) expect += s.labels[pos][q] >= 0;
        auto b = block(x, reg, q);
        EXPECT_EQ(std::accumulate(b.begin(), b.end(), 0.0), expect);
      }
    }
  }
}

TEST(TorWindow, ClampsAtTheEdgesAndSkipsTheTarget) {
  EXPECT_EQ(tor_enhanced_window(3, 1, 5), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(tor_enhanced_window(21, 10, 5), (std::vector<std::size_t>{5, 6, 7, 8, 9, 11, 12, 13, 14, 15}));
  EXPECT_EQ(tor_enhanced_window(1, 0, 5), (std::vector<std::size_t>{}));
  EXPECT_EQ(tor_enhanced_window(10, 0, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(context_positions(Mode::standard, 4, 2, {}), (std::vector<std::size_t>{0, 1, 3}));
}

TEST(Alp, AlpnDecidesWithoutTheModel) {
  ModelBundle empty;
  fx::ConnBuilder a, b, c;
  a.hello({"h2", "http/1.1"}, "h2");
  b.hello({"h2", "http/1.1"}, "http/1.1");
  c.hello({}, std::nullopt);
  auto da = classify_alp(a.conn(), empty), db = classify_alp(b.conn(), empty), dc = classify_alp(c.conn(), empty);
  EXPECT_EQ(da.protocol, Protocol::http2);
  EXPECT_TRUE(da.from_alpn);
  EXPECT_EQ(db.protocol, Protocol::http1);
  EXPECT_TRUE(db.from_alpn);
  EXPECT_FALSE(dc.from_alpn);
}

TEST(Alp, FallbackFeaturesAreSignedLengths) {
  fx::ConnBuilder b;
  b.hello({}, std::nullopt);
  b.app(Direction::client_to_server, 300);
  b.app(Direction::server_to_client, 700);
  auto f = alp_features(b.conn());
  ASSERT_EQ(f.size(), kAlpLengths);
  EXPECT_GT(f[0], 0);
  EXPECT_LT(f[1], 0);
  EXPECT_EQ(f[2], 300);
  EXPECT_EQ(f[3], -700);
  EXPECT_EQ(f[4], 0);
}

TEST(Iterative, HandshakeRecordsAreNeverHeaders) {
  SynthSpec spec;
  spec.seed = 99;
  spec.n_connections = 10;
  for (const auto& lc : synthesize_corpus(spec)) {
    auto r = iterative_classify(lc.connection, shared_bundle());
    ASSERT_EQ(r.message_type.size(), lc.connection.records.size());
    for (std::size_t i = 0; i < r.message_type.size(); ++i)
      if (lc.connection.records[i].type_code != tls::application_data) {
        EXPECT_FALSE(r.message_type[i]);
      }
  }
}

TEST(Iterative, ProblemsOnlyApplyToTheirSide) {
  SynthSpec spec;
  spec.seed = 98;
  spec.n_connections = 10;
  for (const auto& lc : synthesize_corpus(spec)) {
    auto r = iterative_classify(lc.connection, shared_bundle());
    const auto& reg = shared_bundle().of(r.protocol).registry;
    for (const auto& p : r.predictions(lc.connection, reg)) {
      const auto& spec_p = reg[*reg.find(p.problem)];
      EXPECT_EQ(side_direction(spec_p.side), p.direction);
      EXPECT_TRUE(spec_p.label_index(p.label).has_value());
      EXPECT_GE(p.score, 0.0);
      EXPECT_LE(p.score, 1.0);
    }
    EXPECT_LE(r.iteration_count, shared_bundle().inference.max_iters);
    if (r.converged) {
      EXPECT_GE(r.iteration_count, 2u);
    }
  }
}

TEST(Iterative, SingleHeaderConvergesAfterTwoPasses) {
  fx::ConnBuilder b;
  b.hello({"http/1.1"}, "http/1.1");
  b.app(Direction::client_to_server, 400);
  auto conn = b.conn();
  auto samples = connection_samples(conn, Mode::standard);
  std::vector<bool> is_header(conn.records.size(), false);
  is_header.back() = true;
  auto r = iterative_classify_with_headers(conn, Protocol::http1, is_header, samples, shared_bundle());
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iteration_count, 2u);
  ASSERT_EQ(r.final_state.labels.size(), 1u);
  const auto& reg = shared_bundle().http1.registry;
  for (std::size_t p = 0; p < reg.size(); ++p)
    EXPECT_EQ(r.final_state.labels[0][p] >= 0, reg[p].side == Side::client && shared_bundle().http1.enhanced[p]);
}

TEST(Iterative, NoHeadersMeansNoPredictions) {
  fx::ConnBuilder b;
  b.hello({"h2"}, "h2");
  auto conn = b.conn();
  auto r = iterative_classify(conn, shared_bundle());
  EXPECT_EQ(r.protocol, Protocol::http2);
  EXPECT_TRUE(r.predictions(conn, shared_bundle().http2.registry).empty());
  EXPECT_TRUE(r.converged);
}

TEST(Iterative, SummaryCountsFinalLabels) {
  SynthSpec spec;
  spec.seed = 97;
  spec.n_connections = 5;
  for (const auto& lc : synthesize_corpus(spec)) {
    auto r = iterative_classify(lc.connection, shared_bundle());
    const auto& reg = shared_bundle().of(r.protocol).registry;
    auto s = connection_summary(r, reg);
    auto preds = r.predictions(lc.connection, reg);
    EXPECT_EQ(std::accumulate(s.begin(), s.end(), 0.0), static_cast<double>(preds.size()));
  }
}

TEST(Training, CountsMatchTheCorpus) {
  SynthSpec spec;
  spec.seed = 12;
  spec.n_connections = 80;
  auto corpus = synthesize_corpus(spec);
  const auto& b = shared_bundle();
  for (Protocol proto : {Protocol::http1, Protocol::http2}) {
    const auto& m = b.of(proto);
    std::vector<std::size_t> counts(m.registry.size(), 0);
    std::size_t app = 0;
    for (const auto& lc : corpus) {
      if (lc.protocol != proto) continue;
      for (std::size_t i = 0; i < lc.records.size(); ++i) {
        const auto& rec = lc.connection.records[i];
        app += rec.type_code == tls::application_data;
        if (!lc.records[i].message_type) continue;
        for (std::size_t p = 0; p < m.registry.size(); ++p)
          if (side_direction(m.registry[p].side) == rec.direction && lc.records[i].labels.count(m.registry[p].id))
            ++counts[p];
      }
    }
    EXPECT_EQ(m.train_counts, counts) << to_string(proto);
    EXPECT_EQ(m.message_type_count, app);
    ASSERT_TRUE(m.message_type.has_value());
    EXPECT_EQ(m.message_type->n_features(), sample_length(Mode::standard));
    for (std::size_t p = 0; p < m.registry.size(); ++p)
      if (m.enhanced[p]) {
        EXPECT_EQ(m.enhanced[p]->n_features(), sample_length(Mode::standard) + m.registry.enhanced_length());
      }
  }
  EXPECT_TRUE(b.alp.has_value());
}

TEST(Training, SameSeedSameBundle) {
  SynthSpec spec;
  spec.seed = 12;
  spec.n_connections = 80;
  auto again = train_bundle(synthesize_corpus(spec), small_config());
  EXPECT_TRUE(again == shared_bundle());
  EXPECT_EQ(to_json(again).dump(), to_json(shared_bundle()).dump());
}

TEST(Training, EmptyCorpusThrows) { EXPECT_THROW(train_bundle({}, small_config()), Error); }

TEST(Bundle, SaveLoadRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "httpsem_bundle_test";
  std::filesystem::create_directories(dir);
  for (const char* name : {"b.msgpack", "b.json"}) {
    auto path = (dir / name).string();
    save_bundle(shared_bundle(), path);
    auto back = load_bundle(path);
    EXPECT_TRUE(back == shared_bundle()) << name;
  }
  SynthSpec spec;
  spec.seed = 96;
  spec.n_connections = 5;
  auto loaded = load_bundle((dir / "b.msgpack").string());
  for (const auto& lc : synthesize_corpus(spec)) {
    auto a = iterative_classify(lc.connection, shared_bundle());
    auto b = iterative_classify(lc.connection, loaded);
    EXPECT_EQ(a.final_state, b.final_state);
    EXPECT_EQ(a.final_scores, b.final_scores);
  }
  std::filesystem::remove_all(dir);
}

TEST(Bundle, RejectsForeignAndMismatchedFiles) {
  EXPECT_THROW(bundle_from_json(nlohmann::json{{"format", "x"}}), ParseError);
  auto j = to_json(shared_bundle());
  j["mode"] = "tor";
  EXPECT_THROW(bundle_from_json(j), SchemaError);
}
