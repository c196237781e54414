#pragma once

// Metrics, confusion matrices and the two experiment harnesses: per-problem
// semantics inference (single pass vs iterative) and malware detection with
// standard vs enriched connection features.

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "features.hpp"
#include "forest.hpp"
#include "inference.hpp"

namespace httpsem {

// Rows are truth, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> labels)
      : labels_(std::move(labels)), counts_(labels_.size(), std::vector<std::uint64_t>(labels_.size(), 0)) {}
  ConfusionMatrix(std::vector<std::string> labels, std::vector<std::vector<std::uint64_t>> counts)
      : labels_(std::move(labels)), counts_(std::move(counts)) {
    if (counts_.size() != labels_.size()) throw Error("confusion matrix is not square");
    for (const auto& row : counts_)
      if (row.size() != labels_.size()) throw Error("confusion matrix is not square");
  }

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1) { counts_.at(truth).at(predicted) += n; }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::uint64_t at(std::size_t t, std::size_t p) const { return counts_[t][p]; }
  const std::vector<std::vector<std::uint64_t>>& counts() const { return counts_; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts_)
      for (auto c : row) n += c;
    return n;
  }
  std::uint64_t trace() const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) n += counts_[i][i];
    return n;
  }

  // Keeps only labels that occur as truth or prediction.
  ConfusionMatrix compacted() const {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < size(); ++i) {
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < size(); ++j) {
        row += counts_[i][j];
        col += counts_[j][i];
      }
      if (row + col > 0) keep.push_back(i);
    }
    std::vector<std::string> labels;
    std::vector<std::vector<std::uint64_t>> counts;
    for (auto i : keep) {
      labels.push_back(labels_[i]);
      std::vector<std::uint64_t> row;
      for (auto j : keep) row.push_back(counts_[i][j]);
      counts.push_back(std::move(row));
    }
    return ConfusionMatrix(std::move(labels), std::move(counts));
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<std::uint64_t>> counts_;
};

struct F1Detail {
  double value = 0.0;
  std::vector<double> per_label;
  std::vector<std::string> zero_denominator;  // labels with precision + recall = 0
};

inline F1Detail f1_detail(const ConfusionMatrix& cm) {
  if (cm.size() == 0) throw Error("unweighted_f1: empty confusion matrix");
  F1Detail d;
  double sum = 0;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    std::uint64_t tp = cm.at(i, i), row = 0, col = 0;
    for (std::size_t j = 0; j < cm.size(); ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    double precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    double recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    double f1 = 0.0;
    if (precision + recall > 0)
      f1 = 2 * precision * recall / (precision + recall);
    else
      d.zero_denominator.push_back(cm.labels()[i]);
    d.per_label.push_back(f1);
    sum += f1;
  }
  d.value = sum / static_cast<double>(cm.size());
  return d;
}

// Unweighted mean of per-label F1; a label with zero precision and recall
// contributes 0.
inline double unweighted_f1(const ConfusionMatrix& cm) { return f1_detail(cm).value; }

inline double accuracy(const ConfusionMatrix& cm) {
  auto n = cm.total();
  if (n == 0) throw Error("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

inline std::vector<std::vector<double>> row_normalized(const ConfusionMatrix& cm) {
  std::vector<std::vector<double>> out(cm.size(), std::vector<double>(cm.size(), 0.0));
  for (std::size_t i = 0; i < cm.size(); ++i) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < cm.size(); ++j) row += cm.at(i, j);
    if (row)
      for (std::size_t j = 0; j < cm.size(); ++j)
        out[i][j] = static_cast<double>(cm.at(i, j)) / static_cast<double>(row);
  }
  return out;
}

namespace detail {
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace detail

inline std::string to_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "truth\\predicted";
  for (const auto& l : cm.labels()) out << "," << detail::csv_field(l);
  out << "\n";
  for (std::size_t i = 0; i < cm.size(); ++i) {
    out << detail::csv_field(cm.labels()[i]);
    for (std::size_t j = 0; j < cm.size(); ++j) out << "," << cm.at(i, j);
    out << "\n";
  }
  return out.str();
}

// Row-normalized values for external plotting.
inline std::string to_plot_csv(const ConfusionMatrix& cm) {
  auto norm = row_normalized(cm);
  std::ostringstream out;
  out << "truth,predicted,fraction\n";
  out << std::setprecision(6);
  for (std::size_t i = 0; i < cm.size(); ++i)
    for (std::size_t j = 0; j < cm.size(); ++j)
      out << detail::csv_field(cm.labels()[i]) << "," << detail::csv_field(cm.labels()[j]) << "," << norm[i][j]
          << "\n";
  return out.str();
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) { return {{"labels", cm.labels()}, {"counts", cm.counts()}}; }

struct Scores {
  double f1 = 0.0;
  double accuracy = 0.0;
  std::uint64_t n = 0;
  std::vector<std::string> zero_denominator;
  ConfusionMatrix cm;  // compacted
};

inline Scores score(const ConfusionMatrix& full) {
  Scores s;
  s.cm = full.compacted();
  s.n = s.cm.total();
  if (s.n == 0) return s;
  auto d = f1_detail(s.cm);
  s.f1 = d.value;
  s.zero_denominator = d.zero_denominator;
  s.accuracy = accuracy(s.cm);
  return s;
}

inline nlohmann::json to_json(const Scores& s) {
  return {{"f1", s.f1},
          {"accuracy", s.accuracy},
          {"n", s.n},
          {"zero_denominator_labels", s.zero_denominator},
          {"confusion", to_json(s.cm)}};
}

// One-sided sign test: P(at least `wins` successes of n fair coin flips).
inline double sign_test_p(std::size_t wins, std::size_t n) {
  double p = 0;
  for (std::size_t k = wins; k <= n; ++k) {
    double c = 1;
    for (std::size_t i = 0; i < k; ++i) c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    p += c;
  }
  return p / std::pow(2.0, static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Semantics experiment

struct ExperimentConfig {
  TrainConfig train;
  bool filter_misdetected = false;  // drop test connections with any message-type error
};

struct ProblemResult {
  std::string id;
  std::size_t labels = 0;
  std::size_t train_samples = 0;
  bool skipped = false;
  std::string notice;
  Scores single_pass;
  Scores iterative;
};

struct ProtocolResult {
  Protocol protocol = Protocol::http1;
  std::size_t train_connections = 0;
  std::size_t test_connections = 0;
  std::size_t filtered_connections = 0;
  std::size_t missed_header_records = 0;  // true headers the message-type stage rejected
  Scores message_type;
  std::vector<ProblemResult> problems;
};

struct ExperimentReport {
  Mode mode = Mode::standard;
  std::vector<ProtocolResult> protocols;
  std::vector<std::size_t> iteration_counts;  // one per test connection
  std::size_t not_converged = 0;
  std::size_t alp_fallback_total = 0;
  std::size_t alp_fallback_correct = 0;
  nlohmann::json config;
  std::string config_digest;

  const ProtocolResult* find(Protocol p) const {
    for (const auto& r : protocols)
      if (r.protocol == p) return &r;
    return nullptr;
  }
};

struct ConnectionEvaluation {
  InferenceResult result;
  std::vector<std::vector<double>> samples;
};

// Evaluates a trained bundle on labeled test connections. Semantics are
// scored under each connection's true protocol; ALPN fallback accuracy is
// reported separately.
inline ExperimentReport evaluate_bundle(const ModelBundle& bundle, const std::vector<LabeledConnection>& test,
                                        bool filter_misdetected = false, std::size_t jobs = 1) {
  ExperimentReport rep;
  rep.mode = bundle.mode;
  std::vector<InferenceResult> results(test.size());
  std::vector<AlpDecision> alp(test.size());
  parallel_for(test.size(), jobs, [&](std::size_t i) {
    const auto& lc = test[i];
    alp[i] = classify_alp(lc.connection, bundle);
    auto samples = connection_samples(lc.connection, bundle.mode);
    auto headers = classify_message_types(lc.connection, samples, bundle.of(lc.protocol));
    results[i] = iterative_classify_with_headers(lc.connection, lc.protocol, headers, samples, bundle);
  });

  for (Protocol proto : {Protocol::http1, Protocol::http2}) {
    const ProtocolModels& models = bundle.of(proto);
    const auto& reg = models.registry;
    ProtocolResult pr;
    pr.protocol = proto;
    pr.train_connections = bundle.training.contains("connections")
                               ? bundle.training["connections"].value(to_string(proto), std::size_t{0})
                               : 0;
    ConfusionMatrix mt({"false", "true"});
    std::vector<ConfusionMatrix> single, iter;
    for (const auto& p : reg.problems()) {
      single.emplace_back(p.labels);
      iter.emplace_back(p.labels);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& lc = test[i];
      if (lc.protocol != proto) continue;
      ++pr.test_connections;
      const auto& r = results[i];
      bool mt_error = false;
      for (std::size_t k = 0; k < lc.connection.records.size(); ++k)
        if (lc.connection.records[k].type_code == tls::application_data && r.message_type[k] != lc.records[k].message_type)
          mt_error = true;
      if (filter_misdetected && mt_error) {
        ++pr.filtered_connections;
        continue;
      }
      for (std::size_t k = 0; k < lc.connection.records.size(); ++k)
        if (lc.connection.records[k].type_code == tls::application_data)
          mt.add(lc.records[k].message_type ? 1 : 0, r.message_type[k] ? 1 : 0);

      std::map<std::size_t, std::size_t> pos;
      for (std::size_t h = 0; h < r.final_state.header_records.size(); ++h) pos[r.final_state.header_records[h]] = h;
      for (const auto& rec : lc.records) {
        if (!rec.message_type) continue;
        auto it = pos.find(rec.index);
        if (it == pos.end()) {
          ++pr.missed_header_records;
          continue;
        }
        for (std::size_t p = 0; p < reg.size(); ++p) {
          int t = detail::truth_label(reg[p], rec);
          if (t < 0) continue;
          int s = r.single_pass.labels[it->second][p];
          int f = r.final_state.labels[it->second][p];
          if (s >= 0) single[p].add(static_cast<std::size_t>(t), static_cast<std::size_t>(s));
          if (f >= 0) iter[p].add(static_cast<std::size_t>(t), static_cast<std::size_t>(f));
        }
      }
    }
    pr.message_type = score(mt);
    for (std::size_t p = 0; p < reg.size(); ++p) {
      ProblemResult res;
      res.id = reg[p].id;
      res.labels = reg[p].labels.size();
      res.train_samples = p < models.train_counts.size() ? models.train_counts[p] : 0;
      res.skipped = !models.first_pass[p];
      if (res.skipped) {
        res.notice = "fewer than 2 observed labels in training";
        for (const auto& n : models.notices)
          if (n.rfind(reg[p].id + ":", 0) == 0) res.notice = n;
      } else if (single[p].total() == 0) {
        res.skipped = true;
        res.notice = "no test samples";
      }
      res.single_pass = score(single[p]);
      res.iterative = score(iter[p]);
      pr.problems.push_back(std::move(res));
    }
    rep.protocols.push_back(std::move(pr));
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    rep.iteration_counts.push_back(results[i].iteration_count);
    if (!results[i].converged) ++rep.not_converged;
    if (!alp[i].from_alpn) {
      ++rep.alp_fallback_total;
      if (alp[i].protocol == test[i].protocol) ++rep.alp_fallback_correct;
    }
  }
  return rep;
}

inline ExperimentReport run_semantics_experiment(const std::vector<LabeledConnection>& train,
                                                 const std::vector<LabeledConnection>& test,
                                                 const ExperimentConfig& cfg, const Registries& regs = {}) {
  ModelBundle bundle = train_bundle(train, cfg.train, regs);
  ExperimentReport rep = evaluate_bundle(bundle, test, cfg.filter_misdetected, cfg.train.jobs);
  rep.config = to_json(cfg.train);
  rep.config["filter_misdetected"] = cfg.filter_misdetected;
  rep.config_digest = to_hex_u64(fnv1a64(rep.config.dump()));
  return rep;
}

inline nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json protos = nlohmann::json::array();
  for (const auto& p : r.protocols) {
    nlohmann::json problems = nlohmann::json::array();
    for (const auto& pr : p.problems) {
      nlohmann::json j = {{"id", pr.id}, {"labels", pr.labels}, {"train_samples", pr.train_samples}};
      if (pr.skipped) {
        j["status"] = "n/a";
        j["notice"] = pr.notice;
      } else {
        j["single_pass"] = to_json(pr.single_pass);
        j["iterative"] = to_json(pr.iterative);
      }
      problems.push_back(std::move(j));
    }
    protos.push_back({{"protocol", to_string(p.protocol)},
                      {"train_connections", p.train_connections},
                      {"test_connections", p.test_connections},
                      {"filtered_connections", p.filtered_connections},
                      {"missed_header_records", p.missed_header_records},
                      {"message_type", to_json(p.message_type)},
                      {"problems", problems}});
  }
  std::map<std::size_t, std::size_t> hist;
  for (auto c : r.iteration_counts) ++hist[c];
  nlohmann::json h = nlohmann::json::object();
  for (auto [k, v] : hist) h[std::to_string(k)] = v;
  return {{"schema_version", 1},
          {"report", "httpsem.semantics"},
          {"mode", to_string(r.mode)},
          {"config", r.config},
          {"config_digest", r.config_digest},
          {"f1_convention", "labels with zero precision and recall contribute 0"},
          {"iterations", {{"histogram", h}, {"not_converged", r.not_converged}}},
          {"alp_fallback", {{"total", r.alp_fallback_total}, {"correct", r.alp_fallback_correct}}},
          {"protocols", protos}};
}

// Text table in the layout of a per-protocol results summary.
inline std::string render_text(const ExperimentReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  for (const auto& p : r.protocols) {
    out << to_string(p.protocol) << " (" << to_string(r.mode) << "), " << p.test_connections << " test connections";
    if (p.filtered_connections) out << ", " << p.filtered_connections << " filtered";
    out << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-40s %6s  %-15s  %-15s\n", "Problem", "Labels", "Single Pass", "Iterative");
    out << line;
    std::snprintf(line, sizeof line, "  %-40s %6s  %6s %8s  %6s %8s\n", "", "", "Acc", "F1", "Acc", "F1");
    out << line;
    auto cell = [](const Scores& s) {
      char b[32];
      if (s.n == 0)
        std::snprintf(b, sizeof b, "%6s %8s", "n/a", "n/a");
      else
        std::snprintf(b, sizeof b, "%6.3f %8.3f", s.accuracy, s.f1);
      return std::string(b);
    };
    std::snprintf(line, sizeof line, "  %-40s %6d  %s  %15s\n", "message-type", 2, cell(p.message_type).c_str(), "");
    out << line;
    for (const auto& pr : p.problems) {
      if (pr.skipped) {
        std::snprintf(line, sizeof line, "  %-40s %6zu  %6s %8s  %6s %8s\n", pr.id.c_str(), pr.labels, "n/a", "n/a",
                      "n/a", "n/a");
      } else {
        std::snprintf(line, sizeof line, "  %-40s %6zu  %s  %s\n", pr.id.c_str(), pr.labels,
                      cell(pr.single_pass).c_str(), cell(pr.iterative).c_str());
      }
      out << line;
    }
    if (p.missed_header_records)
      out << "  " << p.missed_header_records << " header records missed by message-type detection\n";
    out << "\n";
  }
  std::size_t within4 = 0;
  for (auto c : r.iteration_counts)
    if (c <= 4) ++within4;
  out << "iterations: " << within4 << "/" << r.iteration_counts.size() << " connections converged within 4, "
      << r.not_converged << " hit the cap\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Malware experiment

struct MalwareConfig {
  TrainParams forest;
  std::uint64_t seed = 0;
  double train_fraction = 0.5;
  std::size_t top_k = 10;
  std::size_t jobs = 1;
};

struct BinaryMetrics {
  double f1 = 0, precision = 0, recall = 0, accuracy = 0;
  ConfusionMatrix cm{{"benign", "malicious"}};
};

inline BinaryMetrics binary_metrics(const ConfusionMatrix& cm) {
  BinaryMetrics m;
  m.cm = cm;
  const double tp = static_cast<double>(cm.at(1, 1)), fp = static_cast<double>(cm.at(0, 1)),
               fn = static_cast<double>(cm.at(1, 0));
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.accuracy = cm.total() ? accuracy(cm) : 0.0;
  return m;
}

struct RankedFeature {
  std::string name;
  double weight = 0;
};

inline std::vector<RankedFeature> top_features(const Forest& f, const std::vector<std::string>& names, std::size_t k) {
  auto g = f.gini_importance();
  std::vector<std::size_t> idx(g.weights.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return g.weights[a] > g.weights[b]; });
  std::vector<RankedFeature> out;
  for (std::size_t i = 0; i < idx.size() && out.size() < k; ++i) {
    if (g.weights[idx[i]] <= 0) break;
    out.push_back({names[idx[i]], g.weights[idx[i]]});
  }
  return out;
}

struct MalwareReport {
  BinaryMetrics standard;
  BinaryMetrics enriched;
  std::vector<RankedFeature> top_standard;
  std::map<std::string, std::vector<RankedFeature>> top_enriched;  // per protocol
  std::size_t train_size = 0, test_size = 0;
};

// Splits each class with the seed, trains the standard forest on all
// connections and one enriched forest per inferred protocol.
inline MalwareReport run_malware_experiment(const std::vector<Connection>& benign, const std::vector<Connection>& malicious,
                                            const ModelBundle& bundle, const MalwareConfig& cfg) {
  struct Item {
    const Connection* conn;
    int label;
  };
  std::vector<Item> train, test;
  auto split = [&](const std::vector<Connection>& src, int label, std::string_view name) {
    std::vector<std::size_t> order(src.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, name));
    rng.shuffle(std::span<std::size_t>(order));
    auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(src.size())));
    for (std::size_t k = 0; k < order.size(); ++k) (k < n_train ? train : test).push_back({&src[order[k]], label});
  };
  split(benign, 0, "split/benign");
  split(malicious, 1, "split/malicious");
  bool has[2] = {false, false};
  for (const auto& it : train) has[it.label] = true;
  if (!has[0] || !has[1]) throw Error("malware experiment: a class is absent from the training split");

  std::vector<Connection> train_conns;
  for (const auto& it : train) train_conns.push_back(*it.conn);
  FeatureVocab vocab = build_feature_vocab(train_conns);

  auto prepare = [&](const std::vector<Item>& items) {
    std::vector<MalwareFeatureVector> std_vecs(items.size());
    std::vector<MalwareFeatureVector> enr(items.size());
    std::vector<Protocol> proto(items.size());
    parallel_for(items.size(), cfg.jobs, [&](std::size_t i) {
      std_vecs[i] = extract_malware_standard(*items[i].conn, vocab);
      InferenceResult r = iterative_classify(*items[i].conn, bundle);
      proto[i] = r.protocol;
      const auto& reg = bundle.of(r.protocol).registry;
      enr[i] = enrich_malware_features(std_vecs[i], connection_summary(r, reg), reg);
    });
    return std::tuple{std::move(std_vecs), std::move(enr), std::move(proto)};
  };
  auto [train_std, train_enr, train_proto] = prepare(train);
  auto [test_std, test_enr, test_proto] = prepare(test);

  MalwareReport rep;
  rep.train_size = train.size();
  rep.test_size = test.size();

  const auto sschema = malware_schema();
  Dataset ds(sschema.names.size(), sschema.categorical);
  for (std::size_t i = 0; i < train.size(); ++i) ds.add(train_std[i].values, train[i].label);
  TrainParams sp = cfg.forest;
  sp.seed = derive_seed(cfg.seed, "malware/standard");
  sp.n_jobs = cfg.jobs;
  Forest standard = train_forest(ds, sp, 2);
  ConfusionMatrix scm({"benign", "malicious"});
  for (std::size_t i = 0; i < test.size(); ++i)
    scm.add(static_cast<std::size_t>(test[i].label), static_cast<std::size_t>(standard.predict_label(test_std[i].values)));
  rep.standard = binary_metrics(scm);
  rep.top_standard = top_features(standard, sschema.names, cfg.top_k);

  ConfusionMatrix ecm({"benign", "malicious"});
  for (Protocol proto : {Protocol::http1, Protocol::http2}) {
    const auto& reg = bundle.of(proto).registry;
    const auto eschema = malware_schema(&reg);
    Dataset de(eschema.names.size(), eschema.categorical);
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train_proto[i] == proto) de.add(train_enr[i].values, train[i].label);
    std::optional<Forest> f;
    if (!de.empty()) {
      TrainParams ep = sp;
      ep.seed = derive_seed(cfg.seed, std::string("malware/enriched/") + to_string(proto));
      f = train_forest(de, ep, 2);
      rep.top_enriched[to_string(proto)] = top_features(*f, eschema.names, cfg.top_k);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test_proto[i] != proto) continue;
      // A protocol never seen in training falls back to the standard forest.
      int pred = f ? f->predict_label(test_enr[i].values) : standard.predict_label(test_std[i].values);
      ecm.add(static_cast<std::size_t>(test[i].label), static_cast<std::size_t>(pred));
    }
  }
  rep.enriched = binary_metrics(ecm);
  return rep;
}

inline nlohmann::json to_json(const BinaryMetrics& m) {
  return {{"f1", m.f1}, {"precision", m.precision}, {"recall", m.recall}, {"accuracy", m.accuracy},
          {"confusion", to_json(m.cm)}};
}

inline nlohmann::json to_json(const MalwareReport& r) {
  auto ranked = [](const std::vector<RankedFeature>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back({{"feature", f.name}, {"weight", f.weight}});
    return a;
  };
  nlohmann::json enr = nlohmann::json::object();
  for (const auto& [k, v] : r.top_enriched) enr[k] = ranked(v);
  return {{"schema_version", 1},
          {"report", "httpsem.malware"},
          {"train_size", r.train_size},
          {"test_size", r.test_size},
          {"standard", to_json(r.standard)},
          {"enriched", to_json(r.enriched)},
          {"top_features", {{"standard", ranked(r.top_standard)}, {"enriched", enr}}},
          {"reference", {{"standard_f1", 0.951}, {"enriched_f1", 0.979}}}};
}

inline std::string render_text(const MalwareReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "Feature set   F1     Precision  Recall  Accuracy\n";
  auto row = [&](const char* name, const BinaryMetrics& m) {
    char line[128];
    std::snprintf(line, sizeof line, "%-12s  %.3f  %.3f      %.3f   %.3f\n", name, m.f1, m.precision, m.recall,
                  m.accuracy);
    out << line;
  };
  row("standard", r.standard);
  row("enriched", r.enriched);
  out << "reference     standard F1 0.951, enriched F1 0.979\n\nTop features (standard):\n";
  for (const auto& f : r.top_standard) out << "  " << f.weight << "  " << f.name << "\n";
  for (const auto& [proto, v] : r.top_enriched) {
    out << "Top features (enriched, " << proto << "):\n";
    for (const auto& f : v) out << "  " << f.weight << "  " << f.name << "\n";
  }
  return out.str();
}

}  // namespace httpsem
