#pragma once

// Iterative HTTP semantics inference over one TLS connection: protocol
// determination, message-type detection, a single classification pass, then
// enhanced passes whose inputs append the summed indicator vectors of the
// previous pass's predictions until nothing changes.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "features.hpp"
#include "forest.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "tlsparse.hpp"

namespace httpsem {

inline constexpr std::size_t kAlpLengths = 20;
inline constexpr int kBundleVersion = 1;

struct InferenceConfig {
  std::size_t max_iters = 10;
  bool exclude_whole_record = false;  // drop every contribution of the target record
  std::size_t tor_window = 5;

  bool operator==(const InferenceConfig&) const = default;
};

struct TrainConfig {
  Mode mode = Mode::standard;
  TrainParams forest;               // n_trees, depth, ...; seed is overridden per model
  std::uint64_t seed = 0;
  std::size_t folds = 2;            // cross-fitting folds for the enhanced-model context
  bool truth_context = false;       // train enhanced models on ground-truth context instead
  std::size_t jobs = 1;
  double feature_fraction = 0.0;    // > 0: features per split = ceil(fraction * d)
  InferenceConfig inference;
};

struct ProtocolModels {
  ProblemRegistry registry;
  std::optional<Forest> message_type;
  std::vector<std::optional<Forest>> first_pass;  // parallel to registry problems
  std::vector<std::optional<Forest>> enhanced;
  std::vector<std::size_t> train_counts;          // samples per problem
  std::size_t message_type_count = 0;
  std::vector<std::string> notices;

  bool operator==(const ProtocolModels& o) const {
    return to_json(registry) == to_json(o.registry) && message_type == o.message_type &&
           first_pass == o.first_pass && enhanced == o.enhanced && train_counts == o.train_counts &&
           message_type_count == o.message_type_count && notices == o.notices;
  }
};

struct ModelBundle {
  Mode mode = Mode::standard;
  std::optional<Forest> alp;
  ProtocolModels http1;
  ProtocolModels http2;
  InferenceConfig inference;
  nlohmann::json training = nlohmann::json::object();

  const ProtocolModels& of(Protocol p) const { return p == Protocol::http1 ? http1 : http2; }
  ProtocolModels& of(Protocol p) { return p == Protocol::http1 ? http1 : http2; }
  bool operator==(const ModelBundle&) const = default;
};

struct Prediction {
  std::size_t record = 0;
  std::string problem;
  std::string label;
  double score = 0.0;
  Direction direction = Direction::client_to_server;

  bool operator==(const Prediction&) const = default;
};

// Per-connection prediction state: label index per (header record, problem),
// -1 where a problem does not apply.
struct PredictionState {
  std::vector<std::size_t> header_records;  // record indices, ascending
  std::vector<std::vector<int>> labels;     // [header position][problem]

  bool operator==(const PredictionState&) const = default;
};

// Signed lengths of the first 20 records, zero padded.
inline std::vector<double> alp_features(const Connection& conn) {
  std::vector<double> out(kAlpLengths, 0.0);
  for (std::size_t i = 0; i < conn.records.size() && i < kAlpLengths; ++i) out[i] = signed_record_length(conn.records[i]);
  return out;
}

struct AlpDecision {
  Protocol protocol = Protocol::http1;
  bool from_alpn = false;
};

inline AlpDecision classify_alp(const Connection& conn, const ModelBundle& bundle) {
  if (const auto& sel = conn.handshake.alpn_selected) {
    if (*sel == "h2") return {Protocol::http2, true};
    if (*sel == "http/1.1" || *sel == "http/1.0") return {Protocol::http1, true};
  }
  if (!bundle.alp) return {Protocol::http1, false};
  auto f = alp_features(conn);
  return {bundle.alp->predict_label(f) == 1 ? Protocol::http2 : Protocol::http1, false};
}

// Context positions for the header record at `pos`: everything, or the
// `radius` header records on each side in tor mode. The target itself is
// included; exclusion happens in build_enhanced_features.
inline std::vector<std::size_t> tor_enhanced_window(std::size_t n_headers, std::size_t pos, std::size_t radius) {
  std::vector<std::size_t> out;
  std::size_t lo = pos >= radius ? pos - radius : 0;
  std::size_t hi = std::min(n_headers, pos + radius + 1);
  for (std::size_t j = lo; j < hi; ++j)
    if (j != pos) out.push_back(j);
  return out;
}

inline std::vector<std::size_t> context_positions(Mode mode, std::size_t n_headers, std::size_t pos,
                                                  const InferenceConfig& cfg) {
  if (mode == Mode::tor) return tor_enhanced_window(n_headers, pos, cfg.tor_window);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n_headers; ++j)
    if (j != pos) out.push_back(j);
  return out;
}

// Sum of indicator vectors of predicted labels, problem blocks in registry
// order. Only the (target record, target problem) contribution is left out,
// or the whole target record when exclude_whole_record is set.
inline std::vector<double> build_enhanced_features(const PredictionState& state, std::size_t pos, std::size_t problem,
                                                   const ProblemRegistry& reg, Mode mode = Mode::standard,
                                                   const InferenceConfig& cfg = {}) {
  std::vector<double> out(reg.enhanced_length(), 0.0);
  auto add = [&](std::size_t j, std::size_t q) {
    int l = state.labels[j][q];
    if (l >= 0) out[reg.enhanced_offset(q) + static_cast<std::size_t>(l)] += 1.0;
  };
  for (std::size_t j : context_positions(mode, state.labels.size(), pos, cfg))
    for (std::size_t q = 0; q < reg.size(); ++q) add(j, q);
  if (!cfg.exclude_whole_record)
    for (std::size_t q = 0; q < reg.size(); ++q)
      if (q != problem) add(pos, q);
  return out;
}

inline std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// One boolean per record; non-application_data records are never headers.
inline std::vector<bool> classify_message_types(const Connection& conn, const std::vector<std::vector<double>>& samples,
                                                const ProtocolModels& models) {
  std::vector<bool> out(conn.records.size(), false);
  if (!models.message_type) return out;
  for (std::size_t i = 0; i < conn.records.size(); ++i)
    if (conn.records[i].type_code == tls::application_data)
      out[i] = models.message_type->predict_label(samples[i]) == 1;
  return out;
}

inline bool applies(const ProblemSpec& p, const TlsRecordMeta& r) { return side_direction(p.side) == r.direction; }

inline PredictionState empty_state(const Connection& conn, const std::vector<std::size_t>& headers,
                                   const ProblemRegistry& reg) {
  PredictionState s;
  s.header_records = headers;
  s.labels.assign(headers.size(), std::vector<int>(reg.size(), -1));
  (void)conn;
  return s;
}

// Request problems on client records, response problems on server records.
inline PredictionState single_pass_classify(const Connection& conn, const std::vector<std::size_t>& headers,
                                            const std::vector<std::vector<double>>& samples,
                                            const ProtocolModels& models,
                                            std::vector<std::vector<double>>* scores = nullptr) {
  const auto& reg = models.registry;
  PredictionState s = empty_state(conn, headers, reg);
  if (scores) scores->assign(headers.size() * reg.size(), {});
  for (std::size_t h = 0; h < headers.size(); ++h) {
    const auto& rec = conn.records[headers[h]];
    for (std::size_t p = 0; p < reg.size(); ++p) {
      if (!applies(reg[p], rec) || !models.first_pass[p]) continue;
      auto pr = models.first_pass[p]->predict(samples[headers[h]]);
      s.labels[h][p] = pr.label;
      if (scores) (*scores)[h * reg.size() + p] = std::move(pr.scores);
    }
  }
  return s;
}

inline PredictionState enhanced_pass(const Connection& conn, const PredictionState& prev,
                                     const std::vector<std::vector<double>>& samples, const ProtocolModels& models,
                                     Mode mode, const InferenceConfig& cfg,
                                     std::vector<std::vector<double>>* scores = nullptr) {
  const auto& reg = models.registry;
  PredictionState next = empty_state(conn, prev.header_records, reg);
  if (scores) scores->assign(prev.header_records.size() * reg.size(), {});
  for (std::size_t h = 0; h < prev.header_records.size(); ++h) {
    const auto& rec = conn.records[prev.header_records[h]];
    for (std::size_t p = 0; p < reg.size(); ++p) {
      if (!applies(reg[p], rec) || !models.enhanced[p]) continue;
      auto x = concat(samples[prev.header_records[h]], build_enhanced_features(prev, h, p, reg, mode, cfg));
      auto pr = models.enhanced[p]->predict(x);
      next.labels[h][p] = pr.label;
      if (scores) (*scores)[h * reg.size() + p] = std::move(pr.scores);
    }
  }
  return next;
}

struct InferenceResult {
  Protocol protocol = Protocol::http1;
  bool alpn_fallback = false;
  std::vector<bool> message_type;
  PredictionState single_pass;
  PredictionState final_state;
  std::vector<std::vector<double>> final_scores;  // [h * problems + p]
  std::size_t iteration_count = 0;                 // enhanced passes run
  bool converged = false;

  std::vector<Prediction> predictions(const Connection& conn, const ProblemRegistry& reg,
                                      bool single = false) const {
    const PredictionState& s = single ? single_pass : final_state;
    std::vector<Prediction> out;
    for (std::size_t h = 0; h < s.header_records.size(); ++h)
      for (std::size_t p = 0; p < reg.size(); ++p) {
        int l = s.labels[h][p];
        if (l < 0) continue;
        Prediction pr;
        pr.record = s.header_records[h];
        pr.problem = reg[p].id;
        pr.label = reg[p].labels[static_cast<std::size_t>(l)];
        const auto& sc = single ? std::vector<double>{} : final_scores[h * reg.size() + p];
        pr.score = sc.empty() ? 0.0 : sc[static_cast<std::size_t>(l)];
        pr.direction = conn.records[pr.record].direction;
        out.push_back(std::move(pr));
      }
    return out;
  }
};

// Enhanced passes start from the single-pass state and stop once two
// consecutive passes agree, so a converged run reports at least 2.
inline void iterate_from(const Connection& conn, const std::vector<std::vector<double>>& samples,
                         const ProtocolModels& models, Mode mode, const InferenceConfig& cfg, InferenceResult& r) {
  PredictionState prev = r.single_pass;
  r.iteration_count = 0;
  r.converged = false;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    PredictionState next = enhanced_pass(conn, prev, samples, models, mode, cfg, &r.final_scores);
    ++r.iteration_count;
    const bool same = it > 0 && next == prev;
    prev = std::move(next);
    if (same) {
      r.converged = true;
      break;
    }
  }
  r.final_state = std::move(prev);
}

inline InferenceResult iterative_classify_with_headers(const Connection& conn, Protocol proto,
                                                       const std::vector<bool>& is_header,
                                                       const std::vector<std::vector<double>>& samples,
                                                       const ModelBundle& bundle) {
  const ProtocolModels& models = bundle.of(proto);
  InferenceResult r;
  r.protocol = proto;
  r.message_type = is_header;
  std::vector<std::size_t> headers;
  for (std::size_t i = 0; i < is_header.size(); ++i)
    if (is_header[i]) headers.push_back(i);
  r.single_pass = single_pass_classify(conn, headers, samples, models);
  iterate_from(conn, samples, models, bundle.mode, bundle.inference, r);
  return r;
}

inline InferenceResult iterative_classify(const Connection& conn, const ModelBundle& bundle) {
  AlpDecision alp = classify_alp(conn, bundle);
  auto samples = connection_samples(conn, bundle.mode);
  auto headers = classify_message_types(conn, samples, bundle.of(alp.protocol));
  InferenceResult r = iterative_classify_with_headers(conn, alp.protocol, headers, samples, bundle);
  r.alpn_fallback = !alp.from_alpn;
  return r;
}

// Connection-level summary used by the enriched malware features: the
// summed indicator vectors of all final predictions.
inline std::vector<double> connection_summary(const InferenceResult& r, const ProblemRegistry& reg) {
  std::vector<double> out(reg.enhanced_length(), 0.0);
  for (const auto& row : r.final_state.labels)
    for (std::size_t q = 0; q < reg.size(); ++q)
      if (row[q] >= 0) out[reg.enhanced_offset(q) + static_cast<std::size_t>(row[q])] += 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

struct ConnCache {
  const LabeledConnection* lc = nullptr;
  std::vector<std::vector<double>> samples;
  std::vector<std::size_t> headers;  // ground-truth header records
};

inline TrainParams params_for(const TrainConfig& cfg, std::string_view name, std::size_t d) {
  TrainParams p = cfg.forest;
  p.seed = derive_seed(cfg.seed, name);
  p.n_jobs = cfg.jobs;
  if (cfg.feature_fraction > 0)
    p.features_per_split = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(cfg.feature_fraction * static_cast<double>(d))), 1, d);
  return p;
}

inline int truth_label(const ProblemSpec& p, const LabeledRecord& r) {
  auto it = r.labels.find(p.id);
  if (it == r.labels.end()) return -1;
  auto li = p.label_index(it->second);
  return li ? static_cast<int>(*li) : -1;
}

inline PredictionState truth_state(const ConnCache& c, const ProblemRegistry& reg) {
  PredictionState s;
  s.header_records = c.headers;
  for (auto h : c.headers) {
    std::vector<int> row(reg.size(), -1);
    for (std::size_t p = 0; p < reg.size(); ++p)
      if (applies(reg[p], c.lc->connection.records[h])) row[p] = truth_label(reg[p], c.lc->records[h]);
    s.labels.push_back(std::move(row));
  }
  return s;
}

inline std::optional<Forest> fit(const Dataset& d, std::size_t n_classes, const TrainConfig& cfg,
                                 std::string_view name, std::string schema_id, std::vector<std::string> labels) {
  if (d.empty()) return std::nullopt;
  Forest f = train_forest(d, params_for(cfg, name, d.n_features()), n_classes);
  f.set_schema_id(std::move(schema_id));
  f.set_labels(std::move(labels));
  return f;
}

inline Dataset first_pass_dataset(const std::vector<const ConnCache*>& conns, const ProblemRegistry& reg,
                                  std::size_t p, Mode mode) {
  auto schema = record_schema(mode);
  Dataset d(schema.names.size(), schema.categorical);
  for (const auto* c : conns)
    for (auto h : c->headers) {
      if (!applies(reg[p], c->lc->connection.records[h])) continue;
      int l = truth_label(reg[p], c->lc->records[h]);
      if (l >= 0) d.add(c->samples[h], l);
    }
  return d;
}

}  // namespace detail

inline ProtocolModels train_protocol_models(const std::vector<const LabeledConnection*>& corpus,
                                            const ProblemRegistry& reg, const TrainConfig& cfg) {
  ProtocolModels m;
  m.registry = reg;
  m.first_pass.resize(reg.size());
  m.enhanced.resize(reg.size());
  m.train_counts.assign(reg.size(), 0);
  const std::string proto = to_string(reg.protocol());

  std::vector<detail::ConnCache> cache(corpus.size());
  parallel_for(corpus.size(), cfg.jobs, [&](std::size_t i) {
    cache[i].lc = corpus[i];
    cache[i].samples = connection_samples(corpus[i]->connection, cfg.mode);
    for (const auto& r : corpus[i]->records)
      if (r.message_type) cache[i].headers.push_back(r.index);
  });
  std::vector<const detail::ConnCache*> all;
  for (const auto& c : cache) all.push_back(&c);

  const auto schema = record_schema(cfg.mode);
  {
    Dataset d(schema.names.size(), schema.categorical);
    for (const auto& c : cache)
      for (std::size_t i = 0; i < c.samples.size(); ++i)
        if (c.lc->connection.records[i].type_code == tls::application_data)
          d.add(c.samples[i], c.lc->records[i].message_type ? 1 : 0);
    m.message_type_count = d.size();
    if (d.empty())
      m.notices.push_back("message-type: no application_data records");
    else
      m.message_type = detail::fit(d, 2, cfg, proto + "/message-type", schema.id,
                                   {"false", "true"});
  }

  std::vector<bool> trainable(reg.size(), false);
  for (std::size_t p = 0; p < reg.size(); ++p) {
    Dataset d = detail::first_pass_dataset(all, reg, p, cfg.mode);
    m.train_counts[p] = d.size();
    std::set<int> seen(d.labels().begin(), d.labels().end());
    if (seen.size() < 2) {
      m.notices.push_back(reg[p].id + ": skipped, " + std::to_string(seen.size()) + " observed label(s) in training");
      continue;
    }
    trainable[p] = true;
    m.first_pass[p] = detail::fit(d, reg[p].labels.size(), cfg, proto + "/first/" + reg[p].id,
                                  schema.id, reg[p].labels);
  }

  // Context for the enhanced models: first-pass predictions from models
  // that never saw the connection.
  std::vector<PredictionState> context(cache.size());
  if (cfg.truth_context || cfg.folds < 2 || cache.size() < cfg.folds) {
    for (std::size_t i = 0; i < cache.size(); ++i) context[i] = detail::truth_state(cache[i], reg);
  } else {
    std::vector<std::size_t> order(cache.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, proto + "/folds"));
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> fold(cache.size());
    for (std::size_t k = 0; k < order.size(); ++k) fold[order[k]] = k % cfg.folds;
    for (std::size_t f = 0; f < cfg.folds; ++f) {
      std::vector<const detail::ConnCache*> in;
      for (std::size_t i = 0; i < cache.size(); ++i)
        if (fold[i] != f) in.push_back(&cache[i]);
      ProtocolModels fm;
      fm.registry = reg;
      fm.first_pass.resize(reg.size());
      for (std::size_t p = 0; p < reg.size(); ++p) {
        if (!trainable[p]) continue;
        Dataset d = detail::first_pass_dataset(in, reg, p, cfg.mode);
        fm.first_pass[p] = detail::fit(d, reg[p].labels.size(),
                                       cfg, proto + "/fold" + std::to_string(f) + "/" + reg[p].id,
                                       schema.id, reg[p].labels);
      }
      for (std::size_t i = 0; i < cache.size(); ++i)
        if (fold[i] == f)
          context[i] = single_pass_classify(cache[i].lc->connection, cache[i].headers, cache[i].samples, fm);
    }
  }

  const auto eschema = enhanced_schema(cfg.mode, reg);
  for (std::size_t p = 0; p < reg.size(); ++p) {
    if (!trainable[p]) continue;
    Dataset d(eschema.names.size(), eschema.categorical);
    for (std::size_t i = 0; i < cache.size(); ++i) {
      const auto& c = cache[i];
      for (std::size_t h = 0; h < c.headers.size(); ++h) {
        const auto idx = c.headers[h];
        if (!applies(reg[p], c.lc->connection.records[idx])) continue;
        int l = detail::truth_label(reg[p], c.lc->records[idx]);
        if (l < 0) continue;
        d.add(concat(c.samples[idx], build_enhanced_features(context[i], h, p, reg, cfg.mode, cfg.inference)), l);
      }
    }
    m.enhanced[p] = detail::fit(d, reg[p].labels.size(), cfg, proto + "/enhanced/" + reg[p].id,
                                eschema.id, reg[p].labels);
  }
  return m;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"seed", c.seed},
          {"folds", c.folds},
          {"truth_context", c.truth_context},
          {"n_trees", c.forest.n_trees},
          {"max_depth", c.forest.max_depth},
          {"min_leaf", c.forest.min_leaf},
          {"features_per_split", c.forest.features_per_split},
          {"bootstrap", c.forest.bootstrap},
          {"feature_fraction", c.feature_fraction}};
}

inline ModelBundle train_bundle(const std::vector<LabeledConnection>& corpus, const TrainConfig& cfg,
                                const Registries& regs = {}) {
  if (corpus.empty()) throw Error("train_bundle: empty corpus");
  ModelBundle b;
  b.mode = cfg.mode;
  b.inference = cfg.inference;
  std::vector<const LabeledConnection*> by_proto[2];
  Dataset alp(kAlpLengths);
  for (const auto& lc : corpus) {
    by_proto[lc.protocol == Protocol::http1 ? 0 : 1].push_back(&lc);
    alp.add(alp_features(lc.connection), lc.protocol == Protocol::http2 ? 1 : 0);
  }
  b.alp = detail::fit(alp, 2, cfg, "alp", "httpsem.alp.v1", {"http/1.1", "h2"});
  b.http1 = train_protocol_models(by_proto[0], regs.http1, cfg);
  b.http2 = train_protocol_models(by_proto[1], regs.http2, cfg);
  b.training = to_json(cfg);
  b.training["connections"] = {{"http/1.1", by_proto[0].size()}, {"h2", by_proto[1].size()}};
  return b;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline nlohmann::json opt_forest(const std::optional<Forest>& f) { return f ? to_json(*f) : nlohmann::json(nullptr); }

inline std::optional<Forest> opt_forest_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return forest_from_json(j);
}

inline nlohmann::json to_json(const ProtocolModels& m) {
  nlohmann::json first = nlohmann::json::array(), enh = nlohmann::json::array();
  for (std::size_t p = 0; p < m.registry.size(); ++p) {
    first.push_back(opt_forest(m.first_pass[p]));
    enh.push_back(opt_forest(m.enhanced[p]));
  }
  return {{"registry", httpsem::to_json(m.registry)},
          {"message_type", opt_forest(m.message_type)},
          {"message_type_count", m.message_type_count},
          {"first_pass", first},
          {"enhanced", enh},
          {"train_counts", m.train_counts},
          {"notices", m.notices}};
}

inline ProtocolModels protocol_models_from(const nlohmann::json& j, Mode mode) {
  ProtocolModels m;
  m.registry = registry_from_json(j.at("registry"));
  m.message_type = opt_forest_from(j.at("message_type"));
  m.message_type_count = j.at("message_type_count").get<std::size_t>();
  for (const auto& f : j.at("first_pass")) m.first_pass.push_back(opt_forest_from(f));
  for (const auto& f : j.at("enhanced")) m.enhanced.push_back(opt_forest_from(f));
  m.train_counts = j.at("train_counts").get<std::vector<std::size_t>>();
  m.notices = j.at("notices").get<std::vector<std::string>>();
  if (m.first_pass.size() != m.registry.size() || m.enhanced.size() != m.registry.size())
    throw SchemaError("bundle: model count does not match registry");
  const std::size_t base = sample_length(mode);
  for (std::size_t p = 0; p < m.registry.size(); ++p) {
    if (m.first_pass[p] && m.first_pass[p]->n_features() != base)
      throw SchemaError("bundle: first-pass model for " + m.registry[p].id + " has wrong input length");
    if (m.enhanced[p] && m.enhanced[p]->n_features() != base + m.registry.enhanced_length())
      throw SchemaError("bundle: enhanced model for " + m.registry[p].id + " has wrong input length");
  }
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const ModelBundle& b) {
  return {{"format", "httpsem.bundle"},
          {"version", kBundleVersion},
          {"mode", to_string(b.mode)},
          {"inference",
           {{"max_iters", b.inference.max_iters},
            {"exclude_whole_record", b.inference.exclude_whole_record},
            {"tor_window", b.inference.tor_window}}},
          {"training", b.training},
          {"alp", detail::opt_forest(b.alp)},
          {"http/1.1", detail::to_json(b.http1)},
          {"h2", detail::to_json(b.http2)}};
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "httpsem.bundle") throw ParseError("not a model bundle");
  if (j.at("version").get<int>() != kBundleVersion) throw ParseError("unsupported bundle version");
  ModelBundle b;
  b.mode = parse_mode(j.at("mode").get<std::string>());
  const auto& inf = j.at("inference");
  b.inference.max_iters = inf.at("max_iters").get<std::size_t>();
  b.inference.exclude_whole_record = inf.at("exclude_whole_record").get<bool>();
  b.inference.tor_window = inf.at("tor_window").get<std::size_t>();
  b.training = j.at("training");
  b.alp = detail::opt_forest_from(j.at("alp"));
  b.http1 = detail::protocol_models_from(j.at("http/1.1"), b.mode);
  b.http2 = detail::protocol_models_from(j.at("h2"), b.mode);
  return b;
}

// MessagePack when the path ends in .msgpack, JSON otherwise.
inline void save_bundle(const ModelBundle& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  auto j = to_json(b);
  if (std::filesystem::path(path).extension() == ".msgpack") {
    auto bytes = nlohmann::json::to_msgpack(j);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    out << j.dump() << "\n";
  }
}

inline ModelBundle load_bundle(const std::string& path) {
  Bytes data = read_file(path);
  try {
    if (std::filesystem::path(path).extension() == ".msgpack") return bundle_from_json(nlohmann::json::from_msgpack(data));
    return bundle_from_json(nlohmann::json::parse(data.begin(), data.end()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace httpsem
