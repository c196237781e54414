#pragma once

// Reproducible labeled TLS corpora. Each connection is emitted as TCP
// segments (real client/server hellos, MSS segmentation, PUSH on the last
// segment of every write) together with its ground-truth session JSON and the
// generator's own per-record labels.
//
// Labels are planted in record lengths. Every transaction writes a header
// record followed by a few continuation records; each record kind owns a
// disjoint length range and encodes the labels of a fixed group of problems
// as a mixed-radix code, length = base + step * code + clipped noise.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "capture.hpp"
#include "corpus.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "tls_builder.hpp"
#include "tlsparse.hpp"

namespace httpsem {

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t n_connections = 200;
  double http2_fraction = 0.5;
  double alpn_present = 1.0;
  std::size_t min_transactions = 1;
  std::size_t max_transactions = 6;
  double separation = 5.0;       // distance between adjacent codes, in noise_sd
  double weak_separation = 1.0;  // same, for records carrying correlated problems
  double noise_sd = 10.0;
  double noise_clip = 2.0;  // noise is clipped to +-noise_clip * noise_sd
  double label_correlation = 0.0;
  std::vector<std::string> correlated_problems;
  // Keys are "<problem id>" (both protocols) or "<protocol>:<problem id>",
  // e.g. "h2:response.Server". Weights follow the registry label order.
  std::map<std::string, std::vector<double>> priors;
  double pipelining = 0.0;
  double start_time = 1500000000.0;
  double span_days = 14.0;
  std::size_t mss = 1448;
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"n_connections", s.n_connections},
          {"http2_fraction", s.http2_fraction},
          {"alpn_present", s.alpn_present},
          {"min_transactions", s.min_transactions},
          {"max_transactions", s.max_transactions},
          {"separation", s.separation},
          {"weak_separation", s.weak_separation},
          {"noise_sd", s.noise_sd},
          {"noise_clip", s.noise_clip},
          {"label_correlation", s.label_correlation},
          {"correlated_problems", s.correlated_problems},
          {"priors", s.priors},
          {"pipelining", s.pipelining},
          {"start_time", s.start_time},
          {"span_days", s.span_days},
          {"mss", s.mss}};
}

// Missing keys keep their defaults.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("seed", s.seed);
  get("n_connections", s.n_connections);
  get("http2_fraction", s.http2_fraction);
  get("alpn_present", s.alpn_present);
  get("min_transactions", s.min_transactions);
  get("max_transactions", s.max_transactions);
  get("separation", s.separation);
  get("weak_separation", s.weak_separation);
  get("noise_sd", s.noise_sd);
  get("noise_clip", s.noise_clip);
  get("label_correlation", s.label_correlation);
  get("correlated_problems", s.correlated_problems);
  get("priors", s.priors);
  get("pipelining", s.pipelining);
  get("start_time", s.start_time);
  get("span_days", s.span_days);
  get("mss", s.mss);
  return s;
}

struct SynthConnection {
  std::string id;
  FiveTuple tuple;
  Protocol protocol = Protocol::http1;
  double start = 0.0;
  std::vector<TcpSegment> segments;
  nlohmann::json session;              // ground truth, as a decryption tool would write it
  std::vector<LabeledRecord> labels;   // generator oracle, one per TLS record
};

namespace synth {

// One record kind: the problems whose labels it encodes (mixed radix, first
// problem least significant).
struct RecordKind {
  std::string name;
  Side side = Side::client;
  std::vector<std::string> problems;
  bool header = false;
};

inline const std::vector<RecordKind>& record_kinds() {
  static const std::vector<RecordKind> kinds = {
      {"Q0", Side::client, {"request.method"}, true},
      {"Q1", Side::client, {"request.Cookie"}, false},
      {"Q2", Side::client, {"request.Referer", "request.Origin"}, false},
      {"Q3", Side::client, {"request.Content-Type"}, false},
      {"R0", Side::server, {"response.status-code"}, true},
      {"R1", Side::server, {"response.Server"}, false},
      {"R2", Side::server, {"response.Access-Control-Allow-Origin"}, false},
      {"R3", Side::server, {"response.Via", "response.Accept-Ranges"}, false},
      {"R4", Side::server, {"response.Etag", "response.Set-Cookie"}, false},
      {"R5", Side::server, {"response.Content-Type"}, false},
  };
  return kinds;
}

struct KindLayout {
  double base = 0;
  double step = 0;
  std::vector<std::size_t> problem_index;  // into the registry
  std::vector<std::size_t> radix;
};

// Length ranges per record kind for one protocol. Ranges of one direction
// never overlap: consecutive kinds are separated by a margin wider than the
// clipped noise.
struct Layout {
  std::vector<KindLayout> kinds;  // parallel to record_kinds()
  double client_body_min = 0;
  double server_body_min = 0;
  double preface_length = 40;   // h2 client preface + SETTINGS
  double settings_length = 30;  // h2 server SETTINGS
};

inline Layout make_layout(const SynthSpec& spec, const ProblemRegistry& reg) {
  Layout L;
  const double clip = spec.noise_clip * spec.noise_sd;
  const double margin = 2 * clip + 4 * spec.noise_sd;
  double next_client = reg.protocol() == Protocol::http2 ? 100 : 300;
  double next_server = reg.protocol() == Protocol::http2 ? 80 : 120;
  for (const auto& k : record_kinds()) {
    KindLayout kl;
    bool weak = false;
    std::size_t codes = 1;
    for (const auto& id : k.problems) {
      auto pi = reg.find(id);
      if (!pi) throw Error("synth: registry lacks problem " + id);
      kl.problem_index.push_back(*pi);
      kl.radix.push_back(reg[*pi].labels.size());
      codes *= reg[*pi].labels.size();
      weak = weak || std::find(spec.correlated_problems.begin(), spec.correlated_problems.end(), id) !=
                         spec.correlated_problems.end();
    }
    kl.step = (weak ? spec.weak_separation : spec.separation) * spec.noise_sd;
    double& next = k.side == Side::client ? next_client : next_server;
    kl.base = next + clip;
    next = kl.base + kl.step * static_cast<double>(codes - 1) + clip + margin;
    L.kinds.push_back(kl);
  }
  L.client_body_min = next_client + margin;
  L.server_body_min = next_server + margin;
  if (L.client_body_min + 1000 > 16384 || L.server_body_min + 1000 > 16384)
    throw Error("synth: separation too large for TLS record lengths");
  return L;
}

inline std::vector<double> prior_for(const SynthSpec& spec, const ProblemSpec& p) {
  const std::string scoped = std::string(p.protocol == Protocol::http1 ? "http1:" : "h2:") + p.id;
  auto it = spec.priors.find(scoped);
  if (it == spec.priors.end()) it = spec.priors.find(p.id);
  if (it == spec.priors.end()) return std::vector<double>(p.labels.size(), 1.0 / static_cast<double>(p.labels.size()));
  return it->second;
}

inline void validate(const SynthSpec& spec, const Registries& regs) {
  auto unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(std::string("synth: ") + what + " must be in [0, 1]");
  };
  unit(spec.http2_fraction, "http2_fraction");
  unit(spec.alpn_present, "alpn_present");
  unit(spec.label_correlation, "label_correlation");
  unit(spec.pipelining, "pipelining");
  if (spec.min_transactions == 0 || spec.min_transactions > spec.max_transactions)
    throw Error("synth: need 1 <= min_transactions <= max_transactions");
  if (!(spec.separation > 0) || !(spec.weak_separation > 0) || !(spec.noise_sd > 0) || !(spec.noise_clip >= 0))
    throw Error("synth: separations and noise_sd must be positive");
  if (spec.mss < 64 || spec.mss > 9000) throw Error("synth: mss out of range");
  if (spec.span_days < 0) throw Error("synth: span_days must be >= 0");
  for (const auto& [key, w] : spec.priors) {
    std::string id = key.substr(key.find(':') == std::string::npos ? 0 : key.find(':') + 1);
    bool known = false;
    for (Protocol proto : {Protocol::http1, Protocol::http2}) {
      auto pi = regs.of(proto).find(id);
      if (!pi) continue;
      known = true;
      const bool scoped = key != id;
      const bool applies = !scoped || key.rfind(proto == Protocol::http1 ? "http1:" : "h2:", 0) == 0;
      if (applies && w.size() != regs.of(proto)[*pi].labels.size())
        throw Error("synth: prior for " + key + " has wrong length");
    }
    if (!known) throw Error("synth: prior for unknown problem " + key);
    double sum = 0;
    for (double x : w) {
      if (!(x >= 0)) throw Error("synth: negative prior weight for " + key);
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error("synth: priors for " + key + " do not sum to 1");
  }
  for (const auto& id : spec.correlated_problems)
    if (!regs.http1.find(id) && !regs.http2.find(id)) throw Error("synth: unknown correlated problem " + id);
}

// A raw header value that normalizes to `label`.
inline std::string raw_value(const ProblemSpec& p, const std::string& label, Rng& rng) {
  if (p.kind == ProblemKind::binary) {
    static const std::map<std::string, std::string> values = {
        {"Cookie", "sid=31d4d96e407aad42"},  {"Referer", "https://www.example.com/index.html"},
        {"Origin", "https://www.example.com"}, {"Access-Control-Allow-Origin", "*"},
        {"Etag", "\"5e2b-56ad7c1\""},          {"Via", "1.1 varnish"},
        {"Accept-Ranges", "bytes"},           {"Set-Cookie", "id=a3fWa; Max-Age=2592000"}};
    auto it = values.find(p.field);
    return it == values.end() ? "1" : it->second;
  }
  if (p.field == "method") return label == kOtherLabel ? "PATCH" : label;
  if (p.field == "status-code") return label == kOtherLabel ? "500" : label;
  if (p.field == "Content-Type") {
    static const std::map<std::string, std::string> types = {
        {"html", "text/html; charset=utf-8"}, {"javascript", "application/javascript"},
        {"image", "image/png"},               {"video", "video/mp4"},
        {"css", "text/css"},                  {"octet", "application/octet-stream"},
        {"json", "application/json"},         {"font", "font/woff2"},
        {"plain", "text/plain;charset=UTF-8"}, {"protobuf", "application/x-protobuf"},
        {kOtherLabel, "application/xml"}};
    return types.at(label);
  }
  if (p.field == "Server") {
    if (label == kOtherLabel) return "Caddy";
    auto pat = detail::parse_server_label(label);
    std::string product = pat.product;
    if (product == "Coyote") product = "Apache-Coyote";
    if (product == "IIS") product = "Microsoft-IIS";
    if (product == "NetDNA") product = "NetDNA-cache";
    if (pat.versions.empty()) return product;
    const std::string& v = pat.versions[rng.below(pat.versions.size())];
    if (product == "jetty") return "Jetty(" + v + "." + std::to_string(rng.between(0, 9)) + ".v20180605)";
    return product + "/" + v + "." + std::to_string(rng.between(0, 9));
  }
  return label;
}

struct Transaction {
  std::map<std::string, std::string> labels;  // problem id -> label
  std::map<std::string, std::string> raw;     // problem id -> raw value
};

class Builder {
 public:
  Builder(const SynthSpec& spec, const ProblemRegistry& reg, const Layout& layout, std::size_t index, Rng& rng)
      : spec_(spec), reg_(reg), layout_(layout), rng_(rng) {
    const auto a = static_cast<unsigned>(index);
    tuple_.client = {"10." + std::to_string(1 + ((a >> 16) & 0x7f)) + "." + std::to_string((a >> 8) & 0xff) + "." +
                         std::to_string(a & 0xff),
                     static_cast<std::uint16_t>(40000 + index % 20000)};
    tuple_.server = {"172.16." + std::to_string((a >> 8) & 0x0f) + "." + std::to_string(1 + (a & 0x7f)), 443};
    seq_[0] = static_cast<std::uint32_t>(rng_.next());
    seq_[1] = static_cast<std::uint32_t>(rng_.next());
  }

  const FiveTuple& tuple() const { return tuple_; }
  std::vector<TcpSegment>& segments() { return segments_; }
  nlohmann::json& gt_records() { return gt_; }
  std::vector<LabeledRecord>& labels() { return labels_; }

  void open(double t0) {
    now_ = t0;
    emit(Direction::client_to_server, tcp_flags::syn, {});
    ++seq_[0];
    emit(Direction::server_to_client, tcp_flags::syn | tcp_flags::ack, {});
    ++seq_[1];
    emit(Direction::client_to_server, tcp_flags::ack, {});
  }

  void close() {
    emit(Direction::client_to_server, tcp_flags::fin | tcp_flags::ack, {});
    ++seq_[0];
    emit(Direction::server_to_client, tcp_flags::fin | tcp_flags::ack, {});
    ++seq_[1];
    emit(Direction::client_to_server, tcp_flags::ack, {});
  }

  // Queues a record for the next write in `dir`.
  void record(Direction dir, std::uint8_t type, Bytes payload, nlohmann::json decrypted = nullptr,
              const LabeledRecord* label = nullptr) {
    Bytes rec = tls::record(type, payload);
    auto& w = pending_[static_cast<int>(dir)];
    w.insert(w.end(), rec.begin(), rec.end());
    nlohmann::json g = {{"type", type == tls::application_data ? "app_data"
                                 : type == tls::handshake      ? "handshake"
                                 : type == tls::change_cipher_spec ? "change_cipher_spec"
                                                                   : "alert"},
                        {"length", payload.size()},
                        {"direction", to_string(dir)}};
    if (!decrypted.is_null()) g["decrypted_data"] = std::move(decrypted);
    gt_.push_back(std::move(g));
    LabeledRecord lr = label ? *label : LabeledRecord{};
    lr.index = labels_.size();
    labels_.push_back(std::move(lr));
  }

  // Sends the queued bytes in MSS-sized segments; the peer acknowledges.
  void flush(Direction dir) {
    auto& w = pending_[static_cast<int>(dir)];
    if (w.empty()) return;
    for (std::size_t off = 0; off < w.size(); off += spec_.mss) {
      std::size_t n = std::min(spec_.mss, w.size() - off);
      bool last = off + n == w.size();
      emit(dir, static_cast<std::uint8_t>(tcp_flags::ack | (last ? tcp_flags::psh : 0)),
           Bytes(w.begin() + static_cast<std::ptrdiff_t>(off), w.begin() + static_cast<std::ptrdiff_t>(off + n)));
    }
    w.clear();
    emit(opposite(dir), tcp_flags::ack, {});
    now_ += rng_.uniform(0.001, 0.02);
  }

  double length_for(std::size_t kind, const Transaction& tx) {
    const auto& kl = layout_.kinds[kind];
    std::size_t code = 0, mult = 1;
    for (std::size_t i = 0; i < kl.problem_index.size(); ++i) {
      const auto& p = reg_[kl.problem_index[i]];
      code += mult * *p.label_index(tx.labels.at(p.id));
      mult *= kl.radix[i];
    }
    return std::round(kl.base + kl.step * static_cast<double>(code) + noise());
  }

  double noise() {
    double clip = spec_.noise_clip * spec_.noise_sd;
    return std::clamp(rng_.normal(0.0, spec_.noise_sd), -clip, clip);
  }

  Rng& rng() { return rng_; }
  const Layout& layout() const { return layout_; }

 private:
  void emit(Direction dir, std::uint8_t flags, Bytes payload) {
    TcpSegment s;
    s.timestamp = now_;
    now_ += 0.0001;
    const int d = static_cast<int>(dir);
    s.src = dir == Direction::client_to_server ? tuple_.client : tuple_.server;
    s.dst = dir == Direction::client_to_server ? tuple_.server : tuple_.client;
    s.seq = seq_[d];
    s.ack = seq_[1 - d];
    s.flags = flags;
    seq_[d] += static_cast<std::uint32_t>(payload.size());
    s.payload = std::move(payload);
    segments_.push_back(std::move(s));
  }

  const SynthSpec& spec_;
  const ProblemRegistry& reg_;
  const Layout& layout_;
  Rng& rng_;
  FiveTuple tuple_;
  std::uint32_t seq_[2] = {0, 0};
  Bytes pending_[2];
  double now_ = 0;
  std::vector<TcpSegment> segments_;
  nlohmann::json gt_ = nlohmann::json::array();
  std::vector<LabeledRecord> labels_;
};

inline const std::vector<std::uint16_t>& offered_suites() {
  static const std::vector<std::uint16_t> s = {0x1a1a, 0x1301, 0x1302, 0x1303, 0xc02b, 0xc02f, 0xc02c,
                                               0xc030, 0xcca9, 0xcca8, 0xc013, 0xc014, 0x009c, 0x009d,
                                               0x002f, 0x0035, 0x000a};
  return s;
}

inline void handshake(Builder& b, Protocol proto, bool alpn) {
  tls::ClientHelloSpec ch;
  ch.cipher_suites = offered_suites();
  ch.extensions.push_back({0x2a2a, {}});
  ch.extensions.push_back({tls::ext_server_name, tls::sni_extension_data("www.example.com")});
  ch.extensions.push_back({0x0017, {}});
  ch.extensions.push_back({0xff01, {0x00}});
  ch.extensions.push_back({0x000a, {0x00, 0x04, 0x00, 0x1d, 0x00, 0x17}});
  ch.extensions.push_back({0x000b, {0x01, 0x00}});
  if (alpn) ch.extensions.push_back({tls::ext_alpn, tls::alpn_extension_data({"h2", "http/1.1"})});
  ch.extensions.push_back({0x000d, {0x00, 0x04, 0x04, 0x03, 0x08, 0x04}});
  ch.extensions.push_back({0x3a3a, {0x00}});
  ch.random_fill = static_cast<std::uint8_t>(b.rng().next());
  b.record(Direction::client_to_server, tls::handshake, tls::client_hello(ch));
  b.flush(Direction::client_to_server);

  tls::ServerHelloSpec sh;
  sh.cipher_suite = 0xc02f;
  sh.extensions.push_back({0xff01, {0x00}});
  if (alpn) sh.extensions.push_back({tls::ext_alpn, tls::alpn_extension_data({proto == Protocol::http2 ? "h2" : "http/1.1"})});
  Bytes flight = tls::server_hello(sh);
  Bytes cert = tls::handshake_message(11, Bytes(static_cast<std::size_t>(b.rng().between(2400, 3600)), 0x30));
  flight.insert(flight.end(), cert.begin(), cert.end());
  Bytes ske = tls::handshake_message(12, Bytes(329, 0x03));
  flight.insert(flight.end(), ske.begin(), ske.end());
  Bytes done = tls::handshake_message(14, {});
  flight.insert(flight.end(), done.begin(), done.end());
  b.record(Direction::server_to_client, tls::handshake, flight);
  b.flush(Direction::server_to_client);

  b.record(Direction::client_to_server, tls::handshake, tls::handshake_message(16, Bytes(66, 0x04)));
  b.record(Direction::client_to_server, tls::change_cipher_spec, {0x01});
  b.record(Direction::client_to_server, tls::handshake, Bytes(40, 0x7e));
  b.flush(Direction::client_to_server);
  b.record(Direction::server_to_client, tls::change_cipher_spec, {0x01});
  b.record(Direction::server_to_client, tls::handshake, Bytes(40, 0x7f));
  b.flush(Direction::server_to_client);
}

inline nlohmann::json header_list(const std::vector<std::pair<std::string, std::string>>& h, bool pairs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [k, v] : h) {
    if (pairs)
      out.push_back(nlohmann::json::array({k, v}));
    else
      out.push_back({{"name", k}, {"value", v}});
  }
  return out;
}

inline LabeledRecord oracle_for(const Transaction& tx, const ProblemRegistry& reg, Side side) {
  LabeledRecord lr;
  lr.message_type = true;
  for (const auto& p : reg.problems())
    if (p.side == side && tx.labels.count(p.id)) lr.labels[p.id] = tx.labels.at(p.id);
  return lr;
}

// Header record first, then one continuation record per kind whose labels
// the transaction carries.
inline void send_kinds(Builder& b, const Transaction& tx, Side side, const nlohmann::json& decrypted,
                       const LabeledRecord& oracle) {
  const Direction dir = side == Side::client ? Direction::client_to_server : Direction::server_to_client;
  const auto& kinds = record_kinds();
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    if (kinds[k].side != side) continue;
    const bool carried = std::all_of(kinds[k].problems.begin(), kinds[k].problems.end(),
                                     [&](const std::string& id) { return tx.labels.count(id) > 0; });
    if (!carried) continue;
    const auto len = static_cast<std::size_t>(b.length_for(k, tx));
    if (kinds[k].header)
      b.record(dir, tls::application_data, Bytes(len, 0x17), decrypted, &oracle);
    else
      b.record(dir, tls::application_data, Bytes(len, 0x17), {{"continuation", true}});
  }
}

inline void send_request(Builder& b, const Transaction& tx, const ProblemRegistry& reg, Protocol proto) {
  std::vector<std::pair<std::string, std::string>> headers = {{"Host", "www.example.com"},
                                                              {"User-Agent", "Mozilla/5.0"}};
  for (const auto& p : reg.problems()) {
    if (p.side != Side::client || p.field == "method") continue;
    auto it = tx.raw.find(p.id);
    if (it != tx.raw.end()) headers.emplace_back(p.field, it->second);
  }
  const std::string& method = tx.raw.at("request.method");
  nlohmann::json decrypted;
  if (proto == Protocol::http1) {
    decrypted = {{"method", method}, {"uri", "/"}, {"v", "HTTP/1.1"}, {"headers", header_list(headers, false)}};
  } else {
    auto h2 = headers;
    h2.insert(h2.begin(), {{":method", method}, {":path", "/"}, {":scheme", "https"}});
    for (auto& [k, v] : h2) k = detail::lower(k);
    decrypted = {{"frames", nlohmann::json::array({{{"type", "HEADERS"}, {"headers", header_list(h2, true)}}})}};
  }
  LabeledRecord oracle = oracle_for(tx, reg, Side::client);
  const Direction c2s = Direction::client_to_server;
  auto opaque = [](double len) { return Bytes(static_cast<std::size_t>(len), 0x17); };
  send_kinds(b, tx, Side::client, decrypted, oracle);
  if (tx.labels.count("request.Content-Type"))
    b.record(c2s, tls::application_data,
             opaque(std::round(b.rng().uniform(b.layout().client_body_min, b.layout().client_body_min + 4000))));
  b.flush(c2s);
}

inline void send_response(Builder& b, const Transaction& tx, const ProblemRegistry& reg, Protocol proto) {
  std::vector<std::pair<std::string, std::string>> headers = {{"Date", "Mon, 27 Jul 2017 12:28:53 GMT"}};
  for (const auto& p : reg.problems()) {
    if (p.side != Side::server || p.field == "status-code") continue;
    auto it = tx.raw.find(p.id);
    if (it != tx.raw.end()) headers.emplace_back(p.field, it->second);
  }
  const std::string& status = tx.raw.at("response.status-code");
  nlohmann::json decrypted;
  if (proto == Protocol::http1) {
    decrypted = {{"v", "HTTP/1.1"}, {"status", status}, {"headers", header_list(headers, false)}};
  } else {
    auto h2 = headers;
    h2.insert(h2.begin(), {":status", status});
    for (auto& [k, v] : h2) k = detail::lower(k);
    decrypted = {{"frames", nlohmann::json::array({{{"type", "HEADERS"}, {"headers", header_list(h2, true)}}})}};
  }
  LabeledRecord oracle = oracle_for(tx, reg, Side::server);
  const Direction s2c = Direction::server_to_client;
  auto opaque = [](double len) { return Bytes(static_cast<std::size_t>(len), 0x17); };
  send_kinds(b, tx, Side::server, decrypted, oracle);
  const auto bodies = b.rng().between(0, 2);
  for (std::int64_t i = 0; i < bodies; ++i)
    b.record(s2c, tls::application_data, opaque(std::round(b.rng().uniform(b.layout().server_body_min, 16384))));
  b.flush(s2c);
}

}  // namespace synth

// Deterministic in spec.seed; connection i draws from derive_seed(seed, i)
// so generation order does not matter.
class SynthGenerator {
 public:
  explicit SynthGenerator(SynthSpec spec, Registries regs = {}) : spec_(std::move(spec)), regs_(std::move(regs)) {
    synth::validate(spec_, regs_);
    layouts_[0] = synth::make_layout(spec_, regs_.http1);
    layouts_[1] = synth::make_layout(spec_, regs_.http2);
  }

  const SynthSpec& spec() const { return spec_; }
  const Registries& registries() const { return regs_; }
  const synth::Layout& layout(Protocol p) const { return layouts_[p == Protocol::http1 ? 0 : 1]; }

  SynthConnection connection(std::size_t index) const {
    Rng rng(derive_seed(spec_.seed, index));
    const Protocol proto = rng.bernoulli(spec_.http2_fraction) ? Protocol::http2 : Protocol::http1;
    const bool alpn = rng.bernoulli(spec_.alpn_present);
    const ProblemRegistry& reg = regs_.of(proto);
    synth::Builder b(spec_, reg, layout(proto), index, rng);

    SynthConnection out;
    out.protocol = proto;
    out.start = spec_.start_time + rng.uniform() * spec_.span_days * 86400.0;
    b.open(out.start);
    synth::handshake(b, proto, alpn);
    if (proto == Protocol::http2) {
      b.record(Direction::client_to_server, tls::application_data,
               Bytes(static_cast<std::size_t>(std::round(layout(proto).preface_length + b.noise())), 0x17),
               {{"frames", nlohmann::json::array({{{"type", "SETTINGS"}}})}});
      b.flush(Direction::client_to_server);
      b.record(Direction::server_to_client, tls::application_data,
               Bytes(static_cast<std::size_t>(std::round(layout(proto).settings_length + b.noise())), 0x17),
               {{"frames", nlohmann::json::array({{{"type", "SETTINGS"}}})}});
      b.flush(Direction::server_to_client);
    }

    // Connection-level values for correlated problems.
    std::map<std::string, std::string> shared;
    for (const auto& id : spec_.correlated_problems)
      if (auto pi = reg.find(id)) shared[id] = draw(reg[*pi], rng);

    const auto n = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(spec_.min_transactions), static_cast<std::int64_t>(spec_.max_transactions)));
    std::vector<synth::Transaction> txs;
    for (std::size_t t = 0; t < n; ++t) txs.push_back(transaction(reg, shared, rng));

    for (std::size_t t = 0; t < n;) {
      synth::send_request(b, txs[t], reg, proto);
      if (t + 1 < n && rng.bernoulli(spec_.pipelining)) {
        synth::send_request(b, txs[t + 1], reg, proto);
        synth::send_response(b, txs[t], reg, proto);
        synth::send_response(b, txs[t + 1], reg, proto);
        t += 2;
      } else {
        synth::send_response(b, txs[t], reg, proto);
        t += 1;
      }
    }
    b.close();

    out.tuple = b.tuple();
    out.id = out.tuple.client.to_string() + "->" + out.tuple.server.to_string();
    out.segments = std::move(b.segments());
    out.labels = std::move(b.labels());
    out.session = {{"client", out.tuple.client.to_string()},
                   {"server", out.tuple.server.to_string()},
                   {"protocol", to_string(proto)},
                   {"tls_records", std::move(b.gt_records())}};
    return out;
  }

  std::vector<SynthConnection> generate() const {
    std::vector<SynthConnection> out;
    out.reserve(spec_.n_connections);
    for (std::size_t i = 0; i < spec_.n_connections; ++i) out.push_back(connection(i));
    return out;
  }

 private:
  std::string draw(const ProblemSpec& p, Rng& rng) const {
    auto w = synth::prior_for(spec_, p);
    return p.labels[rng.categorical(w)];
  }

  synth::Transaction transaction(const ProblemRegistry& reg, const std::map<std::string, std::string>& shared,
                                 Rng& rng) const {
    synth::Transaction tx;
    for (const auto& p : reg.problems()) {
      std::string label = draw(p, rng);
      if (auto it = shared.find(p.id); it != shared.end() && rng.bernoulli(spec_.label_correlation))
        label = it->second;
      tx.labels[p.id] = label;
    }
    // Request bodies, and so request Content-Type, only accompany methods
    // that carry one.
    const std::string& m = tx.labels.at("request.method");
    if (m == "GET" || m == "HEAD" || m == "OPTIONS") tx.labels.erase("request.Content-Type");
    for (const auto& p : reg.problems()) {
      auto it = tx.labels.find(p.id);
      if (it == tx.labels.end()) continue;
      if (p.kind == ProblemKind::binary && it->second == kAbsentLabel) continue;
      tx.raw[p.id] = synth::raw_value(p, it->second, rng);
    }
    return tx;
  }

  SynthSpec spec_;
  Registries regs_;
  synth::Layout layouts_[2];
};

// Runs the capture and TLS parsers over the generated segments and attaches
// the generator's labels.
inline LabeledConnection materialize(const SynthConnection& sc) {
  auto raws = group_connections(sc.segments);
  if (raws.size() != 1) throw Error("synth: connection " + sc.id + " did not group into one flow");
  LabeledConnection lc;
  lc.id = sc.id;
  lc.connection = parse_tls_records(std::move(raws.front()));
  lc.protocol = sc.protocol;
  lc.timestamp = sc.start;
  lc.records = sc.labels;
  if (lc.records.size() != lc.connection.records.size())
    throw Error("synth: record count mismatch in " + sc.id);
  return lc;
}

inline std::vector<LabeledConnection> materialize(const std::vector<SynthConnection>& corpus) {
  std::vector<LabeledConnection> out;
  out.reserve(corpus.size());
  for (const auto& sc : corpus) out.push_back(materialize(sc));
  return out;
}

inline std::vector<LabeledConnection> synthesize_corpus(const SynthSpec& spec, const Registries& regs = {}) {
  return materialize(SynthGenerator(spec, regs).generate());
}

// Writes <dir>/<stem>.pcap, <stem>.truth.json and index.json; returns the
// index path.
inline std::string write_synth_dataset(const std::vector<SynthConnection>& corpus, const SynthSpec& spec,
                                       const std::string& dir, const std::string& stem = "synth") {
  std::filesystem::create_directories(dir);
  std::vector<const TcpSegment*> all;
  for (const auto& c : corpus)
    for (const auto& s : c.segments) all.push_back(&s);
  std::stable_sort(all.begin(), all.end(),
                   [](const TcpSegment* a, const TcpSegment* b) { return a->timestamp < b->timestamp; });
  PcapWriter w;
  for (const auto* s : all) w.add(*s);
  const auto base = std::filesystem::path(dir);
  w.save((base / (stem + ".pcap")).string());

  nlohmann::json truth = {{"sessions", nlohmann::json::array()}};
  for (const auto& c : corpus) truth["sessions"].push_back(c.session);
  {
    std::ofstream out(base / (stem + ".truth.json"));
    out << truth.dump() << "\n";
  }
  nlohmann::json index = {{"schema_version", 1},
                          {"generator", to_json(spec)},
                          {"entries", nlohmann::json::array({{{"capture", stem + ".pcap"},
                                                               {"ground_truth", stem + ".truth.json"}}})}};
  const std::string index_path = (base / "index.json").string();
  std::ofstream out(index_path);
  out << index.dump(2) << "\n";
  return index_path;
}

// Same traffic shape, different HTTP-semantics priors: more octet-stream and
// plain-text responses from a few server builds, fewer cookies and referers.
inline SynthSpec malicious_variant(SynthSpec spec, const Registries& regs = {}) {
  auto shifted = [&](Protocol proto, const std::string& id, const std::vector<std::string>& favoured, double mass) {
    const auto& p = regs.of(proto)[*regs.of(proto).find(id)];
    std::vector<double> w(p.labels.size(), (1.0 - mass) / static_cast<double>(p.labels.size()));
    for (const auto& f : favoured) w[*p.label_index(f)] += mass / static_cast<double>(favoured.size());
    spec.priors[std::string(proto == Protocol::http1 ? "http1:" : "h2:") + id] = w;
  };
  for (Protocol proto : {Protocol::http1, Protocol::http2}) {
    shifted(proto, "response.Content-Type", {"octet", "plain"}, 0.5);
    shifted(proto, "response.Server", {"nginx", "Apache"}, 0.5);
    shifted(proto, "request.Cookie", {kAbsentLabel}, 0.5);
    shifted(proto, "request.Referer", {kAbsentLabel}, 0.5);
  }
  return spec;
}

}  // namespace httpsem
