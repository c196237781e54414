#pragma once

// Ground-truth ingestion: decrypted-session JSON is aligned with the
// observed TLS records of a capture and turned into per-record labels.
//
// Session JSON (one object per TLS connection):
//   {"client": "10.0.0.1:50000", "server": "10.1.0.1:443", "protocol": "h2",
//    "tls_records": [
//      {"type": "app_data", "length": 335, "direction": "c2s",
//       "decrypted_data": {"method": "GET", "uri": "/", "v": "HTTP/1.1",
//                          "headers": [{"name": "Host", "value": "..."}]}}]}
// decrypted_data may also be an HTTP/1 response ({"v", "status", "headers"}),
// {"messages": [...]}, an HTTP/2 frame list ({"frames": [{"type": "HEADERS",
// "headers": [...]}]}) or a Tor cell tree whose cells carry nested
// {"tls_records": [...]}. Records without decrypted HTTP messages are body
// records.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capture.hpp"
#include "common.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "tlsparse.hpp"

namespace httpsem {

struct LabeledRecord {
  std::size_t index = 0;
  bool message_type = false;
  std::map<std::string, std::string> labels;  // problem id -> label

  bool operator==(const LabeledRecord&) const = default;
};

struct LabeledConnection {
  std::string id;
  Connection connection;
  std::vector<LabeledRecord> records;
  Protocol protocol = Protocol::http1;
  double timestamp = 0.0;
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool istarts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

// "1.13.7" -> "1.13"
inline std::string major_minor(std::string_view v) {
  std::size_t dot = v.find('.');
  if (dot == std::string_view::npos) {
    std::size_t n = 0;
    while (n < v.size() && std::isdigit(static_cast<unsigned char>(v[n]))) ++n;
    return std::string(v.substr(0, n));
  }
  std::size_t end = dot + 1;
  while (end < v.size() && std::isdigit(static_cast<unsigned char>(v[end]))) ++end;
  return std::string(v.substr(0, end));
}

struct ServerPattern {
  std::string product;
  std::vector<std::string> versions;  // major.minor values; empty = unversioned
};

// "nginx-1.13/1.12" -> {nginx, [1.13, 1.12]}; "cloudflare-nginx" -> unversioned.
inline ServerPattern parse_server_label(std::string_view label) {
  for (std::size_t i = 0; i + 1 < label.size(); ++i) {
    if ((label[i] == '-' || label[i] == '/') && std::isdigit(static_cast<unsigned char>(label[i + 1]))) {
      ServerPattern p{std::string(label.substr(0, i)), {}};
      std::string_view rest = label.substr(i + 1);
      while (!rest.empty()) {
        std::size_t slash = rest.find('/');
        p.versions.push_back(major_minor(rest.substr(0, slash)));
        if (slash == std::string_view::npos) break;
        rest.remove_prefix(slash + 1);
      }
      return p;
    }
  }
  return ServerPattern{std::string(label), {}};
}

inline std::string normalize_server(const ProblemSpec& spec, std::string_view raw) {
  std::string_view token = raw.substr(0, raw.find_first_of(" \t("));
  std::string version;
  std::string product;
  if (auto slash = token.find('/'); slash != std::string_view::npos) {
    product = std::string(token.substr(0, slash));
    version = major_minor(token.substr(slash + 1));
  } else {
    product = std::string(token);
    if (auto paren = raw.find('('); paren != std::string_view::npos && paren == token.size())
      version = major_minor(raw.substr(paren + 1));
  }
  if (product.empty()) return kOtherLabel;

  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    std::size_t dash = product.find('-', start);
    parts.push_back(product.substr(start, dash - start));
    if (dash == std::string::npos) break;
    start = dash + 1;
  }

  auto resolve = [&](const std::vector<std::size_t>& candidates) -> std::string {
    bool has_versioned = false;
    for (auto i : candidates) {
      auto pat = parse_server_label(spec.labels[i]);
      if (pat.versions.empty()) continue;
      has_versioned = true;
      if (!version.empty() && std::find(pat.versions.begin(), pat.versions.end(), version) != pat.versions.end())
        return spec.labels[i];
    }
    if (!version.empty() && has_versioned) return kOtherLabel;
    for (auto i : candidates)
      if (parse_server_label(spec.labels[i]).versions.empty()) return spec.labels[i];
    return kOtherLabel;
  };

  std::vector<std::size_t> exact, by_part, by_prefix;
  for (std::size_t i = 0; i < spec.labels.size(); ++i) {
    if (spec.labels[i] == kOtherLabel) continue;
    auto pat = parse_server_label(spec.labels[i]);
    if (iequals(pat.product, product)) exact.push_back(i);
    if (parts.size() > 1 && std::any_of(parts.begin(), parts.end(), [&](const std::string& p) {
          return iequals(p, pat.product);
        }))
      by_part.push_back(i);
    if (pat.product.size() >= 4 && istarts_with(product, pat.product)) by_prefix.push_back(i);
  }
  if (!exact.empty()) return resolve(exact);
  if (!by_part.empty()) return resolve(by_part);
  if (!by_prefix.empty()) return resolve(by_prefix);
  return kOtherLabel;
}

inline std::string content_type_token(std::string_view raw) {
  std::string media = lower(trim(raw.substr(0, raw.find(';'))));
  std::size_t slash = media.find('/');
  std::string major = media.substr(0, slash);
  std::string minor = slash == std::string::npos ? "" : media.substr(slash + 1);
  if (minor.rfind("x-", 0) == 0) minor = minor.substr(2);
  if (minor == "html" || minor == "xhtml+xml") return "html";
  if (minor.find("javascript") != std::string::npos || minor.find("ecmascript") != std::string::npos)
    return "javascript";
  if (major == "image") return "image";
  if (major == "video") return "video";
  if (minor == "css") return "css";
  if (minor.rfind("octet", 0) == 0) return "octet";
  if (minor == "json" || (minor.size() > 5 && minor.ends_with("+json"))) return "json";
  if (major == "font" || minor.find("font") != std::string::npos) return "font";
  if (minor == "plain") return "plain";
  if (minor.find("protobuf") != std::string::npos) return "protobuf";
  return minor;
}

}  // namespace detail

// Maps a raw field value onto the problem's label set; anything outside the
// set becomes "other". Total and idempotent.
inline std::string normalize_label(const ProblemSpec& spec, std::string_view raw) {
  std::string_view v = detail::trim(raw);
  if (spec.label_index(v)) return std::string(v);
  if (spec.kind == ProblemKind::binary) return v.empty() ? kAbsentLabel : kPresentLabel;
  if (v == kOtherLabel) return std::string(v);
  std::string out;
  if (spec.field == "Content-Type") {
    out = detail::content_type_token(v);
  } else if (spec.field == "Server") {
    out = detail::normalize_server(spec, v);
  } else {
    out = std::string(v);
  }
  return spec.label_index(out) ? out : std::string(kOtherLabel);
}

struct HttpMessage {
  bool is_request = true;
  std::string method;
  std::string status;
  std::vector<std::pair<std::string, std::string>> headers;

  std::optional<std::string> header(std::string_view name) const {
    for (const auto& [k, v] : headers)
      if (detail::iequals(k, name)) return v;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> parse_headers(const nlohmann::json& h) {
  std::vector<std::pair<std::string, std::string>> out;
  auto as_text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  if (h.is_object()) {
    for (auto it = h.begin(); it != h.end(); ++it) out.emplace_back(it.key(), as_text(it.value()));
    return out;
  }
  if (!h.is_array()) return out;
  for (const auto& e : h) {
    if (e.is_object() && e.contains("name")) {
      out.emplace_back(e.at("name").get<std::string>(), e.contains("value") ? as_text(e.at("value")) : "");
    } else if (e.is_object() && e.size() == 1) {
      out.emplace_back(e.begin().key(), as_text(e.begin().value()));
    } else if (e.is_array() && e.size() == 2) {
      out.emplace_back(as_text(e[0]), as_text(e[1]));
    } else if (e.is_string()) {
      auto s = e.get<std::string>();
      auto colon = s.find(':', s.empty() || s[0] != ':' ? 0 : 1);
      if (colon == std::string::npos) continue;
      out.emplace_back(std::string(trim(std::string_view(s).substr(0, colon))),
                       std::string(trim(std::string_view(s).substr(colon + 1))));
    }
  }
  return out;
}

inline void collect_messages(const nlohmann::json& d, std::vector<HttpMessage>& out);

inline void collect_from_records(const nlohmann::json& records, std::vector<HttpMessage>& out) {
  for (const auto& r : records)
    if (r.contains("decrypted_data")) collect_messages(r.at("decrypted_data"), out);
}

inline void collect_messages(const nlohmann::json& d, std::vector<HttpMessage>& out) {
  if (d.is_array()) {
    for (const auto& e : d) collect_messages(e, out);
    return;
  }
  if (!d.is_object()) return;
  if (d.contains("cells")) {
    for (const auto& cell : d.at("cells")) {
      if (!cell.contains("decrypted_data")) continue;
      const auto& inner = cell.at("decrypted_data");
      if (inner.is_object() && inner.contains("tls_records"))
        collect_from_records(inner.at("tls_records"), out);
      else
        collect_messages(inner, out);
    }
    return;
  }
  if (d.contains("tls_records")) {
    collect_from_records(d.at("tls_records"), out);
    return;
  }
  if (d.contains("messages")) {
    collect_messages(d.at("messages"), out);
    return;
  }
  if (d.contains("frames")) {
    for (const auto& f : d.at("frames")) {
      if (!f.is_object() || lower(f.value("type", "")) != "headers") continue;
      HttpMessage m;
      auto headers = parse_headers(f.value("headers", nlohmann::json::array()));
      for (auto& [k, v] : headers) {
        if (k == ":method") m.method = v;
        if (k == ":status") m.status = v;
      }
      m.is_request = !m.method.empty() || m.status.empty();
      std::erase_if(headers, [](const auto& kv) { return !kv.first.empty() && kv.first[0] == ':'; });
      m.headers = std::move(headers);
      out.push_back(std::move(m));
    }
    return;
  }
  if (d.contains("method")) {
    HttpMessage m;
    m.is_request = true;
    m.method = d.at("method").get<std::string>();
    m.headers = parse_headers(d.value("headers", nlohmann::json::array()));
    out.push_back(std::move(m));
    return;
  }
  for (const char* key : {"status", "status_code", "code"}) {
    if (!d.contains(key)) continue;
    HttpMessage m;
    m.is_request = false;
    const auto& s = d.at(key);
    m.status = s.is_string() ? s.get<std::string>() : std::to_string(s.get<long long>());
    m.headers = parse_headers(d.value("headers", nlohmann::json::array()));
    out.push_back(std::move(m));
    return;
  }
}

inline std::optional<std::uint8_t> record_type_code(const nlohmann::json& t) {
  if (t.is_number_integer()) return static_cast<std::uint8_t>(t.get<int>());
  if (!t.is_string()) return std::nullopt;
  std::string s = lower(t.get<std::string>());
  if (s == "app_data" || s == "application_data") return tls::application_data;
  if (s == "handshake") return tls::handshake;
  if (s == "change_cipher_spec" || s == "ccs") return tls::change_cipher_spec;
  if (s == "alert") return tls::alert;
  return std::nullopt;
}

}  // namespace detail

inline std::vector<HttpMessage> messages_in(const nlohmann::json& decrypted_data) {
  std::vector<HttpMessage> out;
  detail::collect_messages(decrypted_data, out);
  return out;
}

// Labels for one record given the HTTP messages that start in it. The first
// message decides field labels; presence problems count any occurrence.
inline LabeledRecord label_record(std::size_t index, const std::vector<HttpMessage>& messages,
                                  const ProblemRegistry& reg) {
  LabeledRecord rec;
  rec.index = index;
  rec.message_type = !messages.empty();
  if (messages.empty()) return rec;
  const HttpMessage& m = messages.front();
  const Side side = m.is_request ? Side::client : Side::server;
  for (const auto& p : reg.problems()) {
    if (p.side != side) continue;
    if (p.kind == ProblemKind::binary) {
      rec.labels[p.id] = m.header(p.field) ? kPresentLabel : kAbsentLabel;
    } else if (p.field == "method") {
      if (!m.method.empty()) rec.labels[p.id] = normalize_label(p, m.method);
    } else if (p.field == "status-code") {
      if (!m.status.empty()) rec.labels[p.id] = normalize_label(p, m.status);
    } else if (auto v = m.header(p.field)) {
      rec.labels[p.id] = normalize_label(p, *v);
    }
  }
  return rec;
}

inline Protocol session_protocol(const nlohmann::json& session, const Connection& conn) {
  if (session.contains("protocol") && session.at("protocol").is_string()) {
    std::string p = detail::lower(session.at("protocol").get<std::string>());
    if (p == "h2" || p == "http2" || p == "http/2") return Protocol::http2;
    if (p == "http/1.1" || p == "http1" || p == "http/1.0") return Protocol::http1;
  }
  if (conn.handshake.alpn_selected && *conn.handshake.alpn_selected == "h2") return Protocol::http2;
  return Protocol::http1;
}

// One LabeledRecord per observed TLS record. Ground-truth records are matched
// in order by (type, length[, direction]); observed records without a match
// are unlabeled body records.
inline std::vector<LabeledRecord> ingest_ground_truth(const Connection& conn, const nlohmann::json& session,
                                                      const ProblemRegistry& reg) {
  if (!session.is_object() || !session.contains("tls_records") || !session.at("tls_records").is_array())
    throw ParseError("ground truth session has no tls_records array");
  const auto& gt = session.at("tls_records");
  std::vector<LabeledRecord> out;
  out.reserve(conn.records.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < conn.records.size(); ++i) {
    const auto& r = conn.records[i];
    bool matched = false;
    if (j < gt.size()) {
      const auto& g = gt[j];
      auto type = detail::record_type_code(g.value("type", nlohmann::json()));
      bool same = type && *type == r.type_code && g.value("length", -1LL) == static_cast<long long>(r.length);
      if (same && g.contains("direction"))
        same = g.at("direction").get<std::string>() == to_string(r.direction);
      if (same) {
        std::vector<HttpMessage> msgs;
        if (g.contains("decrypted_data")) msgs = messages_in(g.at("decrypted_data"));
        out.push_back(label_record(i, msgs, reg));
        ++j;
        matched = true;
      }
    }
    if (!matched) out.push_back(label_record(i, {}, reg));
  }
  for (; j < gt.size(); ++j) {
    const auto& g = gt[j];
    if (g.contains("decrypted_data") && !messages_in(g.at("decrypted_data")).empty())
      throw AlignmentError("ground truth record " + std::to_string(j) + " (type " + g.value("type", "?") +
                           ", length " + std::to_string(g.value("length", -1LL)) +
                           ") has no matching TLS record in the capture");
  }
  return out;
}

// Sessions of a ground-truth file: either {"sessions": [...]} or a single
// session object.
inline std::vector<nlohmann::json> load_ground_truth_sessions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.contains("sessions")) return j.at("sessions").get<std::vector<nlohmann::json>>();
  if (j.contains("tls_records")) return {j};
  throw ParseError(path + ": neither a session nor a session list");
}

struct IngestReport {
  std::size_t connections = 0;
  std::size_t non_tls = 0;
  std::size_t unmatched = 0;
  std::vector<std::string> rejected;  // diagnostics
};

inline std::string connection_id(const Connection& c) {
  return c.raw.five_tuple.client.to_string() + "->" + c.raw.five_tuple.server.to_string();
}

inline double connection_start(const Connection& c) {
  double t = 0;
  bool first = true;
  for (const auto& p : c.raw.packets) {
    if (first || p.timestamp < t) t = p.timestamp;
    first = false;
  }
  return t;
}

// Pairs connections with sessions by client/server endpoint; a lone session
// pairs with a lone connection.
inline std::vector<LabeledConnection> label_connections(std::vector<Connection> conns,
                                                        const std::vector<nlohmann::json>& sessions,
                                                        const Registries& regs, IngestReport* report = nullptr) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::map<std::pair<std::string, std::string>, const nlohmann::json*> by_endpoint;
  for (const auto& s : sessions)
    if (s.contains("client") && s.contains("server"))
      by_endpoint[{s.at("client").get<std::string>(), s.at("server").get<std::string>()}] = &s;
  std::vector<LabeledConnection> out;
  for (auto& c : conns) {
    ++rep.connections;
    if (!c.is_tls()) {
      ++rep.non_tls;
      continue;
    }
    const nlohmann::json* session = nullptr;
    auto it = by_endpoint.find({c.raw.five_tuple.client.to_string(), c.raw.five_tuple.server.to_string()});
    if (it != by_endpoint.end())
      session = it->second;
    else if (sessions.size() == 1 && conns.size() == 1)
      session = &sessions.front();
    if (!session) {
      ++rep.unmatched;
      continue;
    }
    LabeledConnection lc;
    lc.id = connection_id(c);
    lc.protocol = session_protocol(*session, c);
    lc.timestamp = connection_start(c);
    try {
      lc.records = ingest_ground_truth(c, *session, regs.of(lc.protocol));
    } catch (const AlignmentError& e) {
      rep.rejected.push_back(lc.id + ": " + e.what());
      continue;
    }
    lc.connection = std::move(c);
    out.push_back(std::move(lc));
  }
  return out;
}

struct IndexEntry {
  std::string capture;
  std::string ground_truth;
};

// {"entries": [{"capture": "a.pcap", "ground_truth": "a.json"}]}; relative
// paths resolve against the index file's directory.
inline std::vector<IndexEntry> load_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<IndexEntry> out;
  for (const auto& e : j.at("entries")) {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return (fp.is_absolute() ? fp : base / fp).string();
    };
    out.push_back({resolve(e.at("capture").get<std::string>()), resolve(e.at("ground_truth").get<std::string>())});
  }
  return out;
}

inline std::vector<LabeledConnection> load_labeled_corpus(const std::string& index_path, const Registries& regs,
                                                          IngestReport* report = nullptr) {
  std::vector<LabeledConnection> out;
  for (const auto& e : load_index(index_path)) {
    auto conns = parse_connections(load_pcap(e.capture), true);
    auto sessions = load_ground_truth_sessions(e.ground_truth);
    auto labeled = label_connections(std::move(conns), sessions, regs, report);
    for (auto& l : labeled) out.push_back(std::move(l));
  }
  return out;
}

struct SplitPolicy {
  enum class Kind { by_week, by_fraction } kind = Kind::by_week;
  double train_fraction = 0.5;
  std::uint64_t seed = 0;

  static SplitPolicy by_week() { return {}; }
  static SplitPolicy by_fraction(double f, std::uint64_t seed) { return {Kind::by_fraction, f, seed}; }
};

// Disjoint, exhaustive split. by_week: the first 7 days after the earliest
// timestamp train, everything later tests.
template <typename T, typename TimestampFn>
std::pair<std::vector<T>, std::vector<T>> split_dataset(std::vector<T> items, const SplitPolicy& policy,
                                                        TimestampFn timestamp) {
  std::vector<T> train, test;
  if (policy.kind == SplitPolicy::Kind::by_week) {
    if (items.empty()) throw Error("split_dataset: empty dataset");
    double t0 = timestamp(items.front());
    for (const auto& it : items) t0 = std::min(t0, timestamp(it));
    for (auto& it : items) {
      if (timestamp(it) - t0 < 7 * 86400.0)
        train.push_back(std::move(it));
      else
        test.push_back(std::move(it));
    }
  } else {
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(policy.seed);
    rng.shuffle(std::span<std::size_t>(order));
    auto n_train = static_cast<std::size_t>(std::llround(policy.train_fraction * static_cast<double>(items.size())));
    std::vector<bool> in_train(items.size(), false);
    for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;
    for (std::size_t i = 0; i < items.size(); ++i)
      (in_train[i] ? train : test).push_back(std::move(items[i]));
  }
  if (train.empty() || test.empty()) throw Error("split_dataset: one side of the split is empty");
  return {std::move(train), std::move(test)};
}

inline std::pair<std::vector<LabeledConnection>, std::vector<LabeledConnection>> split_dataset(
    std::vector<LabeledConnection> items, const SplitPolicy& policy) {
  return split_dataset(std::move(items), policy, [](const LabeledConnection& c) { return c.timestamp; });
}

}  // namespace httpsem
