#pragma once

// Fixed-length feature vectors for TLS records and connections.
//
// Record sample layout (standard mode, 174 values):
//   [0, 66)    window: 11 slots (target-5 ... target+5), 6 values per slot:
//              pkt_count, push_count, avg_pkt_size, type_code, length, direction
//   [66, 72)   per-direction packet count, PUSH count, mean payload size
//              (client->server first)
//   [72, 172)  signed lengths of the first 100 records (server-sent negative)
//   172        duration in seconds
//   173        total number of TLS records
// Tor mode keeps only the 66 window values.

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "problems.hpp"
#include "tlsparse.hpp"

namespace httpsem {

inline constexpr std::size_t kWindowRadius = 5;
inline constexpr std::size_t kWindowSlots = 2 * kWindowRadius + 1;
inline constexpr std::size_t kPerRecordFeatures = 6;
inline constexpr std::size_t kWindowFeatures = kWindowSlots * kPerRecordFeatures;  // 66
inline constexpr std::size_t kSignedLengthSlots = 100;
inline constexpr std::size_t kConnectionFeatures = 6 + kSignedLengthSlots + 2;  // 108
inline constexpr std::size_t kStandardSampleLength = kWindowFeatures + kConnectionFeatures;  // 174
inline constexpr std::size_t kTorSampleLength = kWindowFeatures;

inline constexpr double kDirectionNoRecord = 2.0;

inline constexpr std::size_t kTopCipherSuites = 100;
inline constexpr std::size_t kTopExtensions = 25;
inline constexpr std::size_t kMalwareStandardLength = kConnectionFeatures + kTopCipherSuites + kTopExtensions + 1;  // 234

// Vocabulary padding codes sit above the 16-bit code space so they never
// match an observed value.
inline constexpr std::uint32_t kVocabSentinelBase = 0x10000;
inline constexpr double kSelectedSuiteOther = 0x20000;
inline constexpr double kSelectedSuiteAbsent = 0x20001;

inline std::size_t sample_length(Mode mode) {
  return mode == Mode::standard ? kStandardSampleLength : kTorSampleLength;
}

struct FeatureSchema {
  std::string id;
  std::vector<std::string> names;
  std::vector<bool> categorical;

  std::size_t size() const { return names.size(); }
};

namespace detail {

inline void append_window_schema(FeatureSchema& s) {
  static constexpr const char* fields[kPerRecordFeatures] = {"pkt_count", "push_count", "avg_pkt_size",
                                                            "type_code", "length", "direction"};
  for (std::size_t slot = 0; slot < kWindowSlots; ++slot) {
    int rel = static_cast<int>(slot) - static_cast<int>(kWindowRadius);
    std::string prefix = "rec[" + std::string(rel > 0 ? "+" : "") + std::to_string(rel) + "].";
    for (std::size_t f = 0; f < kPerRecordFeatures; ++f) {
      s.names.push_back(prefix + fields[f]);
      s.categorical.push_back(f == 3 || f == 5);
    }
  }
}

inline void append_connection_schema(FeatureSchema& s) {
  for (const char* dir : {"c2s", "s2c"}) {
    for (const char* f : {"pkt_count", "push_count", "mean_pkt_size"}) {
      s.names.push_back(std::string("conn.") + dir + "." + f);
      s.categorical.push_back(false);
    }
  }
  for (std::size_t i = 0; i < kSignedLengthSlots; ++i) {
    s.names.push_back("conn.signed_len[" + std::to_string(i) + "]");
    s.categorical.push_back(false);
  }
  s.names.push_back("conn.duration");
  s.categorical.push_back(false);
  s.names.push_back("conn.record_count");
  s.categorical.push_back(false);
}

}  // namespace detail

inline FeatureSchema record_schema(Mode mode) {
  FeatureSchema s;
  s.id = mode == Mode::standard ? "httpsem.record.standard.v1" : "httpsem.record.tor.v1";
  detail::append_window_schema(s);
  if (mode == Mode::standard) detail::append_connection_schema(s);
  return s;
}

inline FeatureSchema connection_schema() {
  FeatureSchema s;
  s.id = "httpsem.connection.v1";
  detail::append_connection_schema(s);
  return s;
}

// Record schema followed by the registry's inferred-label block.
inline FeatureSchema enhanced_schema(Mode mode, const ProblemRegistry& reg) {
  FeatureSchema s = record_schema(mode);
  s.id += "+enhanced." + std::string(to_string(reg.protocol())) + "." + std::to_string(reg.enhanced_length());
  for (auto& n : reg.enhanced_feature_names()) {
    s.names.push_back(std::move(n));
    s.categorical.push_back(false);
  }
  return s;
}

inline void append_record_features(std::vector<double>& out, const TlsRecordMeta& r) {
  out.push_back(r.pkt_count);
  out.push_back(r.push_count);
  out.push_back(r.avg_pkt_size);
  out.push_back(r.type_code);
  out.push_back(r.length);
  out.push_back(r.direction == Direction::client_to_server ? 0.0 : 1.0);
}

inline std::vector<double> extract_window_features(const Connection& conn, std::size_t i) {
  if (i >= conn.records.size()) throw Error("record index out of range");
  std::vector<double> out;
  out.reserve(kWindowFeatures);
  for (std::size_t slot = 0; slot < kWindowSlots; ++slot) {
    auto pos = static_cast<std::ptrdiff_t>(i + slot) - static_cast<std::ptrdiff_t>(kWindowRadius);
    if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(conn.records.size())) {
      out.insert(out.end(), kPerRecordFeatures - 1, 0.0);
      out.push_back(kDirectionNoRecord);
    } else {
      append_record_features(out, conn.records[static_cast<std::size_t>(pos)]);
    }
  }
  return out;
}

inline double signed_record_length(const TlsRecordMeta& r) {
  return r.direction == Direction::server_to_client ? -static_cast<double>(r.length) : r.length;
}

inline std::vector<double> extract_connection_features(const Connection& conn) {
  std::vector<double> out;
  out.reserve(kConnectionFeatures);
  for (Direction d : {Direction::client_to_server, Direction::server_to_client}) {
    double count = 0, push = 0, bytes = 0;
    for (const auto& p : conn.raw.packets) {
      if (p.direction != d) continue;
      count += 1;
      push += p.push_flag ? 1 : 0;
      bytes += p.payload_len;
    }
    out.push_back(count);
    out.push_back(push);
    out.push_back(count > 0 ? bytes / count : 0.0);
  }
  for (std::size_t i = 0; i < kSignedLengthSlots; ++i)
    out.push_back(i < conn.records.size() ? signed_record_length(conn.records[i]) : 0.0);
  out.push_back(conn.raw.duration);
  out.push_back(static_cast<double>(conn.records.size()));
  return out;
}

struct RecordFeatureVector {
  std::vector<double> values;
  std::string schema_id;
  std::size_t target_index = 0;
};

// Connection features are shared by every record of a connection; pass them
// in to avoid recomputing per record.
inline RecordFeatureVector assemble_record_sample(const Connection& conn, std::size_t i, Mode mode,
                                                  std::span<const double> connection_features = {}) {
  RecordFeatureVector v;
  v.target_index = i;
  v.schema_id = record_schema(mode).id;
  v.values = extract_window_features(conn, i);
  if (mode == Mode::standard) {
    if (connection_features.empty()) {
      auto cf = extract_connection_features(conn);
      v.values.insert(v.values.end(), cf.begin(), cf.end());
    } else {
      if (connection_features.size() != kConnectionFeatures) throw SchemaError("connection feature length");
      v.values.insert(v.values.end(), connection_features.begin(), connection_features.end());
    }
  }
  if (v.values.size() != sample_length(mode)) throw SchemaError("record sample length mismatch");
  return v;
}

// All record samples of one connection, in record order.
inline std::vector<std::vector<double>> connection_samples(const Connection& conn, Mode mode) {
  std::vector<double> cf;
  if (mode == Mode::standard) cf = extract_connection_features(conn);
  std::vector<std::vector<double>> out;
  out.reserve(conn.records.size());
  for (std::size_t i = 0; i < conn.records.size(); ++i)
    out.push_back(assemble_record_sample(conn, i, mode, cf).values);
  return out;
}

struct FeatureVocab {
  std::vector<std::uint32_t> top_cipher_suites;
  std::vector<std::uint32_t> top_extensions;
};

namespace detail {

inline std::vector<std::uint32_t> rank_codes(const std::map<std::uint32_t, std::size_t>& counts, std::size_t k) {
  std::vector<std::pair<std::uint32_t, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < items.size() && out.size() < k; ++i) out.push_back(items[i].first);
  for (std::uint32_t pad = 0; out.size() < k; ++pad) out.push_back(kVocabSentinelBase + pad);
  return out;
}

}  // namespace detail

// Codes ranked by the number of connections offering them; ties go to the
// lower code.
inline FeatureVocab build_feature_vocab(std::span<const Connection> corpus) {
  if (corpus.empty()) throw Error("build_feature_vocab: empty corpus");
  std::map<std::uint32_t, std::size_t> suites, exts;
  for (const auto& c : corpus) {
    std::vector<std::uint16_t> s = c.handshake.offered_cipher_suites;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    for (auto code : s) ++suites[code];
    std::vector<std::uint16_t> e = c.handshake.advertised_extensions;
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    for (auto code : e) ++exts[code];
  }
  return FeatureVocab{detail::rank_codes(suites, kTopCipherSuites), detail::rank_codes(exts, kTopExtensions)};
}

inline nlohmann::json to_json(const FeatureVocab& v) {
  return {{"top_cipher_suites", v.top_cipher_suites}, {"top_extensions", v.top_extensions}};
}

inline FeatureVocab vocab_from_json(const nlohmann::json& j) {
  FeatureVocab v{j.at("top_cipher_suites").get<std::vector<std::uint32_t>>(),
                 j.at("top_extensions").get<std::vector<std::uint32_t>>()};
  if (v.top_cipher_suites.size() != kTopCipherSuites || v.top_extensions.size() != kTopExtensions)
    throw SchemaError("feature vocabulary has wrong size");
  return v;
}

struct MalwareFeatureVector {
  std::vector<double> values;
  std::string schema_id;
};

inline FeatureSchema malware_schema(const ProblemRegistry* enriched_with = nullptr) {
  FeatureSchema s = connection_schema();
  s.id = "httpsem.malware.standard.v1";
  for (std::size_t i = 0; i < kTopCipherSuites; ++i) {
    s.names.push_back("tls.offers_suite[" + std::to_string(i) + "]");
    s.categorical.push_back(false);
  }
  for (std::size_t i = 0; i < kTopExtensions; ++i) {
    s.names.push_back("tls.advertises_ext[" + std::to_string(i) + "]");
    s.categorical.push_back(false);
  }
  s.names.push_back("tls.selected_suite");
  s.categorical.push_back(true);
  if (enriched_with) {
    s.id = "httpsem.malware.enriched." + std::string(to_string(enriched_with->protocol())) + ".v1";
    for (auto& n : enriched_with->enhanced_feature_names()) {
      s.names.push_back(std::move(n));
      s.categorical.push_back(false);
    }
  }
  return s;
}

inline MalwareFeatureVector extract_malware_standard(const Connection& conn, const FeatureVocab& vocab) {
  MalwareFeatureVector v;
  v.schema_id = "httpsem.malware.standard.v1";
  v.values = extract_connection_features(conn);
  const auto& hs = conn.handshake;
  for (auto code : vocab.top_cipher_suites) {
    bool offered = std::find(hs.offered_cipher_suites.begin(), hs.offered_cipher_suites.end(), code) !=
                   hs.offered_cipher_suites.end();
    v.values.push_back(offered ? 1.0 : 0.0);
  }
  for (auto code : vocab.top_extensions) {
    bool advertised = std::find(hs.advertised_extensions.begin(), hs.advertised_extensions.end(), code) !=
                      hs.advertised_extensions.end();
    v.values.push_back(advertised ? 1.0 : 0.0);
  }
  if (!hs.selected_cipher_suite) {
    v.values.push_back(kSelectedSuiteAbsent);
  } else {
    std::uint32_t sel = *hs.selected_cipher_suite;
    bool known = std::find(vocab.top_cipher_suites.begin(), vocab.top_cipher_suites.end(), sel) !=
                 vocab.top_cipher_suites.end();
    v.values.push_back(known ? static_cast<double>(sel) : kSelectedSuiteOther);
  }
  if (v.values.size() != kMalwareStandardLength) throw SchemaError("malware standard vector length");
  return v;
}

// Appends the connection-level inferred-label summary produced by the
// inference module.
inline MalwareFeatureVector enrich_malware_features(const MalwareFeatureVector& standard,
                                                    std::span<const double> inferred_summary,
                                                    const ProblemRegistry& reg) {
  if (standard.values.size() != kMalwareStandardLength) throw SchemaError("standard malware vector length");
  if (inferred_summary.size() != reg.enhanced_length()) throw SchemaError("inferred summary length");
  MalwareFeatureVector v;
  v.schema_id = malware_schema(&reg).id;
  v.values = standard.values;
  v.values.insert(v.values.end(), inferred_summary.begin(), inferred_summary.end());
  return v;
}

}  // namespace httpsem
