#pragma once

// Text dumps: feature CSV/JSONL, packet metadata JSONL and prediction JSONL.
// Every format carries a schema version.

#include <charconv>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "features.hpp"
#include "inference.hpp"
#include "tlsparse.hpp"

namespace httpsem {

inline constexpr int kDumpSchemaVersion = 1;

// Shortest round-trip decimal form.
inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string connection_label(const Connection& c) { return connection_id(c); }

// "# schema: <id> v<version>" then a header row of feature names, then one
// row of exactly sample_length(mode) values per record.
inline void write_features_csv_header(std::ostream& out, Mode mode) {
  auto schema = record_schema(mode);
  out << "# schema: " << schema.id << " v" << kDumpSchemaVersion << "\n";
  for (std::size_t i = 0; i < schema.names.size(); ++i) out << (i ? "," : "") << schema.names[i];
  out << "\n";
}

inline void write_features_csv(std::ostream& out, const Connection& conn, Mode mode) {
  for (const auto& row : connection_samples(conn, mode)) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
    out << "\n";
  }
}

inline void write_features_jsonl(std::ostream& out, const Connection& conn, Mode mode) {
  const auto schema_id = record_schema(mode).id;
  const auto rows = connection_samples(conn, mode);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    nlohmann::json j = {{"schema_version", kDumpSchemaVersion},
                        {"schema", schema_id},
                        {"connection", connection_label(conn)},
                        {"record", i},
                        {"type", conn.records[i].type_code},
                        {"direction", to_string(conn.records[i].direction)},
                        {"features", rows[i]}};
    out << j.dump() << "\n";
  }
}

// One connection per line.
inline void write_packets_jsonl(std::ostream& out, const RawConnection& raw) {
  nlohmann::json packets = nlohmann::json::array();
  for (const auto& p : raw.packets)
    packets.push_back({{"ts", p.timestamp},
                       {"dir", to_string(p.direction)},
                       {"len", p.payload_len},
                       {"push", p.push_flag},
                       {"seq", p.seq}});
  nlohmann::json j = {{"schema_version", kDumpSchemaVersion},
                      {"client", raw.five_tuple.client.to_string()},
                      {"server", raw.five_tuple.server.to_string()},
                      {"duration", raw.duration},
                      {"client_bytes", raw.client_stream.size()},
                      {"server_bytes", raw.server_stream.size()},
                      {"gap", raw.flags.client_gap || raw.flags.server_gap},
                      {"conflicting_overlap", raw.flags.conflicting_overlap},
                      {"packets", packets}};
  out << j.dump() << "\n";
}

inline void write_predictions_jsonl(std::ostream& out, const Connection& conn, const InferenceResult& r,
                                    const ModelBundle& bundle) {
  const auto& reg = bundle.of(r.protocol).registry;
  for (const auto& p : r.predictions(conn, reg)) {
    nlohmann::json j = {{"schema_version", kDumpSchemaVersion},
                        {"connection", connection_label(conn)},
                        {"protocol", to_string(r.protocol)},
                        {"record", p.record},
                        {"direction", to_string(p.direction)},
                        {"problem", p.problem},
                        {"label", p.label},
                        {"score", p.score},
                        {"iteration_count", r.iteration_count},
                        {"converged", r.converged}};
    out << j.dump() << "\n";
  }
}

}  // namespace httpsem
