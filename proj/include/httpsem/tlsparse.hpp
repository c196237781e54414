#pragma once

// TLS record-layer parsing over reassembled streams, record-to-packet
// attribution, and client_hello / server_hello metadata extraction.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "capture.hpp"
#include "common.hpp"

namespace httpsem {

namespace tls {
inline constexpr std::uint8_t change_cipher_spec = 20;
inline constexpr std::uint8_t alert = 21;
inline constexpr std::uint8_t handshake = 22;
inline constexpr std::uint8_t application_data = 23;

inline constexpr std::uint32_t max_record_length = (1u << 14) + 2048;

inline constexpr std::uint16_t ext_server_name = 0;
inline constexpr std::uint16_t ext_alpn = 16;
inline constexpr std::uint16_t ext_supported_versions = 43;

// All GREASE code points collapse to this one value.
inline constexpr std::uint16_t grease_code = 0x0a0a;

inline constexpr bool is_grease(std::uint16_t code) {
  return (code & 0x0f0f) == 0x0a0a && (code >> 8) == (code & 0xff);
}

inline constexpr bool is_record_type(std::uint8_t t) { return t >= change_cipher_spec && t <= application_data; }
}  // namespace tls

struct TlsRecordMeta {
  std::size_t index = 0;
  std::uint8_t type_code = 0;
  std::uint16_t version = 0;
  std::uint32_t length = 0;
  Direction direction = Direction::client_to_server;
  std::uint32_t pkt_count = 0;
  std::uint32_t push_count = 0;
  double avg_pkt_size = 0.0;
  std::uint64_t stream_offset = 0;
  bool truncated = false;
  double first_timestamp = 0.0;
};

struct HandshakeMeta {
  std::vector<std::uint16_t> offered_cipher_suites;
  std::vector<std::uint16_t> advertised_extensions;
  std::optional<std::uint16_t> selected_cipher_suite;
  std::vector<std::string> alpn_offered;
  std::optional<std::string> alpn_selected;
  std::uint16_t version = 0;
  bool client_hello_seen = false;
  bool server_hello_seen = false;
  bool malformed = false;
};

struct TlsParseFlags {
  bool non_tls = false;
  bool truncated_final_record = false;
  bool trailing_bytes = false;   // fewer than 5 bytes left after the last record
  bool invalid_mid_stream = false;
};

struct Connection {
  RawConnection raw;
  std::vector<TlsRecordMeta> records;
  HandshakeMeta handshake;
  TlsParseFlags flags;

  bool is_tls() const { return !flags.non_tls; }
};

inline std::array<std::uint8_t, 5> serialize_record_header(const TlsRecordMeta& r) {
  return {r.type_code, static_cast<std::uint8_t>(r.version >> 8), static_cast<std::uint8_t>(r.version & 0xff),
          static_cast<std::uint8_t>(r.length >> 8), static_cast<std::uint8_t>(r.length & 0xff)};
}

namespace detail {

struct DirectionRecords {
  std::vector<TlsRecordMeta> records;
  bool non_tls = false;
};

inline bool plausible_header(ByteView s, std::size_t off) {
  return tls::is_record_type(s[off]) && s[off + 1] == 0x03 && read_be16(s, off + 3) <= tls::max_record_length;
}

inline DirectionRecords split_records(const RawConnection& raw, Direction dir, TlsParseFlags& flags) {
  DirectionRecords out;
  const Bytes& s = raw.stream(dir);
  std::size_t off = 0;
  while (s.size() - off >= 5) {
    if (!plausible_header(s, off)) {
      if (off == 0)
        out.non_tls = true;
      else
        flags.invalid_mid_stream = true;
      return out;
    }
    TlsRecordMeta r;
    r.type_code = s[off];
    r.version = read_be16(s, off + 1);
    r.length = read_be16(s, off + 3);
    r.direction = dir;
    r.stream_offset = off;
    std::size_t end = off + 5 + r.length;
    if (end > s.size()) {
      r.truncated = true;
      flags.truncated_final_record = true;
      out.records.push_back(r);
      return out;
    }
    out.records.push_back(r);
    off = end;
  }
  if (off < s.size()) {
    if (off == 0)
      out.non_tls = true;  // a stream of 1-4 bytes is not a TLS record
    else
      flags.trailing_bytes = true;
  }
  return out;
}

// Counts, for each record, the packets whose first-seen bytes overlap it.
inline void attribute_packets(const RawConnection& raw, Direction dir, std::vector<TlsRecordMeta>& records,
                              std::vector<std::size_t>& first_packet) {
  std::vector<std::size_t> pkts;
  for (std::size_t i = 0; i < raw.packets.size(); ++i)
    if (raw.packets[i].direction == dir && !raw.contributions[i].empty()) pkts.push_back(i);
  std::sort(pkts.begin(), pkts.end(), [&](std::size_t a, std::size_t b) {
    return raw.contributions[a].begin < raw.contributions[b].begin;
  });
  const std::uint64_t stream_size = raw.stream(dir).size();
  first_packet.assign(records.size(), 0);
  std::size_t p = 0;
  for (std::size_t r = 0; r < records.size(); ++r) {
    auto& rec = records[r];
    const std::uint64_t begin = rec.stream_offset;
    const std::uint64_t end = std::min<std::uint64_t>(begin + 5 + rec.length, stream_size);
    while (p < pkts.size() && raw.contributions[pkts[p]].end <= begin) ++p;
    double size_sum = 0;
    bool first = true;
    for (std::size_t q = p; q < pkts.size() && raw.contributions[pkts[q]].begin < end; ++q) {
      const auto& meta = raw.packets[pkts[q]];
      ++rec.pkt_count;
      rec.push_count += meta.push_flag ? 1 : 0;
      size_sum += meta.payload_len;
      if (first) {
        first_packet[r] = pkts[q];
        rec.first_timestamp = meta.timestamp;
        first = false;
      }
    }
    rec.avg_pkt_size = rec.pkt_count ? size_sum / rec.pkt_count : 0.0;
  }
}

struct HelloReader {
  ByteView b;
  std::size_t pos = 0;
  bool ok = true;

  bool need(std::size_t n) {
    if (!ok || b.size() - pos < n) ok = false;
    return ok;
  }
  std::uint8_t u8() { return need(1) ? b[pos++] : 0; }
  std::uint16_t u16() {
    if (!need(2)) return 0;
    auto v = read_be16(b, pos);
    pos += 2;
    return v;
  }
  std::uint32_t u24() {
    if (!need(3)) return 0;
    auto v = read_be24(b, pos);
    pos += 3;
    return v;
  }
  ByteView take(std::size_t n) {
    if (!need(n)) return {};
    auto v = b.subspan(pos, n);
    pos += n;
    return v;
  }
};

inline std::vector<std::string> parse_alpn_list(ByteView data, bool& ok) {
  std::vector<std::string> out;
  HelloReader r{data};
  std::size_t list_len = r.u16();
  ByteView list = r.take(list_len);
  HelloReader lr{list};
  while (lr.ok && lr.pos < list.size()) {
    std::size_t n = lr.u8();
    ByteView name = lr.take(n);
    if (!lr.ok) break;
    out.emplace_back(name.begin(), name.end());
  }
  ok = r.ok && lr.ok;
  return out;
}

inline bool parse_client_hello(ByteView body, HandshakeMeta& hs) {
  HelloReader r{body};
  std::uint16_t legacy_version = r.u16();
  r.take(32);
  r.take(r.u8());
  std::size_t suites_len = r.u16();
  ByteView suites = r.take(suites_len);
  r.take(r.u8());
  if (!r.ok || suites_len % 2 != 0) return false;
  std::vector<std::uint16_t> offered;
  bool grease_suite = false;
  for (std::size_t i = 0; i + 1 < suites.size(); i += 2) {
    std::uint16_t cs = read_be16(suites, i);
    if (tls::is_grease(cs)) {
      if (!grease_suite) offered.push_back(tls::grease_code);
      grease_suite = true;
    } else {
      offered.push_back(cs);
    }
  }
  std::vector<std::uint16_t> extensions;
  std::vector<std::string> alpn;
  if (r.pos < body.size()) {
    std::size_t ext_total = r.u16();
    ByteView exts = r.take(ext_total);
    if (!r.ok) return false;
    HelloReader er{exts};
    bool grease_ext = false;
    while (er.ok && er.pos < exts.size()) {
      std::uint16_t type = er.u16();
      ByteView data = er.take(er.u16());
      if (!er.ok) return false;
      if (tls::is_grease(type)) {
        if (!grease_ext) extensions.push_back(tls::grease_code);
        grease_ext = true;
        continue;
      }
      extensions.push_back(type);
      if (type == tls::ext_alpn) {
        bool ok = true;
        alpn = parse_alpn_list(data, ok);
        if (!ok) return false;
      }
    }
  }
  hs.offered_cipher_suites = std::move(offered);
  hs.advertised_extensions = std::move(extensions);
  hs.alpn_offered = std::move(alpn);
  hs.version = legacy_version;
  hs.client_hello_seen = true;
  return true;
}

inline bool parse_server_hello(ByteView body, HandshakeMeta& hs) {
  HelloReader r{body};
  std::uint16_t version = r.u16();
  r.take(32);
  r.take(r.u8());
  std::uint16_t suite = r.u16();
  r.u8();
  if (!r.ok) return false;
  std::optional<std::string> alpn;
  if (r.pos < body.size()) {
    ByteView exts = r.take(r.u16());
    if (!r.ok) return false;
    HelloReader er{exts};
    while (er.ok && er.pos < exts.size()) {
      std::uint16_t type = er.u16();
      ByteView data = er.take(er.u16());
      if (!er.ok) return false;
      if (type == tls::ext_alpn) {
        bool ok = true;
        auto names = parse_alpn_list(data, ok);
        if (!ok || names.size() != 1) return false;
        alpn = names.front();
      } else if (type == tls::ext_supported_versions && data.size() == 2) {
        version = read_be16(data, 0);
      }
    }
  }
  hs.selected_cipher_suite = suite;
  hs.alpn_selected = alpn;
  hs.version = version;
  hs.server_hello_seen = true;
  return true;
}

// Concatenated handshake-record payloads of one direction, up to its first
// change_cipher_spec (anything after that is encrypted).
inline Bytes handshake_bytes(const Connection& conn, Direction dir) {
  Bytes out;
  const Bytes& s = conn.raw.stream(dir);
  for (const auto& r : conn.records) {
    if (r.direction != dir) continue;
    if (r.type_code == tls::change_cipher_spec) break;
    if (r.type_code != tls::handshake) continue;
    std::size_t begin = r.stream_offset + 5;
    std::size_t end = std::min<std::size_t>(begin + r.length, s.size());
    out.insert(out.end(), s.begin() + static_cast<std::ptrdiff_t>(begin),
               s.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

// Parses the handshake metadata from the client's and server's plaintext
// handshake records. A retried client_hello replaces the earlier one.
inline HandshakeMeta parse_handshake_meta(const Connection& conn) {
  HandshakeMeta hs;
  auto first_client = std::find_if(conn.records.begin(), conn.records.end(), [](const TlsRecordMeta& r) {
    return r.direction == Direction::client_to_server;
  });
  if (first_client != conn.records.end()) hs.version = first_client->version;

  auto walk = [&](Direction dir, std::uint8_t wanted, auto&& parse) -> bool {
    Bytes bytes = detail::handshake_bytes(conn, dir);
    std::size_t pos = 0;
    while (bytes.size() - pos >= 4) {
      std::uint8_t type = bytes[pos];
      std::uint32_t len = read_be24(bytes, pos + 1);
      if (bytes.size() - pos - 4 < len) {
        // A hello cut short by the end of the reassembled stream is malformed.
        return type != wanted;
      }
      if (type == wanted && !parse(ByteView(bytes).subspan(pos + 4, len))) return false;
      pos += 4 + len;
    }
    return true;
  };

  HandshakeMeta parsed = hs;
  bool ok = walk(Direction::client_to_server, 1, [&](ByteView body) {
    return detail::parse_client_hello(body, parsed);
  });
  ok = ok && walk(Direction::server_to_client, 2, [&](ByteView body) {
    return detail::parse_server_hello(body, parsed);
  });
  if (!ok) {
    hs.malformed = true;
    return hs;
  }
  return parsed;
}

// Splits both streams into records, attributes packets to records and
// interleaves the two directions by the capture time of each record's first
// byte.
inline Connection parse_tls_records(RawConnection raw) {
  Connection conn;
  conn.raw = std::move(raw);
  auto c2s = detail::split_records(conn.raw, Direction::client_to_server, conn.flags);
  auto s2c = detail::split_records(conn.raw, Direction::server_to_client, conn.flags);
  if (c2s.non_tls || s2c.non_tls) {
    conn.flags.non_tls = true;
    return conn;
  }
  std::vector<std::size_t> c2s_first, s2c_first;
  detail::attribute_packets(conn.raw, Direction::client_to_server, c2s.records, c2s_first);
  detail::attribute_packets(conn.raw, Direction::server_to_client, s2c.records, s2c_first);

  // Merge keeps each direction's stream order even if packets were reordered.
  auto before = [&](std::size_t ci, std::size_t si) {
    const auto& a = c2s.records[ci];
    const auto& b = s2c.records[si];
    if (a.first_timestamp != b.first_timestamp) return a.first_timestamp < b.first_timestamp;
    return c2s_first[ci] <= s2c_first[si];
  };
  std::size_t i = 0, j = 0;
  conn.records.reserve(c2s.records.size() + s2c.records.size());
  while (i < c2s.records.size() || j < s2c.records.size()) {
    bool take_client = j >= s2c.records.size() || (i < c2s.records.size() && before(i, j));
    TlsRecordMeta r = take_client ? c2s.records[i++] : s2c.records[j++];
    r.index = conn.records.size();
    conn.records.push_back(r);
  }
  conn.handshake = parse_handshake_meta(conn);
  return conn;
}

inline std::vector<Connection> parse_connections(std::vector<RawConnection> raws, bool keep_non_tls = false) {
  std::vector<Connection> out;
  out.reserve(raws.size());
  for (auto& raw : raws) {
    Connection c = parse_tls_records(std::move(raw));
    if (c.is_tls() || keep_non_tls) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace httpsem
