#pragma once

// Classic pcap ingest, TCP connection grouping and per-direction stream
// reassembly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"

namespace httpsem {

struct Endpoint {
  std::string address;  // dotted quad or IPv6 hex groups
  std::uint16_t port = 0;

  auto operator<=>(const Endpoint&) const = default;
  std::string to_string() const {
    if (address.find(':') != std::string::npos) return "[" + address + "]:" + std::to_string(port);
    return address + ":" + std::to_string(port);
  }
};

struct FiveTuple {
  Endpoint client;
  Endpoint server;
  std::uint8_t proto = 6;

  auto operator<=>(const FiveTuple&) const = default;
};

struct PacketMeta {
  double timestamp = 0.0;
  Direction direction = Direction::client_to_server;
  std::uint32_t payload_len = 0;
  bool push_flag = false;
  std::uint32_t seq = 0;
};

namespace tcp_flags {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t rst = 0x04;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
}  // namespace tcp_flags

// One decoded TCP segment before connection grouping.
struct TcpSegment {
  double timestamp = 0.0;
  Endpoint src;
  Endpoint dst;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t flags = 0;
  Bytes payload;
};

// Stream bytes [begin, end) first contributed by a packet. Empty for pure
// ACKs, retransmissions and anything after a gap.
struct StreamSpan {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  bool empty() const { return end <= begin; }
};

struct ReassemblyFlags {
  bool client_gap = false;
  bool server_gap = false;
  bool conflicting_overlap = false;
};

struct RawConnection {
  FiveTuple five_tuple;
  std::vector<PacketMeta> packets;   // every TCP packet, capture order
  std::vector<StreamSpan> contributions;  // parallel to packets
  Bytes client_stream;
  Bytes server_stream;
  double duration = 0.0;
  ReassemblyFlags flags;

  const Bytes& stream(Direction d) const {
    return d == Direction::client_to_server ? client_stream : server_stream;
  }
  std::size_t data_packet_count() const {
    return static_cast<std::size_t>(std::count_if(packets.begin(), packets.end(),
                                                  [](const PacketMeta& p) { return p.payload_len > 0; }));
  }
};

struct Reassembly {
  Bytes client_stream;
  Bytes server_stream;
  std::vector<StreamSpan> contributions;
  ReassemblyFlags flags;
};

// A packet of one connection with its payload and direction already resolved.
struct DirectedPacket {
  PacketMeta meta;
  std::uint8_t flags = 0;
  Bytes payload;
};

namespace detail {

inline void reassemble_direction(std::span<const DirectedPacket> packets, Direction dir, Bytes& stream,
                                 std::vector<StreamSpan>& contributions, bool& gap, bool& conflict) {
  std::optional<std::uint32_t> base;
  for (const auto& p : packets) {
    if (p.meta.direction == dir && (p.flags & tcp_flags::syn)) {
      base = p.meta.seq + 1;
      break;
    }
  }
  std::vector<std::pair<std::int64_t, std::size_t>> order;  // (offset, packet index)
  std::optional<std::uint32_t> ref;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    const auto& p = packets[i];
    if (p.meta.direction != dir || p.payload.empty()) continue;
    if (!ref) ref = base.value_or(p.meta.seq);
    auto rel = static_cast<std::int64_t>(static_cast<std::int32_t>(p.meta.seq - *ref));
    order.emplace_back(rel, i);
  }
  if (order.empty()) return;
  if (!base) {
    std::int64_t lo = std::min_element(order.begin(), order.end())->first;
    for (auto& o : order) o.first -= lo;
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::int64_t cursor = 0;
  for (auto [off, idx] : order) {
    const Bytes& payload = packets[idx].payload;
    std::int64_t end = off + static_cast<std::int64_t>(payload.size());
    if (gap) continue;
    if (off > cursor) {
      gap = true;
      continue;
    }
    // Overlap with already-accepted bytes: first-seen wins.
    std::int64_t overlap_begin = std::max<std::int64_t>(off, 0);
    std::int64_t overlap_end = std::min(end, cursor);
    for (std::int64_t k = overlap_begin; k < overlap_end; ++k) {
      if (stream[static_cast<std::size_t>(k)] != payload[static_cast<std::size_t>(k - off)]) {
        conflict = true;
        break;
      }
    }
    if (end <= cursor) continue;
    std::int64_t from = std::max(cursor, off);
    stream.insert(stream.end(), payload.begin() + (from - off), payload.end());
    contributions[idx] = StreamSpan{static_cast<std::uint64_t>(from), static_cast<std::uint64_t>(end)};
    cursor = end;
  }
}

}  // namespace detail

// Orders each direction by sequence number, drops retransmitted bytes and
// stops at the first unfilled gap.
inline Reassembly reassemble(std::span<const DirectedPacket> packets) {
  Reassembly r;
  r.contributions.assign(packets.size(), StreamSpan{});
  detail::reassemble_direction(packets, Direction::client_to_server, r.client_stream, r.contributions,
                               r.flags.client_gap, r.flags.conflicting_overlap);
  detail::reassemble_direction(packets, Direction::server_to_client, r.server_stream, r.contributions,
                               r.flags.server_gap, r.flags.conflicting_overlap);
  return r;
}

inline RawConnection assemble_connection(const FiveTuple& tuple, std::span<const DirectedPacket> packets) {
  RawConnection c;
  c.five_tuple = tuple;
  c.packets.reserve(packets.size());
  for (const auto& p : packets) c.packets.push_back(p.meta);
  Reassembly r = reassemble(packets);
  c.client_stream = std::move(r.client_stream);
  c.server_stream = std::move(r.server_stream);
  c.contributions = std::move(r.contributions);
  c.flags = r.flags;
  if (!packets.empty()) {
    auto [lo, hi] = std::minmax_element(packets.begin(), packets.end(), [](const auto& a, const auto& b) {
      return a.meta.timestamp < b.meta.timestamp;
    });
    c.duration = hi->meta.timestamp - lo->meta.timestamp;
  }
  return c;
}

// Groups segments by canonical 5-tuple. The client is the sender of the first
// bare SYN, or failing that the sender of the first packet.
inline std::vector<RawConnection> group_connections(std::span<const TcpSegment> segments) {
  using Key = std::pair<Endpoint, Endpoint>;
  std::map<Key, std::size_t> index;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    Key key = s.src < s.dst ? Key{s.src, s.dst} : Key{s.dst, s.src};
    auto [it, inserted] = index.emplace(key, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }
  std::vector<RawConnection> out;
  out.reserve(members.size());
  for (const auto& ids : members) {
    const TcpSegment* syn = nullptr;
    for (auto i : ids) {
      const auto& s = segments[i];
      if ((s.flags & tcp_flags::syn) && !(s.flags & tcp_flags::ack)) {
        syn = &s;
        break;
      }
    }
    const TcpSegment& first = syn ? *syn : segments[ids.front()];
    FiveTuple tuple{first.src, first.dst, 6};
    std::vector<DirectedPacket> packets;
    packets.reserve(ids.size());
    for (auto i : ids) {
      const auto& s = segments[i];
      DirectedPacket p;
      p.meta.timestamp = s.timestamp;
      p.meta.direction = (s.src == tuple.client) ? Direction::client_to_server : Direction::server_to_client;
      p.meta.payload_len = static_cast<std::uint32_t>(s.payload.size());
      p.meta.push_flag = (s.flags & tcp_flags::psh) != 0;
      p.meta.seq = s.seq;
      p.flags = s.flags;
      p.payload = s.payload;
      packets.push_back(std::move(p));
    }
    out.push_back(assemble_connection(tuple, packets));
  }
  return out;
}

struct PcapStats {
  std::size_t frames = 0;
  std::size_t tcp_segments = 0;
  std::size_t skipped_truncated = 0;
  std::size_t skipped_other = 0;  // non-IP, non-TCP, fragments
};

namespace detail {

inline std::string ipv4_text(const std::uint8_t* p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", p[0], p[1], p[2], p[3]);
  return buf;
}

inline std::string ipv6_text(const std::uint8_t* p) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%x:%x:%x:%x:%x:%x:%x:%x", (p[0] << 8) | p[1], (p[2] << 8) | p[3],
                (p[4] << 8) | p[5], (p[6] << 8) | p[7], (p[8] << 8) | p[9], (p[10] << 8) | p[11],
                (p[12] << 8) | p[13], (p[14] << 8) | p[15]);
  return buf;
}

enum class FrameResult { ok, not_tcp, truncated };

inline FrameResult decode_ethernet(ByteView f, double ts, TcpSegment& out) {
  if (f.size() < 14) return FrameResult::truncated;
  std::size_t off = 12;
  std::uint16_t ethertype = read_be16(f, off);
  off += 2;
  while (ethertype == 0x8100 || ethertype == 0x88a8) {
    if (f.size() < off + 4) return FrameResult::truncated;
    ethertype = read_be16(f, off + 2);
    off += 4;
  }
  std::size_t l4 = 0, l4_end = 0;
  if (ethertype == 0x0800) {
    if (f.size() < off + 20) return FrameResult::truncated;
    const std::uint8_t* ip = f.data() + off;
    std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if ((ip[0] >> 4) != 4 || ihl < 20) return FrameResult::not_tcp;
    std::uint16_t total = read_be16(f, off + 2);
    std::uint16_t frag = read_be16(f, off + 6);
    if ((frag & 0x3fff) != 0) return FrameResult::not_tcp;
    if (ip[9] != 6) return FrameResult::not_tcp;
    if (f.size() < off + ihl || total < ihl) return FrameResult::truncated;
    out.src.address = ipv4_text(ip + 12);
    out.dst.address = ipv4_text(ip + 16);
    l4 = off + ihl;
    l4_end = off + total;
  } else if (ethertype == 0x86dd) {
    if (f.size() < off + 40) return FrameResult::truncated;
    const std::uint8_t* ip = f.data() + off;
    if (ip[6] != 6) return FrameResult::not_tcp;
    out.src.address = ipv6_text(ip + 8);
    out.dst.address = ipv6_text(ip + 24);
    l4 = off + 40;
    l4_end = l4 + read_be16(f, off + 4);
  } else {
    return FrameResult::not_tcp;
  }
  if (l4_end > f.size()) return FrameResult::truncated;
  if (l4_end < l4 + 20) return FrameResult::truncated;
  std::size_t doff = static_cast<std::size_t>(f[l4 + 12] >> 4) * 4;
  if (doff < 20 || l4 + doff > l4_end) return FrameResult::truncated;
  out.timestamp = ts;
  out.src.port = read_be16(f, l4);
  out.dst.port = read_be16(f, l4 + 2);
  out.seq = read_be32(f, l4 + 4);
  out.ack = read_be32(f, l4 + 8);
  out.flags = f[l4 + 13];
  out.payload.assign(f.begin() + static_cast<std::ptrdiff_t>(l4 + doff),
                     f.begin() + static_cast<std::ptrdiff_t>(l4_end));
  return FrameResult::ok;
}

}  // namespace detail

inline constexpr std::uint32_t kPcapMagicMicro = 0xa1b2c3d4;
inline constexpr std::uint32_t kPcapMagicNano = 0xa1b23c4d;
inline constexpr std::uint32_t kLinktypeEthernet = 1;

// Decodes TCP segments from an in-memory classic pcap image.
inline std::vector<TcpSegment> parse_pcap_segments(ByteView data, PcapStats* stats = nullptr) {
  PcapStats local;
  PcapStats& st = stats ? *stats : local;
  if (data.size() < 24) throw ParseError("pcap: file shorter than global header");
  std::uint32_t magic_le = std::uint32_t{data[0]} | (std::uint32_t{data[1]} << 8) |
                           (std::uint32_t{data[2]} << 16) | (std::uint32_t{data[3]} << 24);
  bool swapped;
  bool nano;
  if (magic_le == kPcapMagicMicro || magic_le == kPcapMagicNano) {
    swapped = false;
    nano = magic_le == kPcapMagicNano;
  } else {
    std::uint32_t magic_be = read_be32(data, 0);
    if (magic_be != kPcapMagicMicro && magic_be != kPcapMagicNano)
      throw ParseError("pcap: unrecognized magic number");
    swapped = true;
    nano = magic_be == kPcapMagicNano;
  }
  auto u32 = [&](std::size_t off) {
    return swapped ? read_be32(data, off)
                   : std::uint32_t{data[off]} | (std::uint32_t{data[off + 1]} << 8) |
                         (std::uint32_t{data[off + 2]} << 16) | (std::uint32_t{data[off + 3]} << 24);
  };
  std::uint32_t linktype = u32(20);
  if ((linktype & 0x0fffffff) != kLinktypeEthernet)
    throw ParseError("pcap: unsupported link type " + std::to_string(linktype));

  std::vector<TcpSegment> segments;
  std::size_t off = 24;
  while (off < data.size()) {
    if (data.size() - off < 16) {
      ++st.skipped_truncated;
      break;
    }
    double ts = static_cast<double>(u32(off)) + static_cast<double>(u32(off + 4)) * (nano ? 1e-9 : 1e-6);
    std::uint32_t incl = u32(off + 8);
    std::uint32_t orig = u32(off + 12);
    off += 16;
    if (incl > data.size() - off) {
      ++st.skipped_truncated;
      break;
    }
    ++st.frames;
    ByteView frame = data.subspan(off, incl);
    off += incl;
    TcpSegment seg;
    auto res = detail::decode_ethernet(frame, ts, seg);
    if (res == detail::FrameResult::truncated || (res == detail::FrameResult::ok && incl < orig)) {
      ++st.skipped_truncated;
      continue;
    }
    if (res == detail::FrameResult::not_tcp) {
      ++st.skipped_other;
      continue;
    }
    ++st.tcp_segments;
    segments.push_back(std::move(seg));
  }
  return segments;
}

inline std::vector<RawConnection> parse_pcap(ByteView data, PcapStats* stats = nullptr) {
  auto segments = parse_pcap_segments(data, stats);
  return group_connections(segments);
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::vector<RawConnection> load_pcap(const std::string& path, PcapStats* stats = nullptr) {
  Bytes data = read_file(path);
  return parse_pcap(data, stats);
}

// Writes Ethernet/IPv4/TCP frames in classic little-endian microsecond pcap.
class PcapWriter {
 public:
  PcapWriter() {
    put_le32(kPcapMagicMicro);
    put_le16(2);
    put_le16(4);
    put_le32(0);
    put_le32(0);
    put_le32(65535);
    put_le32(kLinktypeEthernet);
  }

  void add(const TcpSegment& s) {
    Bytes frame;
    frame.reserve(54 + s.payload.size());
    for (int i = 0; i < 6; ++i) frame.push_back(0x02);
    for (int i = 0; i < 6; ++i) frame.push_back(0x04);
    put_be16(frame, 0x0800);
    const std::size_t total = 20 + 20 + s.payload.size();
    frame.push_back(0x45);
    frame.push_back(0);
    put_be16(frame, static_cast<std::uint16_t>(total));
    put_be16(frame, 0);
    put_be16(frame, 0x4000);  // DF
    frame.push_back(64);
    frame.push_back(6);
    put_be16(frame, 0);  // checksum not computed
    append_ipv4(frame, s.src.address);
    append_ipv4(frame, s.dst.address);
    put_be16(frame, s.src.port);
    put_be16(frame, s.dst.port);
    put_be32(frame, s.seq);
    put_be32(frame, s.ack);
    frame.push_back(0x50);
    frame.push_back(s.flags);
    put_be16(frame, 65535);
    put_be16(frame, 0);
    put_be16(frame, 0);
    frame.insert(frame.end(), s.payload.begin(), s.payload.end());

    auto secs = static_cast<std::uint32_t>(s.timestamp);
    auto usecs = static_cast<std::uint32_t>(std::llround((s.timestamp - secs) * 1e6));
    if (usecs >= 1000000) {
      ++secs;
      usecs -= 1000000;
    }
    put_le32(secs);
    put_le32(usecs);
    put_le32(static_cast<std::uint32_t>(frame.size()));
    put_le32(static_cast<std::uint32_t>(frame.size()));
    data_.insert(data_.end(), frame.begin(), frame.end());
  }

  const Bytes& bytes() const { return data_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(data_.data()), static_cast<std::streamsize>(data_.size()));
  }

 private:
  void put_le16(std::uint16_t v) {
    data_.push_back(static_cast<std::uint8_t>(v & 0xff));
    data_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void put_le32(std::uint32_t v) {
    put_le16(static_cast<std::uint16_t>(v & 0xffff));
    put_le16(static_cast<std::uint16_t>(v >> 16));
  }
  static void append_ipv4(Bytes& out, const std::string& text) {
    unsigned a = 0, b = 0, c = 0, d = 0;
    if (std::sscanf(text.c_str(), "%u.%u.%u.%u", &a, &b, &c, &d) != 4)
      throw Error("PcapWriter: not an IPv4 address: " + text);
    for (unsigned v : {a, b, c, d}) out.push_back(static_cast<std::uint8_t>(v));
  }

  Bytes data_;
};

}  // namespace httpsem
