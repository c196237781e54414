#pragma once

// Hand-built TCP/TLS connections for tests.

#include <httpsem/httpsem.hpp>

namespace fx {

using namespace httpsem;

class ConnBuilder {
 public:
  explicit ConnBuilder(double t0 = 1000.0) : t_(t0) {
    client_ = {"10.0.0.1", 40000};
    server_ = {"10.0.0.2", 443};
    seg(Direction::client_to_server, tcp_flags::syn, {});
    seg(Direction::server_to_client, tcp_flags::syn | tcp_flags::ack, {});
    seg(Direction::client_to_server, tcp_flags::ack, {});
  }

  // Sends `bytes` in packets of at most `mss` bytes; PSH on the last one.
  ConnBuilder& send(Direction d, const Bytes& bytes, std::size_t mss = 1460) {
    for (std::size_t off = 0; off < bytes.size(); off += mss) {
      std::size_t n = std::min(mss, bytes.size() - off);
      bool last = off + n == bytes.size();
      seg(d, static_cast<std::uint8_t>(tcp_flags::ack | (last ? tcp_flags::psh : 0)),
          Bytes(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.begin() + static_cast<std::ptrdiff_t>(off + n)));
    }
    return *this;
  }

  // An application_data record with `len` payload bytes.
  ConnBuilder& app(Direction d, std::size_t len, std::size_t mss = 1460) {
    return send(d, tls::opaque_record(tls::application_data, len), mss);
  }

  ConnBuilder& hello(const std::vector<std::string>& offered, const std::optional<std::string>& selected) {
    tls::ClientHelloSpec ch;
    ch.cipher_suites = {0x1301, 0xc02f};
    if (!offered.empty()) ch.extensions.push_back({tls::ext_alpn, tls::alpn_extension_data(offered)});
    send(Direction::client_to_server, tls::record(tls::handshake, tls::client_hello(ch)));
    tls::ServerHelloSpec sh;
    if (selected) sh.extensions.push_back({tls::ext_alpn, tls::alpn_extension_data({*selected})});
    send(Direction::server_to_client, tls::record(tls::handshake, tls::server_hello(sh)));
    return *this;
  }

  void seg(Direction d, std::uint8_t flags, Bytes payload) {
    TcpSegment s;
    t_ += 0.001;
    s.timestamp = t_;
    bool c = d == Direction::client_to_server;
    s.src = c ? client_ : server_;
    s.dst = c ? server_ : client_;
    auto& seq = c ? cseq_ : sseq_;
    s.seq = seq;
    s.flags = flags;
    seq += static_cast<std::uint32_t>(payload.size()) + ((flags & tcp_flags::syn) ? 1 : 0);
    s.payload = std::move(payload);
    segments_.push_back(std::move(s));
  }

  const std::vector<TcpSegment>& segments() const { return segments_; }
  RawConnection raw() const { return group_connections(segments_).at(0); }
  Connection conn() const { return parse_tls_records(raw()); }

 private:
  double t_;
  Endpoint client_, server_;
  std::uint32_t cseq_ = 1000, sseq_ = 5000;
  std::vector<TcpSegment> segments_;
};

inline Bytes pcap_of(const std::vector<TcpSegment>& segs) {
  PcapWriter w;
  for (const auto& s : segs) w.add(s);
  return w.bytes();
}

}  // namespace fx
