#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace httpsem;
using fx::ConnBuilder;

namespace {
constexpr auto C = Direction::client_to_server;
constexpr auto S = Direction::server_to_client;
}  // namespace

TEST(TlsParse, SingleAppDataRecordInOnePacket) {
  auto conn = ConnBuilder().app(C, 1028).conn();
  ASSERT_TRUE(conn.is_tls());
  ASSERT_EQ(conn.records.size(), 1u);
  const auto& r = conn.records[0];
  EXPECT_EQ(r.type_code, 23);
  EXPECT_EQ(r.length, 1028u);
  EXPECT_EQ(r.pkt_count, 1u);
  EXPECT_EQ(r.push_count, 1u);
  EXPECT_DOUBLE_EQ(r.avg_pkt_size, 1033.0);
}

TEST(TlsParse, EmptyStreamsGiveNoRecords) {
  auto conn = ConnBuilder().conn();
  EXPECT_TRUE(conn.is_tls());
  EXPECT_TRUE(conn.records.empty());
}

TEST(TlsParse, RecordSplitAcrossThreePackets) {
  ConnBuilder b;
  Bytes rec = tls::opaque_record(tls::application_data, 2995);
  b.send(C, Bytes(rec.begin(), rec.begin() + 1460), 1460);
  b.send(C, Bytes(rec.begin() + 1460, rec.begin() + 2920), 1460);
  b.send(C, Bytes(rec.begin() + 2920, rec.end()), 1460);
  auto conn = b.conn();
  ASSERT_EQ(conn.records.size(), 1u);
  EXPECT_EQ(conn.records[0].pkt_count, 3u);
  EXPECT_DOUBLE_EQ(conn.records[0].avg_pkt_size, 1000.0);
  EXPECT_EQ(conn.records[0].push_count, 3u);
}

TEST(TlsParse, CoalescedRecordsShareAPacket) {
  ConnBuilder b;
  Bytes two = tls::opaque_record(tls::application_data, 100);
  Bytes second = tls::opaque_record(tls::application_data, 50);
  two.insert(two.end(), second.begin(), second.end());
  b.send(C, two);
  auto conn = b.conn();
  ASSERT_EQ(conn.records.size(), 2u);
  EXPECT_EQ(conn.records[0].pkt_count, 1u);
  EXPECT_EQ(conn.records[1].pkt_count, 1u);
  EXPECT_DOUBLE_EQ(conn.records[1].avg_pkt_size, 160.0);
}

TEST(TlsParse, NonTlsStreamExcluded) {
  ConnBuilder b;
  std::string get = "GET / HTTP/1.1\r\n\r\n";
  b.send(C, Bytes(get.begin(), get.end()));
  auto conn = b.conn();
  EXPECT_FALSE(conn.is_tls());
  std::vector<RawConnection> raws{b.raw()};
  EXPECT_TRUE(parse_connections(raws).empty());
  EXPECT_EQ(parse_connections(raws, true).size(), 1u);
}

TEST(TlsParse, TruncatedFinalRecordKept) {
  ConnBuilder b;
  Bytes rec = tls::opaque_record(tls::application_data, 500);
  rec.resize(200);
  b.send(S, rec);
  auto conn = b.conn();
  ASSERT_EQ(conn.records.size(), 1u);
  EXPECT_TRUE(conn.records[0].truncated);
  EXPECT_EQ(conn.records[0].length, 500u);
  EXPECT_TRUE(conn.flags.truncated_final_record);
}

TEST(TlsParse, InterleavingFollowsFirstByteTimestamps) {
  auto conn = ConnBuilder().app(C, 10).app(S, 20).app(S, 30).app(C, 40).conn();
  ASSERT_EQ(conn.records.size(), 4u);
  std::vector<std::uint32_t> lens;
  for (const auto& r : conn.records) lens.push_back(r.length);
  EXPECT_EQ(lens, (std::vector<std::uint32_t>{10, 20, 30, 40}));
  EXPECT_EQ(conn.records[1].direction, S);
  for (std::size_t i = 0; i < conn.records.size(); ++i) EXPECT_EQ(conn.records[i].index, i);
}

TEST(Handshake, AlpnSelectedH2) {
  auto conn = ConnBuilder().hello({"h2", "http/1.1"}, "h2").conn();
  EXPECT_EQ(conn.handshake.alpn_offered, (std::vector<std::string>{"h2", "http/1.1"}));
  ASSERT_TRUE(conn.handshake.alpn_selected);
  EXPECT_EQ(*conn.handshake.alpn_selected, "h2");
  EXPECT_EQ(conn.handshake.offered_cipher_suites, (std::vector<std::uint16_t>{0x1301, 0xc02f}));
  EXPECT_EQ(conn.handshake.selected_cipher_suite, std::optional<std::uint16_t>(0xc02f));
  EXPECT_FALSE(conn.handshake.malformed);
}

TEST(Handshake, NoAlpnExtension) {
  auto conn = ConnBuilder().hello({}, std::nullopt).conn();
  EXPECT_TRUE(conn.handshake.alpn_offered.empty());
  EXPECT_FALSE(conn.handshake.alpn_selected.has_value());
}

TEST(Handshake, GreaseExtensionsCollapse) {
  tls::ClientHelloSpec ch;
  ch.cipher_suites = {0x2a2a, 0x1301};
  ch.extensions = {{0x0a0a, {}}, {0, tls::sni_extension_data("a.example")}, {0xfafa, {0}}, {10, {0, 2, 0, 29}},
                   {13, {0, 2, 4, 3}}};
  ConnBuilder b;
  b.send(C, tls::record(tls::handshake, tls::client_hello(ch)));
  auto conn = b.conn();
  EXPECT_EQ(conn.handshake.advertised_extensions.size(), 4u);
  EXPECT_EQ(std::count(conn.handshake.advertised_extensions.begin(), conn.handshake.advertised_extensions.end(),
                       tls::grease_code),
            1);
  for (auto e : conn.handshake.advertised_extensions) EXPECT_TRUE(!tls::is_grease(e) || e == tls::grease_code);
  EXPECT_EQ(conn.handshake.offered_cipher_suites, (std::vector<std::uint16_t>{tls::grease_code, 0x1301}));
}

TEST(Handshake, RetriedClientHelloKeepsLast) {
  tls::ClientHelloSpec first, second;
  first.cipher_suites = {0x1301};
  second.cipher_suites = {0x1302, 0x1303};
  ConnBuilder b;
  b.send(C, tls::record(tls::handshake, tls::client_hello(first)));
  b.send(C, tls::record(tls::handshake, tls::client_hello(second)));
  EXPECT_EQ(b.conn().handshake.offered_cipher_suites, (std::vector<std::uint16_t>{0x1302, 0x1303}));
}

TEST(Handshake, MalformedBodyKeepsOnlyVersion) {
  Bytes body = tls::handshake_message(1, Bytes{0x03, 0x03, 0x01});
  ConnBuilder b;
  b.send(C, tls::record(tls::handshake, body, 0x0301));
  auto hs = b.conn().handshake;
  EXPECT_TRUE(hs.malformed);
  EXPECT_EQ(hs.version, 0x0301);
  EXPECT_TRUE(hs.offered_cipher_suites.empty());
}

TEST(TlsParseProperty, AttributionSumsAndHeaderRoundTrip) {
  Rng rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    ConnBuilder b;
    Bytes sent[2];
    for (int k = 0; k < 12; ++k) {
      Direction d = rng.below(2) ? C : S;
      std::uint8_t type = static_cast<std::uint8_t>(20 + rng.below(4));
      Bytes rec = tls::opaque_record(type, rng.below(5000));
      auto& acc = sent[static_cast<int>(d)];
      acc.insert(acc.end(), rec.begin(), rec.end());
      b.send(d, rec, 200 + rng.below(1500));
    }
    auto conn = b.conn();
    for (Direction d : {C, S}) {
      const Bytes& stream = conn.raw.stream(d);
      ASSERT_EQ(stream, sent[static_cast<int>(d)]);
      std::uint64_t total = 0, last = 0;
      bool first = true;
      for (const auto& r : conn.records) {
        if (r.direction != d) continue;
        ASSERT_TRUE(first || r.stream_offset > last);
        first = false;
        last = r.stream_offset;
        total += 5 + r.length;
        ASSERT_GE(r.pkt_count, 1u);
        auto hdr = serialize_record_header(r);
        ASSERT_TRUE(std::equal(hdr.begin(), hdr.end(), stream.begin() + static_cast<std::ptrdiff_t>(r.stream_offset)));
      }
      ASSERT_EQ(total, stream.size());
    }
  }
}
