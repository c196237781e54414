#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "keyplant.hpp"

using namespace httpsem;

namespace {

const Bytes kPaperDump = from_hex(
    "03030000000000000000000000000000"
    "30000000440e705c1c2245076c1ced0d"
    "e374dfe2c971af412c0be6af70326ec3"
    "a32ca0e63a7aff0ef370a28a8852b22d"
    "d1b3f6f220000000cd3158bfdf97b0f8"
    "c086ba484793b0a5bac15b4b35377f98");

const Bytes kPaperSecret = from_hex(
    "440e705c1c2245076c1ced0de374dfe2c971af412c0be6af70326ec3a32ca0e63a7aff0ef370a28a8852b22dd1b3f6f2");

std::vector<plant::Planted> plant_many(Bytes& buf, std::size_t count, Rng& rng, std::size_t spacing) {
  std::vector<plant::Planted> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto prof = kAllProfiles[rng.below(kAllProfiles.size())];
    out.push_back(plant::put(buf, 100 + i * spacing + rng.below(spacing / 2), prof, rng));
  }
  return out;
}

}  // namespace

TEST(Keyscan, PaperOpensslLayout) {
  auto hits = scan(kPaperDump);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].profile, KeyProfile::openssl);
  EXPECT_EQ(hits[0].offset, 0u);
  EXPECT_EQ(hits[0].material, kPaperSecret);
}

TEST(Keyscan, EmptyBuffer) {
  EXPECT_TRUE(scan(Bytes{}).empty());
  EXPECT_TRUE(scan_windowed(Bytes{}, {kAllProfiles.begin(), kAllProfiles.end()}).empty());
}

TEST(Keyscan, PatternTableMatchesExpressions) {
  using keyscan::pattern;
  EXPECT_EQ(pattern(KeyProfile::boringssl).alternatives.size(), 2u);
  EXPECT_EQ(pattern(KeyProfile::boringssl).span(), 64u);
  EXPECT_EQ(pattern(KeyProfile::nss).alternatives[0].bytes.size(), 64u);
  EXPECT_EQ(pattern(KeyProfile::nss).alternatives[1].bytes.size(), 72u);
  EXPECT_EQ(pattern(KeyProfile::openssl).span(), 72u);
  EXPECT_EQ(pattern(KeyProfile::schannel).span(), 72u);
  EXPECT_EQ(pattern(KeyProfile::tor_aes).span(), 40u);
  // Version alternation: 02 00 first, then [00-03] 03.
  const auto& legacy = pattern(KeyProfile::openssl).alternatives[0].bytes;
  const auto& modern = pattern(KeyProfile::openssl).alternatives[1].bytes;
  EXPECT_TRUE(legacy[0].lo == 0x02 && legacy[0].hi == 0x02 && legacy[1].lo == 0x00 && legacy[1].hi == 0x00);
  EXPECT_TRUE(modern[0].lo == 0x00 && modern[0].hi == 0x03 && modern[1].lo == 0x03 && modern[1].hi == 0x03);
  // The trailing session-id length class [00-20].
  EXPECT_TRUE(modern[68].lo == 0x00 && modern[68].hi == 0x20);
  const auto& sch = pattern(KeyProfile::schannel).alternatives[0].bytes;
  EXPECT_EQ(sch[0].lo, 0x35);
  EXPECT_EQ(sch[1].lo, 0x6c);
  EXPECT_EQ(sch[2].lo, 0x73);
  EXPECT_EQ(sch[3].lo, 0x73);
  EXPECT_LE(keyscan::max_span(), kScanOverlap);
  for (auto p : kAllProfiles) {
    std::size_t captured = 0;
    for (auto [off, len] : pattern(p).alternatives[0].captures) captured += len;
    EXPECT_EQ(captured, material_length(p));
  }
}

TEST(Keyscan, OverlappingMatchesAllReported) {
  // Two Tor prefixes 8 bytes apart: each capture overlaps the next prefix.
  Bytes buf(200, 0xee);
  const Bytes prefix = {0x11, 0x01, 0, 0, 0, 0, 0, 0};
  std::copy(prefix.begin(), prefix.end(), buf.begin() + 10);
  std::copy(prefix.begin(), prefix.end(), buf.begin() + 18);
  auto hits = scan(buf, {KeyProfile::tor_aes});
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].offset, 10u);
  EXPECT_EQ(hits[1].offset, 18u);
  EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), hits[0].material.begin()));
}

TEST(Keyscan, PlantedNssInRandomMegabyte) {
  Rng rng(77);
  Bytes buf = plant::random_bytes(1 << 20, rng);
  auto planted = plant::put(buf, 123457, KeyProfile::nss, rng);
  auto hits = scan(buf, {KeyProfile::nss});
  std::size_t found = 0, others = 0;
  for (const auto& h : hits) {
    if (h.offset == planted.offset && h.material == planted.material)
      ++found;
    else
      ++others;
  }
  EXPECT_EQ(found, 1u);
  double expected_fp = expected_false_positives(KeyProfile::nss, buf.size());
  EXPECT_LT(expected_fp, 1e-3);
  EXPECT_EQ(others, 0u) << "expected " << expected_fp;
}

TEST(Keyscan, WindowedEqualsWholeBuffer) {
  Rng rng(78);
  for (int trial = 0; trial < 5; ++trial) {
    Bytes buf = plant::random_bytes(300000, rng);
    plant_many(buf, 60, rng, 4900);
    auto whole = scan(buf);
    sort_unique(whole);
    for (std::size_t window : {1000u, 4096u, 77777u}) {
      ProfileSet all(kAllProfiles.begin(), kAllProfiles.end());
      ASSERT_EQ(scan_windowed(buf, all, window, kScanOverlap, 2), whole) << "window " << window;
    }
  }
  EXPECT_THROW(scan_windowed(Bytes(10), {KeyProfile::nss}, 100, 10), Error);
}

TEST(Keyscan, RecallAcrossProfilesAndWindowEdges) {
  Rng rng(79);
  const std::size_t window = 4096;
  for (auto prof : kAllProfiles) {
    for (int fixture = 0; fixture < 20; ++fixture) {
      Bytes buf = plant::random_bytes(3 * window, rng);
      // Straddle the first window boundary at a random cut.
      std::uint64_t at = window - 1 - rng.below(keyscan::pattern(prof).span() - 1);
      auto p = plant::put(buf, at, prof, rng);
      auto hits = scan_windowed(buf, {prof}, window, kScanOverlap);
      bool found = std::any_of(hits.begin(), hits.end(),
                               [&](const KeyHit& h) { return h.offset == p.offset && h.material == p.material; });
      ASSERT_TRUE(found) << to_string(prof) << " fixture " << fixture;
    }
  }
}

TEST(Keyscan, ScanFileStreamsWindows) {
  Rng rng(80);
  Bytes buf = plant::random_bytes(50000, rng);
  auto planted = plant_many(buf, 8, rng, 5000);
  auto path = std::filesystem::temp_directory_path() / "httpsem_keyscan_dump.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  ProfileSet all(kAllProfiles.begin(), kAllProfiles.end());
  auto hits = scan_file(path.string(), all, 3000, kScanOverlap);
  auto whole = scan(buf);
  sort_unique(whole);
  EXPECT_EQ(hits, whole);
  for (const auto& p : planted)
    EXPECT_TRUE(std::any_of(hits.begin(), hits.end(), [&](const KeyHit& h) {
      return h.offset == p.offset && h.profile == p.profile && h.material == p.material;
    }));
  std::filesystem::remove(path);
  EXPECT_THROW(scan_file("/nonexistent/dump", all), Error);
}

TEST(KeyFile, ZeroHitsEmpty) { EXPECT_EQ(emit_keys({}), ""); }

TEST(KeyFile, OneSecretOneLine) {
  auto out = emit_keys(scan(kPaperDump));
  EXPECT_EQ(out, "openssl " + to_hex(kPaperSecret) + "\n");
  EXPECT_EQ(to_hex(kPaperSecret).size(), 96u);
}

TEST(KeyFile, ClientRandomUsesKeyLogFormat) {
  Bytes cr(32, 0xab);
  auto out = emit_keys(scan(kPaperDump), cr);
  EXPECT_EQ(out, "CLIENT_RANDOM " + to_hex(cr) + " " + to_hex(kPaperSecret) + "\n");
}

TEST(KeyFile, PlantedManifestRoundTrip) {
  Rng rng(81);
  Bytes buf(40000, 0x00);
  auto planted = plant_many(buf, 12, rng, 3000);
  std::string manifest;
  for (const auto& p : planted) manifest += std::string(to_string(p.profile)) + " " + to_hex(p.material) + "\n";
  EXPECT_EQ(emit_keys(scan_windowed(buf, {kAllProfiles.begin(), kAllProfiles.end()}, 5000, kScanOverlap)), manifest);
}

TEST(Keyscan, ProfileNames) {
  for (auto p : kAllProfiles) EXPECT_EQ(parse_key_profile(to_string(p)), p);
  EXPECT_THROW(parse_key_profile("wolfssl"), Error);
}
