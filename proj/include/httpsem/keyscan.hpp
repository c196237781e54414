#pragma once

// Memory-dump scanning for TLS master secrets and Tor AES keys.
//
// Each profile is a prefix followed by a lookahead that captures the key
// material. Profiles are written as ordered alternatives of byte-range
// sequences; at every offset the first alternative that matches wins, and a
// match is reported at every offset where one exists, so matches may overlap.
//
//   boringssl  (02 00|[00-03] 03) 00 00 (?= .{2}.{2} 30 00 00 00 (.{48}) [00-20] 00 00 00)
//   nss        11 00 00 00 (?= (.{8} 30 00 00 00 | .{4}.{8} 30 00 00 00 .{4}) (.{48}))
//   openssl    (02 00|[00-03] 03) 00 00 (?= .{4}.{8} 30 00 00 00 (.{48}) [00-20] 00 00 00)
//   schannel   35 6c 73 73 (?= (02 00|[00-03] 03) 00 00 (.{4}.{8}.{4}) (.{48}))
//   tor_aes    11 01 00 00 00 00 00 00 (?= (.{16})(.{16}))

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace httpsem {

enum class KeyProfile : std::uint8_t { boringssl, nss, openssl, schannel, tor_aes };

inline constexpr std::array<KeyProfile, 5> kAllProfiles = {KeyProfile::boringssl, KeyProfile::nss,
                                                           KeyProfile::openssl, KeyProfile::schannel,
                                                           KeyProfile::tor_aes};

inline constexpr const char* to_string(KeyProfile p) {
  switch (p) {
    case KeyProfile::boringssl: return "boringssl";
    case KeyProfile::nss: return "nss";
    case KeyProfile::openssl: return "openssl";
    case KeyProfile::schannel: return "schannel";
    case KeyProfile::tor_aes: return "tor_aes";
  }
  return "?";
}

inline KeyProfile parse_key_profile(std::string_view s) {
  for (auto p : kAllProfiles)
    if (s == to_string(p)) return p;
  throw Error("unknown key profile: " + std::string(s));
}

inline std::size_t material_length(KeyProfile p) { return p == KeyProfile::tor_aes ? 32 : 48; }

struct KeyHit {
  KeyProfile profile = KeyProfile::openssl;
  std::uint64_t offset = 0;  // start of the prefix
  Bytes material;

  auto operator<=>(const KeyHit&) const = default;
};

namespace keyscan {

struct ByteRange {
  std::uint8_t lo = 0, hi = 0xff;
  bool contains(std::uint8_t b) const { return b >= lo && b <= hi; }
};

struct Alternative {
  std::vector<ByteRange> bytes;
  std::vector<std::pair<std::size_t, std::size_t>> captures;  // (offset, length), concatenated
};

struct Pattern {
  KeyProfile profile;
  std::vector<Alternative> alternatives;  // tried in order

  std::size_t span() const {
    std::size_t n = 0;
    for (const auto& a : alternatives) n = std::max(n, a.bytes.size());
    return n;
  }
};

class Seq {
 public:
  Seq& byte(std::uint8_t b) {
    a_.bytes.push_back({b, b});
    return *this;
  }
  Seq& bytes(std::initializer_list<std::uint8_t> bs) {
    for (auto b : bs) byte(b);
    return *this;
  }
  Seq& range(std::uint8_t lo, std::uint8_t hi) {
    a_.bytes.push_back({lo, hi});
    return *this;
  }
  Seq& any(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a_.bytes.push_back({0x00, 0xff});
    return *this;
  }
  Seq& capture(std::size_t n) {
    a_.captures.emplace_back(a_.bytes.size(), n);
    return any(n);
  }
  // (02 00 | [00-03] 03)
  Seq& version(bool modern) {
    if (modern) return range(0x00, 0x03).byte(0x03);
    return byte(0x02).byte(0x00);
  }
  Alternative done() const { return a_; }

 private:
  Alternative a_;
};

inline std::vector<Pattern> build_patterns() {
  std::vector<Pattern> out;
  auto both_versions = [](auto&& make) { return std::vector<Alternative>{make(false), make(true)}; };
  out.push_back({KeyProfile::boringssl, both_versions([](bool v) {
                   return Seq().version(v).bytes({0, 0}).any(4).bytes({0x30, 0, 0, 0}).capture(48)
                       .range(0x00, 0x20).bytes({0, 0, 0}).done();
                 })});
  out.push_back({KeyProfile::nss,
                 {Seq().bytes({0x11, 0, 0, 0}).any(8).bytes({0x30, 0, 0, 0}).capture(48).done(),
                  Seq().bytes({0x11, 0, 0, 0}).any(12).bytes({0x30, 0, 0, 0}).any(4).capture(48).done()}});
  out.push_back({KeyProfile::openssl, both_versions([](bool v) {
                   return Seq().version(v).bytes({0, 0}).any(12).bytes({0x30, 0, 0, 0}).capture(48)
                       .range(0x00, 0x20).bytes({0, 0, 0}).done();
                 })});
  out.push_back({KeyProfile::schannel, both_versions([](bool v) {
                   return Seq().bytes({0x35, 0x6c, 0x73, 0x73}).version(v).bytes({0, 0}).any(16).capture(48).done();
                 })});
  out.push_back({KeyProfile::tor_aes,
                 {Seq().bytes({0x11, 0x01, 0, 0, 0, 0, 0, 0}).capture(16).capture(16).done()}});
  return out;
}

inline const std::vector<Pattern>& patterns() {
  static const std::vector<Pattern> p = build_patterns();
  return p;
}

inline const Pattern& pattern(KeyProfile p) { return patterns()[static_cast<std::size_t>(p)]; }

inline std::size_t max_span() {
  std::size_t n = 0;
  for (const auto& p : patterns()) n = std::max(n, p.span());
  return n;
}

inline bool matches(const Alternative& a, ByteView buf, std::size_t at) {
  if (buf.size() - at < a.bytes.size()) return false;
  for (std::size_t i = 0; i < a.bytes.size(); ++i)
    if (!a.bytes[i].contains(buf[at + i])) return false;
  return true;
}

// Probability that one alternative matches at a uniformly random offset.
inline double match_probability(const Alternative& a) {
  double p = 1.0;
  for (const auto& r : a.bytes) p *= (static_cast<double>(r.hi) - r.lo + 1) / 256.0;
  return p;
}

}  // namespace keyscan

using ProfileSet = std::vector<KeyProfile>;

// All hits in `buf`, ordered by (offset, profile). `base` is added to
// reported offsets.
inline std::vector<KeyHit> scan(ByteView buf, const ProfileSet& profiles = {kAllProfiles.begin(), kAllProfiles.end()},
                                std::uint64_t base = 0) {
  std::vector<const keyscan::Pattern*> active;
  for (auto p : kAllProfiles)
    if (std::find(profiles.begin(), profiles.end(), p) != profiles.end()) active.push_back(&keyscan::pattern(p));
  std::vector<KeyHit> hits;
  for (std::size_t at = 0; at < buf.size(); ++at) {
    for (const auto* pat : active) {
      for (const auto& alt : pat->alternatives) {
        if (!alt.bytes.front().contains(buf[at]) || !keyscan::matches(alt, buf, at)) continue;
        KeyHit h;
        h.profile = pat->profile;
        h.offset = base + at;
        for (auto [off, len] : alt.captures)
          h.material.insert(h.material.end(), buf.begin() + static_cast<std::ptrdiff_t>(at + off),
                            buf.begin() + static_cast<std::ptrdiff_t>(at + off + len));
        hits.push_back(std::move(h));
        break;
      }
    }
  }
  return hits;
}

inline void sort_unique(std::vector<KeyHit>& hits) {
  std::sort(hits.begin(), hits.end(), [](const KeyHit& a, const KeyHit& b) {
    if (a.offset != b.offset) return a.offset < b.offset;
    return a.profile < b.profile;
  });
  hits.erase(std::unique(hits.begin(), hits.end(),
                         [](const KeyHit& a, const KeyHit& b) { return a.offset == b.offset && a.profile == b.profile; }),
             hits.end());
}

inline constexpr std::size_t kScanWindow = 4u << 20;
inline constexpr std::size_t kScanOverlap = 256;

// Scans overlapping windows in parallel; each window extends `overlap` bytes
// into the next so matches straddling a boundary are seen whole.
inline std::vector<KeyHit> scan_windowed(ByteView buf, const ProfileSet& profiles, std::size_t window = kScanWindow,
                                         std::size_t overlap = kScanOverlap, std::size_t jobs = 1) {
  if (window == 0) throw Error("scan window must be positive");
  if (overlap < keyscan::max_span()) throw Error("scan overlap must cover the longest pattern");
  const std::size_t n_windows = buf.empty() ? 0 : (buf.size() + window - 1) / window;
  std::vector<std::vector<KeyHit>> parts(n_windows);
  parallel_for(n_windows, jobs, [&](std::size_t k) {
    std::size_t begin = k * window;
    std::size_t end = std::min(buf.size(), begin + window + overlap);
    parts[k] = scan(buf.subspan(begin, end - begin), profiles, begin);
  });
  std::vector<KeyHit> hits;
  for (auto& p : parts) hits.insert(hits.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  sort_unique(hits);
  return hits;
}

// Streams a dump file window by window.
inline std::vector<KeyHit> scan_file(const std::string& path, const ProfileSet& profiles,
                                     std::size_t window = kScanWindow, std::size_t overlap = kScanOverlap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  if (overlap < keyscan::max_span()) throw Error("scan overlap must cover the longest pattern");
  std::vector<KeyHit> hits;
  Bytes buf;
  std::uint64_t base = 0;  // file offset of buf[0]
  Bytes chunk(window);
  for (;;) {
    in.read(reinterpret_cast<char*>(chunk.data()), static_cast<std::streamsize>(chunk.size()));
    auto got = static_cast<std::size_t>(in.gcount());
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(got));
    const bool eof = got < chunk.size();
    auto part = scan(buf, profiles, base);
    hits.insert(hits.end(), part.begin(), part.end());
    if (eof) break;
    std::size_t keep = std::min(overlap, buf.size());
    base += buf.size() - keep;
    buf.erase(buf.begin(), buf.end() - static_cast<std::ptrdiff_t>(keep));
  }
  sort_unique(hits);
  return hits;
}

// Key file lines "<profile> <hex>". With a client_random, master secrets are
// written as key-log lines "CLIENT_RANDOM <client_random> <secret>" instead.
inline std::string emit_keys(const std::vector<KeyHit>& hits, const std::optional<Bytes>& client_random = std::nullopt) {
  std::string out;
  for (const auto& h : hits) {
    if (client_random && h.profile != KeyProfile::tor_aes)
      out += "CLIENT_RANDOM " + to_hex(*client_random) + " " + to_hex(h.material) + "\n";
    else
      out += std::string(to_string(h.profile)) + " " + to_hex(h.material) + "\n";
  }
  return out;
}

// Expected number of matches of one profile in n uniformly random bytes.
inline double expected_false_positives(KeyProfile p, std::uint64_t n_bytes) {
  const auto& pat = keyscan::pattern(p);
  // Alternatives are tried in order, so later ones only count where earlier
  // ones failed; the union bound is within rounding of that for these
  // patterns.
  double prob = 0;
  for (const auto& a : pat.alternatives) prob += keyscan::match_probability(a);
  const std::size_t span = pat.span();
  if (n_bytes < span) return 0.0;
  return prob * static_cast<double>(n_bytes - span + 1);
}

inline double expected_false_positives(const ProfileSet& profiles, std::uint64_t n_bytes) {
  double e = 0;
  for (auto p : profiles) e += expected_false_positives(p, n_bytes);
  return e;
}

}  // namespace httpsem
