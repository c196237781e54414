#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace httpsem {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input that cannot be recovered from (bad pcap header, bad JSON shape).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A feature vector or model input does not have the length its schema requires.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Ground-truth records could not be matched to the observed TLS records.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

enum class Direction : std::uint8_t { client_to_server = 0, server_to_client = 1 };

inline constexpr const char* to_string(Direction d) {
  return d == Direction::client_to_server ? "c2s" : "s2c";
}

inline Direction opposite(Direction d) {
  return d == Direction::client_to_server ? Direction::server_to_client
                                          : Direction::client_to_server;
}

enum class Mode { standard, tor };

inline constexpr const char* to_string(Mode m) { return m == Mode::standard ? "standard" : "tor"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "standard") return Mode::standard;
  if (s == "tor") return Mode::tor;
  throw Error("unknown mode: " + std::string(s));
}

enum class Protocol { http1, http2 };

inline constexpr const char* to_string(Protocol p) { return p == Protocol::http1 ? "http/1.1" : "h2"; }

inline Protocol parse_protocol(std::string_view s) {
  if (s == "http/1.1" || s == "http/1.0" || s == "http1" || s == "HTTP/1.1") return Protocol::http1;
  if (s == "h2" || s == "http2" || s == "HTTP/2") return Protocol::http2;
  throw Error("unknown protocol: " + std::string(s));
}

inline std::uint16_t read_be16(ByteView b, std::size_t off) {
  return static_cast<std::uint16_t>((b[off] << 8) | b[off + 1]);
}

inline std::uint32_t read_be24(ByteView b, std::size_t off) {
  return (std::uint32_t{b[off]} << 16) | (std::uint32_t{b[off + 1]} << 8) | b[off + 2];
}

inline std::uint32_t read_be32(ByteView b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | b[off + 3];
}

inline void put_be16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_be24(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_be32(Bytes& out, std::uint32_t v) {
  put_be16(out, static_cast<std::uint16_t>(v >> 16));
  put_be16(out, static_cast<std::uint16_t>(v & 0xffff));
}

inline std::string to_hex(ByteView b) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto c : b) {
    s.push_back(digits[c >> 4]);
    s.push_back(digits[c & 0xf]);
  }
  return s;
}

inline Bytes from_hex(std::string_view s) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (s.size() % 2 != 0) throw ParseError("odd-length hex string");
  Bytes out;
  out.reserve(s.size() / 2);
  for (std::size_t i = 0; i < s.size(); i += 2) {
    int hi = nibble(s[i]), lo = nibble(s[i + 1]);
    if (hi < 0 || lo < 0) throw ParseError("invalid hex digit");
    out.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
  }
  return out;
}

// FNV-1a, used for model-name seed derivation and output digests.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads (0 = all cores).
// Callers write results into per-index slots, so output order never depends
// on scheduling.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&, j] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[j] = std::current_exception();
        next.store(n);
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace httpsem
