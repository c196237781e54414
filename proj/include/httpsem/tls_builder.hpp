#pragma once

// Byte-level builders for TLS records and hello messages. Used by the
// synthetic corpus generator and by test fixtures.

#include <string>
#include <vector>

#include "common.hpp"
#include "tlsparse.hpp"

namespace httpsem::tls {

struct Extension {
  std::uint16_t type = 0;
  Bytes data;
};

inline Bytes alpn_extension_data(const std::vector<std::string>& protocols) {
  Bytes list;
  for (const auto& p : protocols) {
    list.push_back(static_cast<std::uint8_t>(p.size()));
    list.insert(list.end(), p.begin(), p.end());
  }
  Bytes out;
  put_be16(out, static_cast<std::uint16_t>(list.size()));
  out.insert(out.end(), list.begin(), list.end());
  return out;
}

inline Bytes sni_extension_data(const std::string& host) {
  Bytes out;
  put_be16(out, static_cast<std::uint16_t>(host.size() + 3));
  out.push_back(0);
  put_be16(out, static_cast<std::uint16_t>(host.size()));
  out.insert(out.end(), host.begin(), host.end());
  return out;
}

struct ClientHelloSpec {
  std::uint16_t version = 0x0303;
  std::vector<std::uint16_t> cipher_suites;
  std::vector<Extension> extensions;
  std::uint8_t session_id_len = 32;
  std::uint8_t random_fill = 0x11;
};

struct ServerHelloSpec {
  std::uint16_t version = 0x0303;
  std::uint16_t cipher_suite = 0xc02f;
  std::vector<Extension> extensions;
  std::uint8_t session_id_len = 32;
  std::uint8_t random_fill = 0x22;
};

inline Bytes handshake_message(std::uint8_t type, const Bytes& body) {
  Bytes out;
  out.push_back(type);
  put_be24(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline void append_extensions(Bytes& body, const std::vector<Extension>& exts) {
  Bytes block;
  for (const auto& e : exts) {
    put_be16(block, e.type);
    put_be16(block, static_cast<std::uint16_t>(e.data.size()));
    block.insert(block.end(), e.data.begin(), e.data.end());
  }
  put_be16(body, static_cast<std::uint16_t>(block.size()));
  body.insert(body.end(), block.begin(), block.end());
}

inline Bytes client_hello(const ClientHelloSpec& spec) {
  Bytes body;
  put_be16(body, spec.version);
  body.insert(body.end(), 32, spec.random_fill);
  body.push_back(spec.session_id_len);
  body.insert(body.end(), spec.session_id_len, 0x5a);
  put_be16(body, static_cast<std::uint16_t>(spec.cipher_suites.size() * 2));
  for (auto cs : spec.cipher_suites) put_be16(body, cs);
  body.push_back(1);
  body.push_back(0);
  append_extensions(body, spec.extensions);
  return handshake_message(1, body);
}

inline Bytes server_hello(const ServerHelloSpec& spec) {
  Bytes body;
  put_be16(body, spec.version);
  body.insert(body.end(), 32, spec.random_fill);
  body.push_back(spec.session_id_len);
  body.insert(body.end(), spec.session_id_len, 0x5a);
  put_be16(body, spec.cipher_suite);
  body.push_back(0);
  append_extensions(body, spec.extensions);
  return handshake_message(2, body);
}

inline Bytes record(std::uint8_t type, const Bytes& payload, std::uint16_t version = 0x0303) {
  Bytes out;
  out.reserve(payload.size() + 5);
  out.push_back(type);
  put_be16(out, version);
  put_be16(out, static_cast<std::uint16_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

// A record whose payload is `length` filler bytes.
inline Bytes opaque_record(std::uint8_t type, std::size_t length, std::uint8_t fill = 0xab,
                           std::uint16_t version = 0x0303) {
  return record(type, Bytes(length, fill), version);
}

}  // namespace httpsem::tls
