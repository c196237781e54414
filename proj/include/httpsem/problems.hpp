#pragma once

// Registry of HTTP semantics inference problems and their label sets.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace httpsem {

enum class ProblemKind { multiclass, binary };
enum class Side { client, server };

inline constexpr const char* to_string(ProblemKind k) { return k == ProblemKind::binary ? "binary" : "multiclass"; }
inline constexpr const char* to_string(Side s) { return s == Side::client ? "client" : "server"; }

inline Direction side_direction(Side s) {
  return s == Side::client ? Direction::client_to_server : Direction::server_to_client;
}

inline constexpr const char* kOtherLabel = "other";
inline constexpr const char* kAbsentLabel = "absent";
inline constexpr const char* kPresentLabel = "present";

struct ProblemSpec {
  std::string id;     // e.g. "request.method", "response.Server"
  std::string field;  // header name, or "method" / "status-code"
  ProblemKind kind = ProblemKind::multiclass;
  Side side = Side::client;
  std::vector<std::string> labels;
  Protocol protocol = Protocol::http1;

  std::optional<std::size_t> label_index(std::string_view label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  }
  bool is_header_presence() const { return kind == ProblemKind::binary; }
};

class ProblemRegistry {
 public:
  ProblemRegistry() = default;
  ProblemRegistry(Protocol protocol, std::vector<ProblemSpec> problems)
      : protocol_(protocol), problems_(std::move(problems)) {
    validate();
  }

  Protocol protocol() const { return protocol_; }
  const std::vector<ProblemSpec>& problems() const { return problems_; }
  std::size_t size() const { return problems_.size(); }
  const ProblemSpec& operator[](std::size_t i) const { return problems_[i]; }

  std::optional<std::size_t> find(std::string_view id) const {
    for (std::size_t i = 0; i < problems_.size(); ++i)
      if (problems_[i].id == id) return i;
    return std::nullopt;
  }

  // Offset of a problem's indicator block inside the enhanced vector.
  std::size_t enhanced_offset(std::size_t problem) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < problem; ++i) off += problems_[i].labels.size();
    return off;
  }

  std::size_t enhanced_length() const { return enhanced_offset(problems_.size()); }

  std::vector<std::string> enhanced_feature_names() const {
    std::vector<std::string> names;
    for (const auto& p : problems_)
      for (const auto& l : p.labels) names.push_back("inferred:" + p.id + "=" + l);
    return names;
  }

 private:
  void validate() const {
    for (std::size_t i = 0; i < problems_.size(); ++i) {
      const auto& p = problems_[i];
      if (p.labels.empty()) throw Error("problem " + p.id + " has no labels");
      if (p.kind == ProblemKind::binary &&
          (p.labels.size() != 2 || p.labels[0] != kAbsentLabel || p.labels[1] != kPresentLabel))
        throw Error("binary problem " + p.id + " must have labels {absent, present}");
      if (p.protocol != protocol_) throw Error("problem " + p.id + " belongs to another protocol");
      for (std::size_t j = 0; j < i; ++j)
        if (problems_[j].id == p.id) throw Error("duplicate problem id " + p.id);
    }
  }

  Protocol protocol_ = Protocol::http1;
  std::vector<ProblemSpec> problems_;
};

namespace detail {

inline ProblemSpec multiclass(Protocol proto, Side side, std::string field, std::vector<std::string> labels) {
  labels.emplace_back(kOtherLabel);
  std::string id = std::string(side == Side::client ? "request." : "response.") + field;
  return ProblemSpec{std::move(id), std::move(field), ProblemKind::multiclass, side, std::move(labels), proto};
}

inline ProblemSpec presence(Protocol proto, Side side, std::string field) {
  std::string id = std::string(side == Side::client ? "request." : "response.") + field;
  return ProblemSpec{std::move(id), std::move(field), ProblemKind::binary, side, {kAbsentLabel, kPresentLabel}, proto};
}

}  // namespace detail

// Label sets per protocol, plus an "other" class on every multi-class
// problem. Response presence problems include Etag alongside
// Access-Control-Allow-Origin.
inline ProblemRegistry default_registry(Protocol proto) {
  using detail::multiclass;
  using detail::presence;
  const Side req = Side::client, resp = Side::server;
  std::vector<ProblemSpec> p;
  if (proto == Protocol::http1) {
    p.push_back(multiclass(proto, req, "method", {"GET", "POST", "OPTIONS", "HEAD", "PUT"}));
    p.push_back(multiclass(proto, req, "Content-Type", {"json", "plain"}));
  } else {
    p.push_back(multiclass(proto, req, "method", {"GET", "POST", "OPTIONS", "HEAD"}));
    p.push_back(multiclass(proto, req, "Content-Type", {"json", "plain"}));
  }
  p.push_back(presence(proto, req, "Cookie"));
  p.push_back(presence(proto, req, "Referer"));
  p.push_back(presence(proto, req, "Origin"));
  if (proto == Protocol::http1) {
    p.push_back(multiclass(proto, resp, "status-code",
                           {"100", "200", "204", "206", "302", "303", "301", "304", "307", "404"}));
    p.push_back(multiclass(proto, resp, "Content-Type",
                           {"html", "javascript", "image", "video", "css", "octet", "json", "font", "plain"}));
    p.push_back(multiclass(proto, resp, "Server",
                           {"nginx-1.13/1.12", "nginx-1.11/1.10/1.8", "nginx-1.7/1.4", "nginx", "cloudflare-nginx",
                            "openresty", "Apache", "Coyote/1.1", "AmazonS3", "NetDNA/2.2", "IIS-7.5/8.5",
                            "jetty-9.4/9.0"}));
  } else {
    p.push_back(multiclass(proto, resp, "status-code", {"200", "204", "206", "301", "302", "303", "304", "307", "404"}));
    p.push_back(multiclass(proto, resp, "Content-Type",
                           {"html", "javascript", "image", "video", "css", "octet", "json", "font", "plain",
                            "protobuf"}));
    p.push_back(multiclass(proto, resp, "Server",
                           {"nginx-1.13/1.12", "nginx-1.11/1.10/1.6", "nginx-1.4/1.3", "nginx", "cloudflare-nginx",
                            "Apache", "Coyote/1.1", "IIS/8.5", "Golfe2", "sffe", "cafe", "ESF", "GSE", "gws",
                            "UploadServer", "Akamai", "Google", "Dreamlab", "Tengine", "AmazonS3", "NetDNA/2.2"}));
  }
  p.push_back(presence(proto, resp, "Access-Control-Allow-Origin"));
  p.push_back(presence(proto, resp, "Etag"));
  p.push_back(presence(proto, resp, "Via"));
  p.push_back(presence(proto, resp, "Accept-Ranges"));
  p.push_back(presence(proto, resp, "Set-Cookie"));
  return ProblemRegistry(proto, std::move(p));
}

inline nlohmann::json to_json(const ProblemRegistry& reg) {
  nlohmann::json problems = nlohmann::json::array();
  for (const auto& p : reg.problems()) {
    problems.push_back({{"id", p.id},
                        {"field", p.field},
                        {"kind", to_string(p.kind)},
                        {"side", to_string(p.side)},
                        {"labels", p.labels}});
  }
  return {{"protocol", to_string(reg.protocol())}, {"problems", problems}};
}

inline ProblemRegistry registry_from_json(const nlohmann::json& j) {
  Protocol proto = parse_protocol(j.at("protocol").get<std::string>());
  std::vector<ProblemSpec> problems;
  for (const auto& pj : j.at("problems")) {
    ProblemSpec p;
    p.id = pj.at("id").get<std::string>();
    p.field = pj.at("field").get<std::string>();
    p.kind = pj.at("kind").get<std::string>() == "binary" ? ProblemKind::binary : ProblemKind::multiclass;
    p.side = pj.at("side").get<std::string>() == "client" ? Side::client : Side::server;
    p.labels = pj.at("labels").get<std::vector<std::string>>();
    p.protocol = proto;
    problems.push_back(std::move(p));
  }
  return ProblemRegistry(proto, std::move(problems));
}

}  // namespace httpsem

namespace httpsem {

// One registry per protocol.
struct Registries {
  ProblemRegistry http1 = default_registry(Protocol::http1);
  ProblemRegistry http2 = default_registry(Protocol::http2);

  const ProblemRegistry& of(Protocol p) const { return p == Protocol::http1 ? http1 : http2; }
};

}  // namespace httpsem
