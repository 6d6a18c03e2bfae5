#pragma once

// Config loading and validation against the shipped schema. The validator
// covers the keywords the schema uses (type, enum, const, anyOf, minimum,
// maximum, exclusiveMinimum, required, properties, additionalProperties,
// items) and reports the first violation with a JSON path.

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "advsketch/error.hpp"
#include "schema.hpp"

namespace advsketch::cli {

using nlohmann::json;

namespace detail {

inline bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (t == "number") return v.is_number();
  if (t == "null") return v.is_null();
  return false;
}

// Returns an empty string when v conforms, else "path: reason".
inline std::string check(const json& v, const json& s, const std::string& path) {
  const auto at = [&](const std::string& why) { return "$" + path + ": " + why; };
  if (s.contains("anyOf")) {
    for (const auto& alt : s["anyOf"])
      if (check(v, alt, path).empty()) return "";
    return at("does not match any allowed form");
  }
  if (s.contains("const") && v != s["const"]) return at("expected " + s["const"].dump());
  if (s.contains("enum")) {
    bool ok = false;
    for (const auto& e : s["enum"]) ok = ok || v == e;
    if (!ok) return at("expected one of " + s["enum"].dump() + ", got " + v.dump());
  }
  if (s.contains("type") && !has_type(v, s["type"].get<std::string>()))
    return at("expected " + s["type"].get<std::string>() + ", got " + v.type_name());
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) return at("must be >= " + s["minimum"].dump());
    if (s.contains("maximum") && x > s["maximum"].get<double>()) return at("must be <= " + s["maximum"].dump());
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>())
      return at("must be > " + s["exclusiveMinimum"].dump());
  }
  if (v.is_object()) {
    for (const auto& r : s.value("required", json::array()))
      if (!v.contains(r.get<std::string>())) return at("missing required field '" + r.get<std::string>() + "'");
    const json props = s.value("properties", json::object());
    for (const auto& [k, sub] : v.items()) {
      if (props.contains(k)) {
        if (auto e = check(sub, props[k], path + "." + k); !e.empty()) return e;
      } else if (!s.value("additionalProperties", true)) {
        return at("unknown field '" + k + "'");
      }
    }
  }
  if (v.is_array() && s.contains("items"))
    for (std::size_t i = 0; i < v.size(); ++i)
      if (auto e = check(v[i], s["items"], path + "[" + std::to_string(i) + "]"); !e.empty()) return e;
  return "";
}

}  // namespace detail

inline const json& schema() {
  static const json s = json::parse(kConfigSchema);
  return s;
}

inline void validate(const json& cfg) {
  if (auto e = detail::check(cfg, schema(), ""); !e.empty()) fail(ErrorCode::BadConfig, e);
}

inline json load(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::BadConfig, path + ": " + e.what());
  }
  return j;
}

}  // namespace advsketch::cli
