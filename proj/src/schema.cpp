#include "birdtl/schema.hpp"

#include "birdtl/error.hpp"
#include "schemas_embedded.hpp"

namespace birdtl {
namespace {

using nlohmann::json;

bool has_type(const json& v, std::string_view type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "null") return v.is_null();
  if (type == "number") return v.is_number();
  if (type == "integer") {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>()));
  }
  return false;
}

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& v, const json& s, const std::string& at) {
    if (s.contains("$ref")) {
      const std::string ref = s["$ref"].get<std::string>();
      const std::string prefix = "#/definitions/";
      if (ref.rfind(prefix, 0) != 0 || !root_.contains("definitions") ||
          !root_["definitions"].contains(ref.substr(prefix.size()))) {
        errors.push_back(at + ": unresolvable $ref " + ref);
        return;
      }
      check(v, root_["definitions"][ref.substr(prefix.size())], at);
      return;
    }
    if (s.contains("type")) {
      const auto& t = s["type"];
      bool ok = false;
      if (t.is_array()) {
        for (const auto& one : t) ok = ok || has_type(v, one.get<std::string>());
      } else {
        ok = has_type(v, t.get<std::string>());
      }
      if (!ok) {
        errors.push_back(at + ": expected type " + t.dump() + ", got " + v.type_name());
        return;
      }
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) errors.push_back(at + ": value " + v.dump() + " not in " + s["enum"].dump());
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>()) {
        errors.push_back(at + ": " + v.dump() + " is below the minimum " + s["minimum"].dump());
      }
      if (s.contains("maximum") && x > s["maximum"].get<double>()) {
        errors.push_back(at + ": " + v.dump() + " exceeds the maximum " + s["maximum"].dump());
      }
      if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
        errors.push_back(at + ": " + v.dump() + " must be greater than " + s["exclusiveMinimum"].dump());
      }
      if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) {
        errors.push_back(at + ": " + v.dump() + " must be less than " + s["exclusiveMaximum"].dump());
      }
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto& r : s["required"]) {
          if (!v.contains(r.get<std::string>())) errors.push_back(at + ": missing required property '" + r.get<std::string>() + "'");
        }
      }
      const json props = s.value("properties", json::object());
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (props.contains(it.key())) {
          check(it.value(), props[it.key()], at + "/" + it.key());
        } else if (s.contains("additionalProperties") && s["additionalProperties"].is_boolean() &&
                   !s["additionalProperties"].get<bool>()) {
          errors.push_back(at + ": unknown property '" + it.key() + "'");
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
        errors.push_back(at + ": expected at least " + s["minItems"].dump() + " items");
      }
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
        errors.push_back(at + ": expected at most " + s["maxItems"].dump() + " items");
      }
      if (s.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], at + "/" + std::to_string(i));
      }
    }
    if (s.contains("oneOf")) {
      int matched = 0;
      for (const auto& alt : s["oneOf"]) {
        Validator sub(root_);
        sub.check(v, alt, at);
        matched += sub.errors.empty() ? 1 : 0;
      }
      if (matched != 1) errors.push_back(at + ": must match exactly one alternative (matched " + std::to_string(matched) + ")");
    }
  }

  std::vector<std::string> errors;

 private:
  const json& root_;
};

}  // namespace

std::vector<std::string> validate_schema(const nlohmann::json& instance, const nlohmann::json& schema) {
  Validator v(schema);
  v.check(instance, schema, "");
  for (auto& e : v.errors) {
    if (e.front() == ':') e = "/" + e;
  }
  return v.errors;
}

void require_valid(const nlohmann::json& instance, const nlohmann::json& schema, std::string_view what) {
  const auto errors = validate_schema(instance, schema);
  if (errors.empty()) return;
  std::string msg = std::string(what) + " failed schema validation:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

const nlohmann::json& experiment_schema() {
  static const auto s = nlohmann::json::parse(embedded::kExperimentSchema);
  return s;
}

const nlohmann::json& grid_schema() {
  static const auto s = nlohmann::json::parse(embedded::kGridSchema);
  return s;
}

const nlohmann::json& report_schema() {
  static const auto s = nlohmann::json::parse(embedded::kReportSchema);
  return s;
}

}  // namespace birdtl
