#pragma once

// Validator for the JSON Schema keywords the API document uses: type, enum,
// required, properties, additionalProperties: false, items, minItems,
// maxItems, minimum, maximum and local $ref.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace marionette::testing {

class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json root) : root_(std::move(root)) {}

  static SchemaValidator load(const std::string& path) {
    std::ifstream in(path);
    return SchemaValidator(nlohmann::json::parse(in));
  }

  // Problems found validating `value` against definitions/<name>.
  std::vector<std::string> validate(const nlohmann::json& value, const std::string& definition) const {
    std::vector<std::string> errors;
    check(value, root_.at("definitions").at(definition), "$", errors);
    return errors;
  }

 private:
  static bool has_type(const nlohmann::json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    return false;
  }

  void check(const nlohmann::json& v, const nlohmann::json& schema, const std::string& at,
             std::vector<std::string>& errors) const {
    if (schema.contains("$ref")) {
      const auto ref = schema["$ref"].get<std::string>();
      const std::string prefix = "#/definitions/";
      check(v, root_.at("definitions").at(ref.substr(prefix.size())), at, errors);
      return;
    }
    if (schema.contains("type")) {
      bool ok = false;
      if (schema["type"].is_array()) {
        for (const auto& t : schema["type"]) ok = ok || has_type(v, t.get<std::string>());
      } else {
        ok = has_type(v, schema["type"].get<std::string>());
      }
      if (!ok) {
        errors.push_back(at + ": expected type " + schema["type"].dump() + ", got " + v.type_name());
        return;
      }
    }
    if (schema.contains("enum")) {
      bool found = false;
      for (const auto& e : schema["enum"]) found = found || e == v;
      if (!found) errors.push_back(at + ": " + v.dump() + " not in " + schema["enum"].dump());
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (schema.contains("minimum") && x < schema["minimum"].get<double>()) errors.push_back(at + ": below minimum");
      if (schema.contains("maximum") && x > schema["maximum"].get<double>()) errors.push_back(at + ": above maximum");
    }
    if (v.is_object()) {
      if (schema.contains("required")) {
        for (const auto& key : schema["required"]) {
          if (!v.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.get<std::string>());
        }
      }
      const auto props = schema.value("properties", nlohmann::json::object());
      for (const auto& [key, child] : v.items()) {
        if (props.contains(key)) {
          check(child, props[key], at + "." + key, errors);
        } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
          errors.push_back(at + ": unexpected property " + key);
        }
      }
    }
    if (v.is_array()) {
      if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) {
        errors.push_back(at + ": fewer than " + schema["minItems"].dump() + " items");
      }
      if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>()) {
        errors.push_back(at + ": more than " + schema["maxItems"].dump() + " items");
      }
      if (schema.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], schema["items"], at + "[" + std::to_string(i) + "]", errors);
      }
    }
  }

  nlohmann::json root_;
};

}  // namespace marionette::testing
