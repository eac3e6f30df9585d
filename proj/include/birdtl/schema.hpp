#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace birdtl {

// Validator for the JSON-Schema subset used by the published schemas: type,
// properties, required, additionalProperties (bool), enum, minimum, maximum,
// exclusiveMinimum, exclusiveMaximum, items, minItems, maxItems, oneOf, $ref to
// "#/definitions/...". Returns one message per violation, prefixed by a JSON pointer.
std::vector<std::string> validate_schema(const nlohmann::json& instance, const nlohmann::json& schema);

// Throws ConfigError listing every violation.
void require_valid(const nlohmann::json& instance, const nlohmann::json& schema, std::string_view what);

const nlohmann::json& experiment_schema();
const nlohmann::json& grid_schema();
const nlohmann::json& report_schema();

}  // namespace birdtl
