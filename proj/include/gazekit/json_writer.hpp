#pragma once

#include <json.hpp>
#include <string>

namespace gazekit {

// Serializes like nlohmann::json::dump(indent) except that floating-point
// numbers are printed with 17 significant digits ("%.17g"), and non-finite
// numbers become null. Object keys come out sorted.
std::string dump_json(const nlohmann::json& value, int indent = 2);

}  // namespace gazekit
