#include "gazekit/json_writer.hpp"

#include <cmath>
#include <cstdio>

namespace gazekit {
namespace {

std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s(buf);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

void write(const nlohmann::json& v, int indent, int depth, std::string& out) {
  const std::string pad = indent >= 0 ? std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close_pad = indent >= 0 ? std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
  const char* nl = indent >= 0 ? "\n" : "";
  switch (v.type()) {
    case nlohmann::json::value_t::object: {
      if (v.empty()) {
        out += "{}";
        return;
      }
      out += "{";
      out += nl;
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) {
          out += ",";
          out += nl;
        }
        first = false;
        out += pad + nlohmann::json(it.key()).dump() + (indent >= 0 ? ": " : ":");
        write(it.value(), indent, depth + 1, out);
      }
      out += nl + close_pad + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (v.empty()) {
        out += "[]";
        return;
      }
      out += "[";
      out += nl;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) {
          out += ",";
          out += nl;
        }
        out += pad;
        write(v[i], indent, depth + 1, out);
      }
      out += nl + close_pad + "]";
      return;
    }
    case nlohmann::json::value_t::number_float:
      out += format_double(v.get<double>());
      return;
    default:
      out += v.dump();
      return;
  }
}

}  // namespace

std::string dump_json(const nlohmann::json& value, int indent) {
  std::string out;
  write(value, indent, 0, out);
  out += "\n";
  return out;
}

}  // namespace gazekit
