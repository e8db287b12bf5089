#include "foliacert/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "foliacert/cocycle.hpp"

namespace foliacert {

Json with_provenance(double value, const std::string& provenance) {
  Json j;
  j["value"] = value;
  j["provenance"] = provenance;
  return j;
}

namespace {

std::string number_text(const Json& j) {
  if (j.is_number_integer() || j.is_number_unsigned()) return j.dump();
  const double v = j.get<double>();
  if (std::isnan(v)) return "\"nan\"";
  if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
  return format_double(v);
}

void write(std::ostream& os, const Json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  if (j.is_object()) {
    if (j.empty()) {
      os << "{}";
      return;
    }
    os << "{\n";
    bool first = true;
    for (const auto& [k, v] : j.items()) {
      if (!first) os << ",\n";
      first = false;
      os << pad << Json(k).dump() << ": ";
      write(os, v, indent, depth + 1);
    }
    os << "\n" << close << "}";
  } else if (j.is_array()) {
    if (j.empty()) {
      os << "[]";
      return;
    }
    // short numeric arrays stay on one line
    const bool flat = j.size() <= 12 && std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
    if (flat) {
      os << "[";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ", ";
        write(os, j[i], indent, depth + 1);
      }
      os << "]";
      return;
    }
    os << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) os << ",\n";
      os << pad;
      write(os, j[i], indent, depth + 1);
    }
    os << "\n" << close << "]";
  } else if (j.is_number()) {
    os << number_text(j);
  } else {
    os << j.dump();
  }
}

void flatten(std::ostream& os, const Json& j, const std::string& path) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(os, v, path.empty() ? k : path + "." + k);
  } else if (j.is_array() && !std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); })) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(os, j[i], path + "[" + std::to_string(i) + "]");
  } else {
    os << path << " = ";
    if (j.is_string()) {
      os << j.get<std::string>();
    } else {
      write(os, j, 0, 0);
    }
    os << "\n";
  }
}

}  // namespace

void write_json(std::ostream& os, const Json& j, int indent) {
  write(os, j, indent, 0);
  os << "\n";
}

std::string to_json_text(const Json& j) {
  std::ostringstream os;
  write_json(os, j);
  return os.str();
}

std::string to_text(const Json& j) {
  std::ostringstream os;
  flatten(os, j, "");
  return os.str();
}

}  // namespace foliacert
