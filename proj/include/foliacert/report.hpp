#pragma once

#include <ostream>
#include <string>

#include "json.hpp"

namespace foliacert {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.3.0";
inline constexpr const char* kConditional = "CERTIFIED-CONDITIONAL";
inline constexpr const char* kEmpirical = "EMPIRICAL";
inline constexpr const char* kConditionality =
    "conditional on the attractor being a sectional hyperbolic attractor; the hypotheses "
    "themselves are not verified here";

/// {"value": v, "provenance": p}
Json with_provenance(double value, const std::string& provenance);

/// JSON with keys in insertion order and every float printed with 17 significant digits.
/// Non-finite floats are written as the strings "inf", "-inf" and "nan".
void write_json(std::ostream& os, const Json& j, int indent = 2);
std::string to_json_text(const Json& j);

/// Flat "path = value" lines mirroring the JSON tree.
std::string to_text(const Json& j);

}  // namespace foliacert
