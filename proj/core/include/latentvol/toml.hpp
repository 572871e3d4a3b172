#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

namespace latentvol::toml {

/// Parses the TOML subset used by experiment configs into a JSON object:
/// `[table]` and `[dotted.table]` headers, `key = value` lines (dotted keys
/// allowed), basic strings, integers, floats, booleans, single-line arrays of
/// those, and `#` comments. Throws ConfigError with a line number otherwise.
nlohmann::json parse(std::string_view text);

/// Parses a single value in the same grammar. With `allow_bare`, text that is
/// not a valid value is returned as a string (for command-line overrides).
nlohmann::json parse_value(std::string_view text, bool allow_bare = false);

/// Writes a JSON object as TOML: scalars and arrays first, then one table per
/// nested object. parse(dump(j)) == j for any object built from the subset.
std::string dump(const nlohmann::json& object);

}  // namespace latentvol::toml
