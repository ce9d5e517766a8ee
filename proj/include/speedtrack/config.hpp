#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace speedtrack::config {

/// Ordered so that snapshots print the same way every run.
using KeyValues = std::map<std::string, std::string>;

/// `key = value` per line. Blank lines and lines starting with '#' are
/// skipped; a repeated key keeps the last value. Malformed lines raise
/// FormatError with the line number.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// "lr0" → "SPEEDTRACK_LR0", "fixed-kf" → "SPEEDTRACK_FIXED_KF".
std::string env_name(std::string_view key);

/// Value of the matching SPEEDTRACK_* variable, if set.
std::optional<std::string> env_value(std::string_view key);

/// env, then file, else nothing. Flags are resolved by the caller first.
std::optional<std::string> lookup(std::string_view key, const KeyValues& file);

}  // namespace speedtrack::config
