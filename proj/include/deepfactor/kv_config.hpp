#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <string>

namespace deepfactor {

/// Flat `key = value` text; '#' starts a comment, blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<text>");
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);

int kv_int(const KeyValues& kv, const std::string& key, int fallback);
std::uint64_t kv_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

}  // namespace deepfactor
