#include "deepfactor/kv_config.hpp"

#include <charconv>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(fmt::format("{}:{}: expected key = value", origin, line_no));
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw UsageError(fmt::format("{}:{}: empty key", origin, line_no));
    }
    out[std::string(key)] = std::string(value);
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  detail::LineReader reader(path);
  std::string text;
  std::string line;
  while (reader.next(line)) {
    text += line;
    text += '\n';
  }
  return parse_key_values(text, path.string());
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

int kv_int(const KeyValues& kv, const std::string& key, int fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  int v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(fmt::format("config key '{}': '{}' is not an integer", key, s));
  }
  return v;
}

std::uint64_t kv_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError(fmt::format("config key '{}': '{}' is not a non-negative integer", key, s));
  }
  return v;
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  double v = 0.0;
  if (!detail::parse_double(it->second, v)) {
    throw UsageError(fmt::format("config key '{}': '{}' is not a number", key, it->second));
  }
  return v;
}

std::string kv_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

}  // namespace deepfactor
