#include "text_table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"

namespace deepfactor::detail {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(delim, start);
    if (end == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) {
    return false;
  }
  if (text.front() == '+') {
    text.remove_prefix(1);
  }
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string format_double(double value) {
  if (std::isnan(value)) {
    return {};
  }
  return fmt::format("{}", value);
}

LineReader::LineReader(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open {}", path.string()));
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  content_ = buf.str();
  if (content_.size() >= 3 && static_cast<unsigned char>(content_[0]) == 0xEF &&
      static_cast<unsigned char>(content_[1]) == 0xBB &&
      static_cast<unsigned char>(content_[2]) == 0xBF) {
    pos_ = 3;
  }
}

bool LineReader::next(std::string& line) {
  while (pos_ < content_.size()) {
    std::size_t end = content_.find('\n', pos_);
    if (end == std::string::npos) {
      end = content_.size();
    }
    line.assign(content_, pos_, end - pos_);
    pos_ = end + 1;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (!trim(line).empty()) {
      return true;
    }
  }
  return false;
}

std::string LineReader::where() const {
  return fmt::format("{}:{}", path_.string(), line_no_);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(fmt::format("cannot write {}", path.string()));
  }
  out << content;
  if (!out) {
    throw DataError(fmt::format("write failed for {}", path.string()));
  }
}

}  // namespace deepfactor::detail
