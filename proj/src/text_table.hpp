#pragma once

// Small helpers for the comma-delimited text formats used by the dataset files.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deepfactor::detail {

std::vector<std::string_view> split_fields(std::string_view line, char delim = ',');
std::string_view trim(std::string_view s);

/// Parses a finite double; returns false on any trailing garbage.
bool parse_double(std::string_view text, double& out);

/// Shortest representation that reads back to the same double; NaN prints empty.
std::string format_double(double value);

struct LineReader {
  explicit LineReader(const std::filesystem::path& path);

  bool next(std::string& line);
  std::size_t line_number() const { return line_no_; }
  const std::filesystem::path& path() const { return path_; }
  std::string where() const;

 private:
  std::filesystem::path path_;
  std::string content_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace deepfactor::detail
