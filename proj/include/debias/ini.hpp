#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace debias {

// Flat key-value text with [section] headers. Sections may repeat (one
// [spec] per bias task, one [cell] per generator cell); order is preserved.
// '#' and ';' start comments. Keys before any header land in section "".
struct IniSection {
  std::string name;
  std::size_t line = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> get(std::string_view key) const;
  // Throws ParseError naming the section when the key is absent.
  std::string require(std::string_view key) const;
  void set(std::string key, std::string value);
};

struct IniDocument {
  std::vector<IniSection> sections;

  const IniSection* find(std::string_view name) const;
  std::vector<const IniSection*> all(std::string_view name) const;
};

IniDocument parse_ini(std::string_view text);
IniDocument read_ini(const std::filesystem::path& path);

// Helpers shared by every text format in the project.
std::string trim(std::string_view s);
std::vector<std::string> split_list(std::string_view s, char sep = ',');
double parse_double(std::string_view s, std::size_t line);
long long parse_int(std::string_view s, std::size_t line);
std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);

}  // namespace debias
