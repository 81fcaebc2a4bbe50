#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace pmvs {

// One `key = value` line of a text config. '#' starts a comment.
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// Throws ConfigError on lines without '='.
std::vector<ConfigEntry> parse_key_values(const std::string& text);

std::vector<std::string> split_words(const std::string& text);

// Locale-independent number parsing; ConfigError mentions `what`.
double to_double(const std::string& token, const std::string& what);
long long to_integer(const std::string& token, const std::string& what);
bool to_bool(const std::string& token, const std::string& what);

Eigen::Vector3d to_vector3(const std::vector<std::string>& words,
                           std::size_t first, const std::string& what);

// Shortest representation that parses back to the same double.
std::string format_number(double value);

std::string read_text_file(const std::string& path);

}  // namespace pmvs
