#include "pmvs/config_text.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pmvs/error.h"

namespace pmvs {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<ConfigEntry> parse_key_values(const std::string& text) {
  std::vector<ConfigEntry> entries;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string content = trim(raw.substr(0, raw.find('#')));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    }
    entries.push_back({trim(content.substr(0, eq)), trim(content.substr(eq + 1)), line});
  }
  return entries;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

double to_double(const std::string& token, const std::string& what) {
  double value = 0.0;
  const char* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(what + ": bad number '" + token + "'");
  }
  return value;
}

long long to_integer(const std::string& token, const std::string& what) {
  long long value = 0;
  const char* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(what + ": bad integer '" + token + "'");
  }
  return value;
}

bool to_bool(const std::string& token, const std::string& what) {
  if (token == "1" || token == "true" || token == "on" || token == "yes") return true;
  if (token == "0" || token == "false" || token == "off" || token == "no") return false;
  throw ConfigError(what + ": bad boolean '" + token + "'");
}

Eigen::Vector3d to_vector3(const std::vector<std::string>& words,
                           std::size_t first, const std::string& what) {
  if (words.size() < first + 3) throw ConfigError(what + ": expected three numbers");
  return {to_double(words[first], what), to_double(words[first + 1], what),
          to_double(words[first + 2], what)};
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace pmvs
