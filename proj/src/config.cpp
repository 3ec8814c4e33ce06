// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "mamfusion/errors.hpp"

namespace mamfusion {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& text) {
  if (text == "inf" || text == "infinity" || text == "INF") return std::numeric_limits<double>::infinity();
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || std::isnan(v)) {
    throw ConfigError("key '" + key + "': '" + text + "' is not a real number");
  }
  return v;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string* KeyValueReader::take(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

void KeyValueReader::read(const std::string& key, std::size_t& out) {
  const std::string* v = take(key);
  if (!v) return;
  std::size_t parsed = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
  if (ec != std::errc() || ptr != v->data() + v->size() || v->empty()) {
    throw ConfigError("key '" + key + "': '" + *v + "' is not a nonnegative integer");
  }
  out = parsed;
}

void KeyValueReader::read(const std::string& key, double& out) {
  if (const std::string* v = take(key)) out = parse_real(key, *v);
}

void KeyValueReader::read(const std::string& key, bool& out) {
  const std::string* v = take(key);
  if (!v) return;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") {
    out = true;
  } else if (*v == "false" || *v == "0" || *v == "no" || *v == "off") {
    out = false;
  } else {
    throw ConfigError("key '" + key + "': '" + *v + "' is not a boolean");
  }
}

void KeyValueReader::read(const std::string& key, std::string& out) {
  if (const std::string* v = take(key)) out = *v;
}

void KeyValueReader::read(const std::string& key, std::vector<double>& out) {
  const std::string* v = take(key);
  if (!v) return;
  std::vector<double> parsed;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) parsed.push_back(parse_real(key, trim(item)));
  if (parsed.empty()) throw ConfigError("key '" + key + "': empty list");
  out = std::move(parsed);
}

void KeyValueReader::finish() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
  }
}

std::string format_double_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if (std::isinf(values[i])) {
      out += "inf";
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      out += buf;
    }
  }
  return out;
}

}  // namespace mamfusion
