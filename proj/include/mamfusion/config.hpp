// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mamfusion {

// "key = value" lines; '#' starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Typed view over parsed key=value pairs. Each getter marks its key as
/// consumed; finish() rejects whatever was left over.
class KeyValueReader {
 public:
  explicit KeyValueReader(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  void read(const std::string& key, std::size_t& out);
  void read(const std::string& key, double& out);
  void read(const std::string& key, bool& out);
  void read(const std::string& key, std::string& out);
  // Comma-separated reals; "inf" denotes infinity.
  void read(const std::string& key, std::vector<double>& out);

  void finish() const;

 private:
  const std::string* take(const std::string& key);

  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

std::string format_double_list(const std::vector<double>& values);

}  // namespace mamfusion
