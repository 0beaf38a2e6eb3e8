#pragma once

#include <string>
#include <vector>

#include "model/common.hpp"

namespace flowvid {

// Flat key=value run configuration: registry of known keys with defaults,
// merged from an optional config file and then command-line overrides.
// Unknown keys are errors and name the nearest valid key.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);  // throws on unknown key
  void apply_overrides(const std::vector<std::string>& key_equals_value);

  int get_int(const std::string& key) const;
  long get_long(const std::string& key) const;
  float get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  // Writes every key with its resolved value; feeding the file back in
  // reproduces the run.
  void write_resolved(const std::string& path) const;
  std::string help_text() const;

  ModelConfig model_config() const;

 private:
  struct Entry {
    std::string key, value, help;
  };
  const Entry* find(const std::string& key) const;
  Entry* find(const std::string& key);
  std::vector<Entry> entries_;
};

// Smallest edit distance helper for typo suggestions.
std::string nearest_key(const std::string& key, const std::vector<std::string>& known);

}  // namespace flowvid
