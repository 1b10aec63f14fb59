#pragma once

// Flat run configuration: one `key = value` per line, '#' starts a comment,
// blank lines ignored. Command-line --set K=V overrides win over the file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtpet::cli {

class RunConfig {
 public:
  static RunConfig parse(std::string_view text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  // "key=value"; throws kUsage when malformed.
  void set_override(std::string_view assignment);
  void set(const std::string& key, std::string value);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<std::uint64_t> get_seed_list(const std::string& key) const;

  // Relative paths resolve against the config file's directory.
  std::filesystem::path path(const std::string& key) const;
  std::optional<std::filesystem::path> optional_path(const std::string& key) const;
  // Same, and throws kNotFound naming the key when the path does not exist.
  std::filesystem::path existing_path(const std::string& key) const;

  // Throws kConfig naming the first key not in the documented set.
  void check_known_keys() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::filesystem::path& base_dir() const { return base_dir_; }

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

// Every documented key, sorted.
const std::vector<std::string>& known_keys();

}  // namespace mtpet::cli
