#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace llts::cli {

struct SettingSpec {
  std::string key;  // "section.name" or a bare top-level name
  std::string value;  // default; empty can mean "resolved later"
  std::string help;
};

/// Flat key/value settings for one subcommand. Only declared keys may be set;
/// anything else is a UsageError naming the key and where it came from.
class Settings {
 public:
  Settings(std::string command, std::vector<SettingSpec> specs);

  const std::string& command() const { return command_; }
  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value, const std::string& origin);

  /// "key = value" lines, "[section]" headers prefixing later keys with
  /// "section.", and '#' or ';' comments.
  void load_ini(const std::filesystem::path& path);
  /// A run.json written by an earlier run of the same command.
  void load_run_json(const std::filesystem::path& path);
  /// Dispatches on the extension: .json is a frozen run, anything else INI.
  void load_file(const std::filesystem::path& path);

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// {"command": ..., "settings": {key: value, ...}} in declaration order.
  nlohmann::ordered_json to_json() const;
  const std::vector<SettingSpec>& specs() const { return specs_; }

 private:
  std::string command_;
  std::vector<SettingSpec> specs_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace llts::cli
