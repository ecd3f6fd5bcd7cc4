#include "settings.hpp"

#include <cmath>
#include <fstream>

#include "llts/errors.hpp"

namespace llts::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Settings::Settings(std::string command, std::vector<SettingSpec> specs)
    : command_(std::move(command)), specs_(std::move(specs)) {
  for (std::size_t i = 0; i < specs_.size(); ++i) index_[specs_[i].key] = i;
}

bool Settings::has(const std::string& key) const { return index_.count(key) > 0; }

void Settings::set(const std::string& key, const std::string& value, const std::string& origin) {
  auto it = index_.find(key);
  if (it == index_.end()) throw UsageError(origin + ": unknown setting '" + key + "' for '" + command_ + "'");
  specs_[it->second].value = value;
}

void Settings::load_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string origin = path.string() + ":" + std::to_string(lineno);
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(origin + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(origin + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(origin + ": empty key");
    set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)), origin);
  }
}

void Settings::load_run_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  if (!j.contains("command") || !j.contains("settings") || !j["settings"].is_object())
    throw UsageError(path.string() + ": not a run.json (needs \"command\" and \"settings\")");
  if (j["command"] != command_)
    throw UsageError(path.string() + " records a '" + j["command"].get<std::string>() + "' run, not '" + command_ + "'");
  for (const auto& [key, v] : j["settings"].items()) {
    if (!v.is_string()) throw UsageError(path.string() + ": setting '" + key + "' must be a string");
    set(key, v.get<std::string>(), path.string());
  }
}

void Settings::load_file(const std::filesystem::path& path) {
  if (path.extension() == ".json")
    load_run_json(path);
  else
    load_ini(path);
}

const std::string& Settings::str(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw std::logic_error("undeclared setting " + key);
  return specs_[it->second].value;
}

double Settings::real(const std::string& key) const {
  const std::string& s = str(key);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(v))
    throw UsageError("setting " + key + " = '" + s + "' is not a finite number");
  return v;
}

std::uint64_t Settings::u64(const std::string& key) const {
  const std::string& s = str(key);
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    if (!s.empty() && s[0] != '-') v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw UsageError("setting " + key + " = '" + s + "' is not a non-negative integer");
  return v;
}

std::size_t Settings::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool Settings::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("setting " + key + " = '" + s + "' is not a boolean");
}

nlohmann::ordered_json Settings::to_json() const {
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const SettingSpec& spec : specs_) s[spec.key] = spec.value;
  return {{"command", command_}, {"settings", s}};
}

}  // namespace llts::cli
