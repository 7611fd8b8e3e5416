#include "sparseflow/cli/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sparseflow::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x))
    throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  return x;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' is out of range: '" + v + "'");
  }
}

}  // namespace

Settings parse_settings_text(const std::string& text) {
  Settings out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, trim(line.substr(eq + 1))).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return out;
}

Settings load_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_settings_text(ss.str());
}

Settings resolve_settings(const Settings& defaults, const Settings& file, const Settings& flags) {
  Settings out = defaults;
  for (const auto* layer : {&file, &flags})
    for (const auto& [k, v] : *layer) {
      if (!defaults.count(k)) throw ConfigError("unknown setting '" + k + "'");
      out[k] = v;
    }
  return out;
}

const std::string& Config::text(const std::string& key) const {
  const auto it = settings_.find(key);
  if (it == settings_.end()) throw ConfigError("missing setting '" + key + "'");
  return it->second;
}

double Config::real(const std::string& key) const { return parse_real(key, text(key)); }

std::size_t Config::count(const std::string& key) const { return parse_unsigned(key, text(key)); }

std::uint64_t Config::seed(const std::string& key) const { return parse_unsigned(key, text(key)); }

bool Config::flag(const std::string& key) const {
  const auto& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::size_t> Config::counts(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text(key))) out.push_back(parse_unsigned(key, item));
  return out;
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(text(key))) out.push_back(parse_real(key, item));
  return out;
}

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("SPARSEFLOW_OUT"); env && *env) return env;
  return "runs";
}

}  // namespace sparseflow::cli
