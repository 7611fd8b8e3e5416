#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparseflow::cli {

enum ExitCode : int { kExitPass = 0, kExitCheckFailed = 1, kExitConfigError = 2 };

// Raised for anything that should end a run with exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Settings = std::map<std::string, std::string>;

// Flat "key = value" lines; '#' starts a comment. Duplicate keys are errors.
Settings parse_settings_text(const std::string& text);
Settings load_settings_file(const std::filesystem::path& path);

// defaults <- file <- flags. Keys absent from `defaults` are rejected.
Settings resolve_settings(const Settings& defaults, const Settings& file, const Settings& flags);

// Typed view over resolved settings.
class Config {
 public:
  explicit Config(Settings settings) : settings_(std::move(settings)) {}

  const Settings& settings() const { return settings_; }
  const std::string& text(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;  // comma separated
  std::vector<double> reals(const std::string& key) const;

 private:
  Settings settings_;
};

// $SPARSEFLOW_OUT when set, otherwise ./runs.
std::filesystem::path default_output_root();

}  // namespace sparseflow::cli
