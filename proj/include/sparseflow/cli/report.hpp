#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparseflow/cli/config.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::cli {

inline constexpr int kSchemaVersion = 1;
std::string artifact_version();

using Json = nlohmann::ordered_json;

// Collects checks, metrics and artifacts for one command run. Nothing here
// depends on wall time, so reports are byte-stable under a fixed seed.
class Report {
 public:
  Report(std::string command, std::uint64_t seed, std::filesystem::path out_dir, Settings resolved);

  // A check passes iff `passed`; value/tolerance are recorded for the reader.
  void check(const std::string& name, bool passed, double value, double tolerance);
  void check(const std::string& name, bool passed);
  void metric(const std::string& key, Json value) { metrics_[key] = std::move(value); }

  void write_text(const std::string& relpath, const std::string& content);
  void write_tensor(const std::string& relpath, const Tensor& t);

  bool passed() const;
  const Json& checks() const { return checks_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

  // Writes summary.json and manifest.json; returns the exit code.
  int finish();

 private:
  std::string command_;
  std::uint64_t seed_;
  std::filesystem::path out_dir_;
  Settings resolved_;
  Json checks_ = Json::array();
  Json metrics_ = Json::object();
  std::vector<std::string> artifacts_;
};

// %.17g, so values round-trip exactly through text.
std::string format_real(double x);

}  // namespace sparseflow::cli
