#include "sparseflow/cli/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sparseflow/core/error.hpp"
#include "sparseflow/core/tensor_io.hpp"

#ifndef SPARSEFLOW_VERSION
#define SPARSEFLOW_VERSION "0.0.0"
#endif

namespace sparseflow::cli {

namespace fs = std::filesystem;

std::string artifact_version() { return SPARSEFLOW_VERSION; }

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

// JSON has no inf/nan; keep them visible as strings.
Json real_json(double x) {
  if (std::isfinite(x)) return x;
  return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace

Report::Report(std::string command, std::uint64_t seed, fs::path out_dir, Settings resolved)
    : command_(std::move(command)), seed_(seed), out_dir_(std::move(out_dir)), resolved_(std::move(resolved)) {}

void Report::check(const std::string& name, bool passed, double value, double tolerance) {
  checks_.push_back(Json{{"name", name}, {"passed", passed}, {"value", real_json(value)},
                         {"tolerance", real_json(tolerance)}});
}

void Report::check(const std::string& name, bool passed) {
  checks_.push_back(Json{{"name", name}, {"passed", passed}, {"value", nullptr}, {"tolerance", nullptr}});
}

void Report::write_text(const std::string& relpath, const std::string& content) {
  write_file(out_dir_ / relpath, content);
  artifacts_.push_back(relpath);
}

void Report::write_tensor(const std::string& relpath, const Tensor& t) {
  fs::create_directories((out_dir_ / relpath).parent_path());
  save_tensor(out_dir_ / relpath, t);
  artifacts_.push_back(relpath);
}

bool Report::passed() const {
  for (const auto& c : checks_)
    if (!c["passed"].get<bool>()) return false;
  return true;
}

int Report::finish() {
  const bool ok = passed();
  Json summary{{"schema_version", kSchemaVersion}, {"version", artifact_version()}, {"command", command_},
               {"seed", seed_},  {"checks", checks_},  {"metrics", metrics_},
               {"passed", ok}};
  Json config = Json::object();
  for (const auto& [k, v] : resolved_) config[k] = v;
  Json manifest{{"schema_version", kSchemaVersion}, {"version", artifact_version()}, {"command", command_},
                {"seed", seed_}, {"config", config}, {"artifacts", artifacts_}};
  write_file(out_dir_ / "summary.json", summary.dump(2) + "\n");
  write_file(out_dir_ / "manifest.json", manifest.dump(2) + "\n");
  return ok ? kExitPass : kExitCheckFailed;
}

}  // namespace sparseflow::cli
