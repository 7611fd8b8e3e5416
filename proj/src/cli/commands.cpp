#include "sparseflow/cli/commands.hpp"

#include <algorithm>
#include <iostream>

#include "CLI11.hpp"
#include "sparseflow/core/error.hpp"

namespace sparseflow::cli {

namespace fs = std::filesystem;

const std::vector<Command>& commands() {
  static const std::vector<Command> all{bsa_check_command(), ring_check_command(), grpo_train_command(),
                                        refine_demo_command()};
  return all;
}

const Command* find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

bool is_boolean(const std::string& v) { return v == "true" || v == "false"; }

}  // namespace

int run_command(const std::string& name, const Settings& file, const Settings& flags, const fs::path& out_dir,
                std::ostream& log) {
  const Command* cmd = find_command(name);
  if (!cmd) {
    log << "error: unknown command '" << name << "'\n";
    return kExitConfigError;
  }
  Execute execute;
  Settings resolved;
  std::uint64_t seed = 0;
  try {
    resolved = resolve_settings(cmd->defaults, file, flags);
    Config config(resolved);
    seed = config.seed("seed");
    execute = cmd->prepare(config);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const Error& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }

  Report report(name, seed, out_dir, resolved);
  try {
    execute(report, log);
  } catch (const Error& e) {
    log << "run failed: " << e.what() << "\n";
    report.check("completed", false);
  }
  const int code = report.finish();
  for (const auto& c : report.checks())
    log << (c["passed"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>() << "\n";
  log << (code == kExitPass ? "all checks passed" : "some checks failed") << " -> " << out_dir.string() << "\n";
  return code;
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"sparseflow: block-sparse attention, ring context parallel, flow GRPO and refinement checks"};
  app.set_version_flag("--version", artifact_version());
  app.require_subcommand(1);

  struct Bound {
    std::string config_path, out;
    Settings values;
    std::map<std::string, CLI::Option*> options;
    std::map<std::string, bool> switches;
  };
  std::map<std::string, Bound> bound;

  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    auto& b = bound[cmd.name];
    sub->add_option("--config", b.config_path, "flat key = value settings file");
    sub->add_option("--out", b.out, "output directory (default: $SPARSEFLOW_OUT or ./runs, plus the command name)");
    for (const auto& [key, def] : cmd.defaults) {
      if (is_boolean(def)) {
        b.switches[key] = def == "true";
        b.options[key] = sub->add_flag(flag_name(key) + ",!--no-" + flag_name(key).substr(2), b.switches[key],
                                       "default " + def);
      } else {
        b.options[key] = sub->add_option(flag_name(key), b.values[key], "default " + def);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfigError;
  }

  for (const auto* sub : app.get_subcommands()) {
    const std::string name = sub->get_name();
    auto& b = bound[name];
    Settings flags;
    for (const auto& [key, opt] : b.options)
      if (opt->count() > 0) flags[key] = b.switches.count(key) ? (b.switches[key] ? "true" : "false") : b.values[key];
    Settings file;
    try {
      if (!b.config_path.empty()) file = load_settings_file(b.config_path);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitConfigError;
    }
    const fs::path out = b.out.empty() ? default_output_root() / name : fs::path(b.out);
    return run_command(name, file, flags, out, std::cerr);
  }
  return kExitConfigError;
}

}  // namespace sparseflow::cli
