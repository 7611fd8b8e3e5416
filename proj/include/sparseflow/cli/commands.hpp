#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparseflow/cli/config.hpp"
#include "sparseflow/cli/report.hpp"

namespace sparseflow::cli {

// Work left to do once a config has been validated.
using Execute = std::function<void(Report&, std::ostream& log)>;

struct Command {
  std::string name;
  std::string help;
  Settings defaults;  // every accepted key, with its default; always has "seed"
  // Validates the config and returns the run. Any error here is exit 2.
  std::function<Execute(const Config&)> prepare;
};

const std::vector<Command>& commands();
const Command* find_command(const std::string& name);

Command bsa_check_command();
Command ring_check_command();
Command grpo_train_command();
Command refine_demo_command();

// Resolves defaults <- file <- flags, runs the command into out_dir and
// returns the exit code. Diagnostics go to `log`.
int run_command(const std::string& name, const Settings& file, const Settings& flags,
                const std::filesystem::path& out_dir, std::ostream& log);

// Full command line front end.
int cli_main(int argc, const char* const* argv);

}  // namespace sparseflow::cli
