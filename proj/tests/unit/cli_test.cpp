#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sparseflow/cli/commands.hpp"
#include "sparseflow/cli/config.hpp"

using namespace sparseflow::cli;
namespace fs = std::filesystem;

namespace {

// Fresh directory per test, removed afterwards.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("sparseflow_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& cmd, const Settings& flags, const std::string& sub, const Settings& file = {}) {
    log_.str("");
    return run_command(cmd, file, flags, dir_ / sub, log_);
  }

  nlohmann::json summary(const std::string& sub) const {
    std::ifstream in(dir_ / sub / "summary.json");
    return nlohmann::json::parse(in);
  }

  fs::path dir_;
  std::ostringstream log_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const Settings kTinyGrpo{{"iterations", "2"},     {"prompts_per_update", "2"}, {"hidden", "8"},
                         {"pretrain_steps", "5"}, {"eval_per_prompt", "2"},    {"pretrain_first", "true"}};

}  // namespace

TEST(Settings, ParsesCommentsAndWhitespace) {
  const auto s = parse_settings_text("# header\n  r = 4  # inline\n\nmode=cdf\nworkers = 1, 2\n");
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.at("r"), "4");
  EXPECT_EQ(s.at("mode"), "cdf");
  EXPECT_EQ(s.at("workers"), "1, 2");
}

TEST(Settings, RejectsMalformedLines) {
  EXPECT_THROW(parse_settings_text("r 4\n"), ConfigError);
  EXPECT_THROW(parse_settings_text(" = 4\n"), ConfigError);
  EXPECT_THROW(parse_settings_text("r = 1\nr = 2\n"), ConfigError);
}

TEST(Settings, PrecedenceAndUnknownKeys) {
  const Settings defaults{{"a", "1"}, {"b", "2"}, {"c", "3"}};
  const auto s = resolve_settings(defaults, {{"a", "10"}, {"b", "20"}}, {{"b", "200"}});
  EXPECT_EQ(s.at("a"), "10");
  EXPECT_EQ(s.at("b"), "200");
  EXPECT_EQ(s.at("c"), "3");
  EXPECT_THROW(resolve_settings(defaults, {{"z", "1"}}, {}), ConfigError);
  EXPECT_THROW(resolve_settings(defaults, {}, {{"z", "1"}}), ConfigError);
}

TEST(Settings, TypedAccessors) {
  Config c({{"n", "12"}, {"x", "2.5e-1"}, {"f", "yes"}, {"l", "1,2,4"}, {"w", "1, 0.5"}, {"bad", "3x"}, {"neg", "-1"}});
  EXPECT_EQ(c.count("n"), 12u);
  EXPECT_EQ(c.real("x"), 0.25);
  EXPECT_TRUE(c.flag("f"));
  EXPECT_EQ(c.counts("l"), (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(c.reals("w"), (std::vector<double>{1.0, 0.5}));
  EXPECT_THROW(c.real("bad"), ConfigError);
  EXPECT_THROW(c.count("neg"), ConfigError);
  EXPECT_THROW(c.flag("n"), ConfigError);
  EXPECT_THROW(c.text("missing"), ConfigError);
}

TEST(Settings, OutputRootFromEnvironment) {
  ::setenv("SPARSEFLOW_OUT", "/tmp/elsewhere", 1);
  EXPECT_EQ(default_output_root(), fs::path("/tmp/elsewhere"));
  ::unsetenv("SPARSEFLOW_OUT");
  EXPECT_EQ(default_output_root(), fs::path("runs"));
}

TEST(Commands, EveryCommandTakesASeed) {
  ASSERT_EQ(commands().size(), 4u);
  for (const auto& c : commands()) EXPECT_TRUE(c.defaults.count("seed")) << c.name;
  EXPECT_EQ(find_command("nope"), nullptr);
}

TEST_F(CliTest, UnknownCommandAndKeyAreConfigErrors) {
  EXPECT_EQ(run("nope", {}, "a"), kExitConfigError);
  EXPECT_EQ(run("refine-demo", {{"bogus", "1"}}, "b"), kExitConfigError);
  EXPECT_EQ(run("refine-demo", {}, "c", {{"bogus", "1"}}), kExitConfigError);
  EXPECT_FALSE(fs::exists(dir_ / "b" / "summary.json"));
}

TEST_F(CliTest, BsaCheckPassesAndWritesReport) {
  const Settings small{{"frames", "4"}, {"height", "8"}, {"width", "8"}, {"cases", "1"}, {"fd_cases", "1"}};
  ASSERT_EQ(run("bsa-check", small, "topr"), kExitPass) << log_.str();
  const auto s = summary("topr");
  EXPECT_EQ(s["schema_version"], kSchemaVersion);
  EXPECT_EQ(s["version"], artifact_version());
  EXPECT_EQ(s["command"], "bsa-check");
  EXPECT_EQ(s["seed"], 0);
  EXPECT_TRUE(s["passed"].get<bool>());
  EXPECT_GE(s["checks"].size(), 4u);
  EXPECT_TRUE(fs::exists(dir_ / "topr" / "cases.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "topr" / "fixtures" / "q.tensor"));

  std::ifstream in(dir_ / "topr" / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["config"]["frames"], "4");
  EXPECT_EQ(m["config"]["mode"], "topr");
}

TEST_F(CliTest, BsaCheckConfigErrors) {
  EXPECT_EQ(run("bsa-check", {{"r", "33"}}, "a"), kExitConfigError);
  EXPECT_NE(log_.str().find("RankOutOfRange"), std::string::npos);
  EXPECT_EQ(run("bsa-check", {{"mode", "cdf"}, {"p", "1.5"}}, "b"), kExitConfigError);
  EXPECT_EQ(run("bsa-check", {{"block_h", "5"}}, "c"), kExitConfigError);
  EXPECT_EQ(run("bsa-check", {{"mode", "dense"}}, "d"), kExitConfigError);
}

TEST_F(CliTest, BsaCheckCdfFullMass) {
  const Settings s{{"frames", "4"}, {"height", "8"}, {"width", "8"}, {"cases", "1"},
                   {"fd_cases", "1"}, {"mode", "cdf"},  {"p", "1"}};
  ASSERT_EQ(run("bsa-check", s, "a"), kExitPass) << log_.str();
  bool saw = false;
  const auto report = summary("a");
  for (const auto& c : report["checks"])
    if (c["name"] == "cdf_p1_full_selection") saw = c["passed"].get<bool>();
  EXPECT_TRUE(saw);
  EXPECT_EQ(summary("a")["metrics"]["selected_fraction"], 1.0);
}

TEST_F(CliTest, RingCheck) {
  const Settings small{{"frames", "4"}, {"height", "8"}, {"width", "8"}, {"workers", "1,2,4"}};
  ASSERT_EQ(run("ring-check", small, "a"), kExitPass) << log_.str();
  const auto report = summary("a");
  const auto& runs = report["metrics"]["runs"];
  ASSERT_EQ(runs.size(), 6u);
  for (const auto& r : runs) {
    const auto n = r["workers"].get<std::uint64_t>();
    EXPECT_EQ(r["pooled_messages"].get<std::uint64_t>(), n * (n - 1));
    EXPECT_EQ(r["counters"].size(), n);
  }
  EXPECT_EQ(run("ring-check", {{"workers", "3"}}, "b"), kExitConfigError);
  EXPECT_NE(log_.str().find("IndivisibleWorkers"), std::string::npos);
  EXPECT_EQ(run("ring-check", {{"execution", "threads"}}, "c"), kExitConfigError);
}

TEST_F(CliTest, RingCheckConstantInputsAreExact) {
  Settings s{{"frames", "4"}, {"height", "8"}, {"width", "8"}, {"constant", "true"}};
  ASSERT_EQ(run("ring-check", s, "a"), kExitPass) << log_.str();
  const auto report = summary("a");
  for (const auto& r : report["metrics"]["runs"]) EXPECT_EQ(r["max_abs_deviation"], 0.0);
}

TEST_F(CliTest, RefineDemoDefaultsAndVariants) {
  ASSERT_EQ(run("refine-demo", {}, "a"), kExitPass) << log_.str();
  EXPECT_TRUE(fs::exists(dir_ / "a" / "refined.tensor"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "residuals.csv"));
  EXPECT_EQ(run("refine-demo", {{"t_thresh", "1.0"}}, "b"), kExitPass) << log_.str();
  bool engaged = false;
  const auto report = summary("b");
  for (const auto& c : report["checks"]) engaged = engaged || c["name"] == "degeneracy_configured";
  EXPECT_TRUE(engaged);
  EXPECT_EQ(run("refine-demo", {{"steps", "1"}}, "c"), kExitPass) << log_.str();
  EXPECT_EQ(run("refine-demo", {{"condition_noise", "clean"}}, "d"), kExitPass) << log_.str();
  EXPECT_EQ(run("refine-demo", {{"cond_frames", "0"}}, "e"), kExitPass) << log_.str();
}

TEST_F(CliTest, RefineDemoConfigErrors) {
  EXPECT_EQ(run("refine-demo", {{"spatial_scale", "1.3"}}, "a"), kExitConfigError);
  EXPECT_EQ(run("refine-demo", {{"t_thresh", "0"}}, "b"), kExitConfigError);
  EXPECT_EQ(run("refine-demo", {{"steps", "0"}}, "c"), kExitConfigError);
  EXPECT_EQ(run("refine-demo", {{"condition_noise", "maybe"}}, "d"), kExitConfigError);
}

TEST_F(CliTest, GrpoTrainNeedsABase) {
  EXPECT_EQ(run("grpo-train", {{"iterations", "0"}}, "a"), kExitConfigError);
  EXPECT_EQ(run("grpo-train", {{"iterations", "0"}, {"base_checkpoint", (dir_ / "missing").string()}}, "b"),
            kExitConfigError);
  EXPECT_EQ(run("grpo-train", {{"pretrain_first", "true"}, {"variant", "bogus"}}, "c"), kExitConfigError);
  EXPECT_EQ(run("grpo-train", {{"pretrain_first", "true"}, {"reward_weights", "1,1"}}, "d"), kExitConfigError);
  EXPECT_EQ(run("grpo-train", {{"pretrain_first", "true"}, {"group_size", "1"}}, "e"), kExitConfigError);
}

TEST_F(CliTest, GrpoTrainZeroIterationsIsEvaluationOnly) {
  Settings s = kTinyGrpo;
  s["iterations"] = "0";
  ASSERT_EQ(run("grpo-train", s, "a"), kExitPass) << log_.str();
  const auto csv = slurp(dir_ / "a" / "curves" / "seed0_full.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST_F(CliTest, GrpoTrainFromCheckpointMatchesPretrainFirst) {
  ASSERT_EQ(run("grpo-train", kTinyGrpo, "a"), kExitPass) << log_.str();
  Settings s = kTinyGrpo;
  s.erase("pretrain_first");
  s["base_checkpoint"] = (dir_ / "a" / "checkpoints" / "seed0_base.tensor").string();
  ASSERT_EQ(run("grpo-train", s, "b"), kExitPass) << log_.str();
  EXPECT_EQ(slurp(dir_ / "a" / "curves" / "seed0_full.csv"), slurp(dir_ / "b" / "curves" / "seed0_full.csv"));

  s["hidden"] = "9";
  EXPECT_EQ(run("grpo-train", s, "c"), kExitConfigError);
}

TEST_F(CliTest, GrpoAcceptanceModeFailsWithoutTraining) {
  Settings s = kTinyGrpo;
  s["iterations"] = "0";
  s["acceptance"] = "true";
  s["seeds"] = "0,1";
  EXPECT_EQ(run("grpo-train", s, "a"), kExitCheckFailed) << log_.str();
  EXPECT_FALSE(summary("a")["passed"].get<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "a" / "curves" / "seed1_no-reweight.csv"));
}

TEST_F(CliTest, VariantNoneIsTheFullMethod) {
  Settings s = kTinyGrpo;
  s["variant"] = "none";
  ASSERT_EQ(run("grpo-train", s, "a"), kExitPass) << log_.str();
  ASSERT_EQ(run("grpo-train", kTinyGrpo, "b"), kExitPass) << log_.str();
  EXPECT_EQ(slurp(dir_ / "a" / "curves" / "seed0_full.csv"), slurp(dir_ / "b" / "curves" / "seed0_full.csv"));
}

TEST_F(CliTest, ReportsAreBitwiseDeterministic) {
  for (const auto& cmd : {"refine-demo", "ring-check"}) {
    ASSERT_EQ(run(cmd, {{"seed", "7"}}, std::string(cmd) + "_1"), kExitPass);
    ASSERT_EQ(run(cmd, {{"seed", "7"}}, std::string(cmd) + "_2"), kExitPass);
    for (const auto& e : fs::recursive_directory_iterator(dir_ / (std::string(cmd) + "_1"))) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir_ / (std::string(cmd) + "_1"));
      EXPECT_EQ(slurp(e.path()), slurp(dir_ / (std::string(cmd) + "_2") / rel)) << rel;
    }
  }
}

TEST_F(CliTest, CommandLineFrontEnd) {
  const auto out = (dir_ / "cli").string();
  const auto cfg = dir_ / "refine.cfg";
  std::ofstream(cfg) << "# two steps\nsteps = 2\nt_thresh = 0.25\n";
  const char* argv[] = {"sparseflow", "refine-demo", "--config", cfg.c_str(), "--t-thresh", "0.75", "--out", out.c_str()};
  EXPECT_EQ(cli_main(8, argv), kExitPass);
  std::ifstream in(dir_ / "cli" / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["config"]["steps"], "2");
  EXPECT_EQ(m["config"]["t_thresh"], "0.75");

  const auto out2 = (dir_ / "cli2").string();
  const char* flag_argv[] = {"sparseflow", "ring-check", "--constant", "--frames", "4",
                             "--height",   "8",          "--width",    "8",       "--out", out2.c_str()};
  EXPECT_EQ(cli_main(11, flag_argv), kExitPass);
  std::ifstream in2(dir_ / "cli2" / "manifest.json");
  EXPECT_EQ(nlohmann::json::parse(in2)["config"]["constant"], "true");

  const char* bad_flag[] = {"sparseflow", "refine-demo", "--nope", "1"};
  EXPECT_EQ(cli_main(4, bad_flag), kExitConfigError);
  const char* bad_file[] = {"sparseflow", "refine-demo", "--config", "/nonexistent/x.cfg"};
  EXPECT_EQ(cli_main(4, bad_file), kExitConfigError);
  const char* no_cmd[] = {"sparseflow"};
  EXPECT_EQ(cli_main(1, no_cmd), kExitConfigError);
}
