#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DEEPFACTOR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train"), 1);
  EXPECT_EQ(run("train --out /tmp/deepfactor_cli_x --data /nonexistent/deepfactor"), 1);
  EXPECT_EQ(run("simulate --out /tmp/deepfactor_cli_x --firms 10"), 1);
}

TEST(Cli, SimulateThenCorruptDataExitsWithTwo) {
  const auto dir = deepfactor::fixtures::scratch_dir("cli_sim");
  ASSERT_EQ(run("simulate --out " + dir.string() + " --firms 60 --months 60 --seed 3"), 0);
  for (const char* f : {"firms.csv", "macro.csv", "factors.csv", "portfolios.csv", "truth.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ofstream(dir / "factors.csv") << "date,mkt\n1975-01,abc\n";
  EXPECT_EQ(run("train --data " + dir.string() + " --out " + (dir / "run").string() +
                " --epochs 1 --batch-months 12 --layers 1 --factors 1 --conditions 0 --seeds 1"),
            2);
}

TEST(Cli, GradientCheckExitCodes) {
  EXPECT_EQ(run("gradcheck"), 0);
  EXPECT_EQ(run("gradcheck --sort hard"), 0);
  EXPECT_EQ(run("gradcheck --tolerance 0"), 3);
  EXPECT_EQ(run("gradcheck --sort sideways"), 1);
}

TEST(Cli, ConfigFileAndFlagsMerge) {
  const auto dir = deepfactor::fixtures::scratch_dir("cli_cfg");
  std::ofstream(dir / "sim.cfg") << "# small market\nfirms = 50\nmonths = 48\nbogus = 1\n";
  EXPECT_EQ(run("simulate --out " + (dir / "a").string() + " --config " + (dir / "sim.cfg").string()), 1);
  std::ofstream(dir / "sim.cfg") << "firms = 50\nmonths = 48\n";
  EXPECT_EQ(run("simulate --out " + (dir / "a").string() + " --config " + (dir / "sim.cfg").string() +
                " --months 36"), 0);
}
