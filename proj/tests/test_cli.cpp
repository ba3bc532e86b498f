#include "rvt/data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace rvt;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int status = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(RVT_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) r.out.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSmall = "--set views=3 --set preset=cube3 --set image_res=20 --set patch_px=10 --set d_model=16 "
                     "--set heads=2 --set grid_v=10";

}  // namespace

TEST(Cli, HelpAndMissingSubcommand) {
  EXPECT_EQ(run("--help").status, 0);
  EXPECT_NE(run("").status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
}

TEST(Cli, RenderEmptyCloudWritesBackgroundImages) {
  const fs::path dir = fresh_dir("rvt_cli_empty");
  Episode ep;
  ep.steps.resize(1);
  ep.keyframes = {0};
  ep.actions = {KeyframeAction{}};
  ep.language = "nothing";
  save_dataset({ep}, (dir / "ds").string());
  const RunResult r = run(std::string("render ") + kSmall + " -d " + (dir / "ds").string() + " -o " +
                          (dir / "img").string());
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "img" / "front_rgb.ppm"));
  EXPECT_TRUE(fs::exists(dir / "img" / "top_depth.pgm"));
}

TEST(Cli, GenThenOracleEvalScoresFullMarks) {
  const fs::path dir = fresh_dir("rvt_cli_gen");
  RunResult r = run("gen --set episodes=3 --set task=pick -d " + (dir / "ds").string());
  ASSERT_EQ(r.status, 0) << r.out;
  r = run("eval --oracle -d " + (dir / "ds").string());
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("overall\t100.0"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("keyframes\t6"), std::string::npos) << r.out;
}

TEST(Cli, TrainEvalAndVizRunEndToEnd) {
  const fs::path dir = fresh_dir("rvt_cli_train");
  const std::string ds = (dir / "ds").string(), out = (dir / "run").string();
  ASSERT_EQ(run("gen --set episodes=2 -d " + ds).status, 0);
  RunResult r = run(std::string("train ") + kSmall + " --set steps=2 --set batch=2 -d " + ds + " -o " + out);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "final.ckpt"));
  r = run("eval -c " + out + "/config.json -d " + ds + " --checkpoint " + out + "/final.ckpt");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("translation\t"), std::string::npos);
  r = run("viz -c " + out + "/config.json -d " + ds + " --checkpoint " + out + "/final.ckpt -o " + (dir / "viz").string());
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "viz" / "left_overlay.ppm"));
}

TEST(Cli, BadInputFailsWithMessage) {
  const fs::path dir = fresh_dir("rvt_cli_bad");
  std::ofstream(dir / "bad.json") << R"({"no_such_key": 1})";
  RunResult r = run("gen -c " + (dir / "bad.json").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("unknown key"), std::string::npos) << r.out;
  r = run("eval --oracle -d " + (dir / "missing").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("rvt: error:"), std::string::npos) << r.out;
  r = run("gen --set views=3");
  EXPECT_NE(r.status, 0);
}

TEST(Cli, BenchPrintsTsvTable) {
  const RunResult r = run("bench --sizes 1000,2000 --res 40 --voxels 20 --runs 1 --no-forward");
  ASSERT_EQ(r.status, 0) << r.out;
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "stage\tN\tK\tres\tV\tmedian_ms");
  int render = 0, voxel = 0;
  while (std::getline(is, line)) {
    render += line.rfind("render\t", 0) == 0;
    voxel += line.rfind("voxelize\t", 0) == 0;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5) << line;
  }
  EXPECT_EQ(render, 2);
  EXPECT_EQ(voxel, 2);
}
