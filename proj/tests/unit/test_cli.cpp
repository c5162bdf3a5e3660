#ifdef MER_TOOL_PATH

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mer/error.hpp"
#include "mer/checkpoint.hpp"
#include "mer/pipeline.hpp"
#include "mer/png.hpp"

using namespace mer;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run(const std::string& args) {
  const std::string cmd = std::string(MER_TOOL_PATH) + " " + args + " 2>&1";
  CmdResult r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mer_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_ / "in");
    TrainingConfig cfg;
    cfg.inpaint.width = 4;
    cfg.inpaint.netl_scale = 1;
    cfg.enhance.channels = 4;
    save_checkpoint(dir_ / "m.ckpt", init_all_params(cfg));
    save_image(dir_ / "in" / "a.png", scale_brightness(synthetic_mural(256, 1), 0.37));
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  const CmdResult help = run("--help");
  EXPECT_EQ(help.code, 0);
  for (const char* sub : {"prepare", "train", "restore", "enhance", "find-flaws", "gen-mask", "evaluate", "bench", "serve"})
    EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("restore " + p("in/a.png")).code, 0);
  EXPECT_NE(run("restore " + p("in/a.png") + " -c " + p("m.ckpt") + " -o " + p("o") + " --mask x --auto-mask").code, 0);
}

TEST_F(CliTest, RestoreWritesStagesAndReportsFailures) {
  const CmdResult ok = run("restore " + p("in/a.png") + " -c " + p("m.ckpt") + " -o " + p("out") + " --auto-mask --stages");
  EXPECT_EQ(ok.code, 0) << ok.out;
  for (const char* s : {"enhanced", "coarse", "local", "global", "final", "mask"})
    EXPECT_TRUE(fs::exists(dir_ / "out" / (std::string("a.") + s + ".png"))) << s;

  std::ofstream(dir_ / "in" / "bad.png") << "junk";
  const CmdResult partial = run("restore " + p("in/a.png") + " " + p("in/bad.png") + " -c " + p("m.ckpt") + " -o " + p("out2"));
  EXPECT_EQ(partial.code, 1);
  EXPECT_NE(partial.out.find("bad.png"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "out2" / "a.final.png"));

  const CmdResult missing = run("restore " + p("in/a.png") + " -c " + p("nope.ckpt") + " -o " + p("out3"));
  EXPECT_EQ(missing.code, 2);
}

TEST_F(CliTest, RestoreIsRepeatable) {
  ASSERT_EQ(run("restore " + p("in/a.png") + " -c " + p("m.ckpt") + " -o " + p("r1") + " --auto-mask").code, 0);
  ASSERT_EQ(run("restore " + p("in/a.png") + " -c " + p("m.ckpt") + " -o " + p("r2") + " --auto-mask").code, 0);
  EXPECT_EQ(read_file(dir_ / "r1" / "a.final.png"), read_file(dir_ / "r2" / "a.final.png"));
}

TEST_F(CliTest, MaskToolsAndEnhance) {
  const CmdResult g = run("gen-mask --family block --coverage 0.2 --seed 4 --size 128 -o " + p("m.png"));
  EXPECT_EQ(g.code, 0) << g.out;
  EXPECT_EQ(load_mask(dir_ / "m.png"), generate_mask({MaskFamily::Block, 0.2, 128, 4}));
  EXPECT_EQ(run("gen-mask --family stripe -o " + p("x.png")).code, 2);

  EXPECT_EQ(run("find-flaws " + p("in/a.png") + " -o " + p("f.png")).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "f.png"));

  EXPECT_EQ(run("enhance " + p("in/a.png") + " -c " + p("m.ckpt") + " -o " + p("e")).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "e" / "a.enhanced.png"));
}

TEST_F(CliTest, PrepareTrainEvaluateBench) {
  save_image(dir_ / "src.png", synthetic_mural(256, 2));
  fs::create_directories(dir_ / "raw");
  fs::rename(dir_ / "src.png", dir_ / "raw" / "src.png");
  const CmdResult prep = run("prepare " + p("raw") + " -o " + p("ds"));
  EXPECT_EQ(prep.code, 0) << prep.out;
  EXPECT_NE(prep.out.find("3 darkened tiles"), std::string::npos) << prep.out;
  EXPECT_EQ(run("prepare " + p("empty_missing") + " -o " + p("ds2")).code, 2);

  const CmdResult train = run("train --synthetic 2 --variant 2 --set width=4 --set netl_scale=1 --set enh_channels=4 "
                        "--set subset=2 --set enh_quota=1 --set batch=1 --max-steps 2 -o " + p("t.ckpt") +
                        " --log " + p("log.jsonl"));
  EXPECT_EQ(train.code, 0) << train.out;
  EXPECT_TRUE(fs::exists(dir_ / "t.ckpt"));
  std::ifstream log(dir_ / "log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    EXPECT_NE(line.find("\"phase\""), std::string::npos);
  }
  EXPECT_EQ(lines, 2);
  EXPECT_EQ(run("train --synthetic 1 --set bogus=1 -o " + p("u.ckpt")).code, 2);

  const CmdResult ev = run("evaluate --data " + p("ds") + " -c " + p("t.ckpt") + " --csv " + p("e.csv") + " --json " + p("e.json"));
  EXPECT_EQ(ev.code, 0) << ev.out;
  EXPECT_TRUE(fs::exists(dir_ / "e.csv"));
  const CmdResult b = run("bench --data " + p("ds") + " -c " + p("t.ckpt") + " --json " + p("b.json"));
  EXPECT_EQ(b.code, 0) << b.out;
  EXPECT_NE(b.out.find("warning: empty bucket"), std::string::npos);
}

#endif
