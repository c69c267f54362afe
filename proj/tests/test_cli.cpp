#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "stylenorm/cli.hpp"
#include "stylenorm/digest.hpp"
#include "stylenorm/metrics.hpp"
#include "stylenorm/refiner.hpp"
#include "stylenorm/tiler.hpp"
#include "synthetic.hpp"

namespace stylenorm {
namespace {

namespace fs = std::filesystem;
using testing::Style;

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "stylenorm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

// Source and a bank of sharp references on disk.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::make_temp_dir("cli");
    fs::create_directories(dir_ / "refs");
    for (int i = 0; i < 4; ++i) {
      save_image(testing::synthetic_mammogram(64, 20 + i, Style::sharpened),
                 dir_ / "refs" / ("ref" + std::to_string(i) + "_CC.png"));
    }
    save_image(testing::synthetic_mammogram(64, 50, Style::blurred), dir_ / "source_CC.png");
    ASSERT_EQ(run({"bank", "build", (dir_ / "refs").string(), "--vendor", "vendorB", "--out",
                   (dir_ / "bank.tsv").string()})
                  .code,
              0);
  }

  fs::path config(const std::string& name, const std::string& body) {
    write_file(dir_ / name, body);
    return dir_ / name;
  }

  CliRun transfer(const fs::path& cfg, const fs::path& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"transfer",          "--source", (dir_ / "source_CC.png").string(),
                                     "--bank",            (dir_ / "bank.tsv").string(),
                                     "--config",          cfg.string(),
                                     "--out",             out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  fs::path dir_;
};

TEST(CliBasics, ViewFromFilename) {
  EXPECT_EQ(view_from_filename("case12_CC.png"), View::CC);
  EXPECT_EQ(view_from_filename("L-mlo-3.dcm"), View::MLO);
  EXPECT_EQ(view_from_filename("occlusion.png"), std::nullopt);
  EXPECT_EQ(view_from_filename("x_CC_MLO.png"), std::nullopt);
}

TEST(CliBasics, HelpAndUnknownCommands) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
  EXPECT_NE(run({"transfer"}).code, 0);
}

TEST_F(CliTest, BankBuildAndListEchoTheManifest) {
  const std::string manifest = read_file(dir_ / "bank.tsv");
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 5);
  const CliRun list = run({"bank", "list", (dir_ / "bank.tsv").string()});
  EXPECT_EQ(list.code, 0);
  EXPECT_EQ(list.out, manifest);
}

TEST_F(CliTest, BankBuildOnEmptyDirectoryFails) {
  fs::create_directories(dir_ / "empty");
  const CliRun r = run({"bank", "build", (dir_ / "empty").string(), "--vendor", "v", "--out",
                     (dir_ / "x.tsv").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("no images"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "x.tsv"));
}

TEST_F(CliTest, TransferWithZeroStepsIsNearIdentity) {
  const auto cfg = config("zero.cfg", "seed = 1\nsteps = 0\nn_refs = 2\nwork_size = 32\n");
  const CliRun r = transfer(cfg, dir_ / "out0");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"S0.png", "S1.png", "S2.png", "final.png", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out0" / f)) << f;
  }
  const Mammogram src = load_image(dir_ / "source_CC.png", {View::CC, "x"});
  const Mammogram out = load_image(dir_ / "out0" / "final.png", {View::CC, "x"});
  std::vector<Image> round_trips;
  for (Scale s : kAllScales) {
    const TileGrid g = plan_grid(src.height(), src.width(), s, 0, 32);
    round_trips.push_back(clamp(reconstruct(decompose(src.pixels, g), g)));
  }
  const Image* ptrs[] = {&round_trips[0], &round_trips[1], &round_trips[2]};
  const Image expect = weighted_fusion(ptrs, std::vector<double>(3, 1.0 / 3));
  EXPECT_LE(max_abs_diff(expect, out.pixels), 0.5 / 65535 + 1e-12);
  const auto m = read_json(dir_ / "out0" / "manifest.json");
  EXPECT_EQ(m["status"], "complete");
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["reference_ids"].size(), 2u);
  EXPECT_EQ(m["scales"].size(), 3u);
  EXPECT_EQ(m["outputs"]["final.png"], sha256_file(dir_ / "out0" / "final.png"));
  EXPECT_EQ(m["inputs"]["source"]["digest"], sha256_file(dir_ / "source_CC.png"));
}

TEST_F(CliTest, TransferFailsFastOnMissingBankOrBadConfig) {
  const auto cfg = config("ok.cfg", "seed = 1\nsteps = 0\nwork_size = 32\n");
  CliRun r = run({"transfer", "--source", (dir_ / "source_CC.png").string(), "--bank", (dir_ / "nope.tsv").string(),
               "--config", cfg.string(), "--out", (dir_ / "outA").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(dir_ / "outA"));
  r = transfer(config("bad.cfg", "seed = 1\nsteps = 0\ncolour = red\n"), dir_ / "outB");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("unknown key"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "outB"));
  r = transfer(config("noseed.cfg", "steps = 0\n"), dir_ / "outC");
  EXPECT_NE(r.code, 0);
}

TEST_F(CliTest, FailedRunKeepsAPartialManifest) {
  const auto cfg = config("many.cfg", "seed = 1\nsteps = 0\nn_refs = 9\nwork_size = 32\n");
  const CliRun r = transfer(cfg, dir_ / "outF");
  EXPECT_NE(r.code, 0);
  const auto m = read_json(dir_ / "outF" / "manifest.json");
  EXPECT_EQ(m["status"], "failed");
  EXPECT_TRUE(m.contains("error"));
}

TEST_F(CliTest, SerialRunsAreReproducibleAndParallelMatches) {
  const auto cfg = config("det.cfg", "seed = 7\nsteps = 4\nn_refs = 2\nwork_size = 16\nexport_scales = false\n");
  ASSERT_EQ(transfer(cfg, dir_ / "r1", {"--serial"}).code, 0);
  ASSERT_EQ(transfer(cfg, dir_ / "r2", {"--serial"}).code, 0);
  ASSERT_EQ(transfer(cfg, dir_ / "r3", {"--threads", "3"}).code, 0);
  const auto a = read_json(dir_ / "r1" / "manifest.json"), b = read_json(dir_ / "r2" / "manifest.json"),
             c = read_json(dir_ / "r3" / "manifest.json");
  EXPECT_EQ(a["outputs"], b["outputs"]);
  EXPECT_EQ(a["outputs"], c["outputs"]);
  EXPECT_EQ(a["config_digest"], b["config_digest"]);
  EXPECT_EQ(c["threads"], 3);
  EXPECT_FALSE(fs::exists(dir_ / "r1" / "S0.png"));
}

class TrainCliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::make_temp_dir("train");
    fs::create_directories(dir_ / "targets");
    fs::create_directories(dir_ / "triples");
    for (int i = 0; i < 3; ++i) {
      save_png(testing::styled_texture(32, 10 + i, Style::sharpened), dir_ / "targets" / ("t" + std::to_string(i) + ".png"));
      const Image b = testing::styled_texture(32, 20 + i, Style::blurred);
      for (int s = 0; s < 3; ++s) {
        save_png(gaussian_blur(b, 2 - s), dir_ / "triples" / ("x" + std::to_string(i) + "_s" + std::to_string(s) + ".png"));
      }
    }
  }

  CliRun train(const std::string& cfg_body, const fs::path& out, std::vector<std::string> extra = {}) {
    std::ofstream(dir_ / "train.cfg") << cfg_body;
    std::vector<std::string> args = {"train-refiner", (dir_ / "targets").string(), (dir_ / "triples").string(),
                                     (dir_ / "train.cfg").string(), out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  fs::path dir_;
};

TEST_F(TrainCliTest, ZeroStepsKeepsTheInitialDigest) {
  const CliRun r = train("seed = 5\nsteps = 0\ncrop_size = 16\n", dir_ / "ck0.bin");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(dir_ / "ck0.bin.manifest.json");
  EXPECT_EQ(m["refiner_digest"], m["init_refiner_digest"]);
  EXPECT_EQ(load_refiner(dir_ / "ck0.bin").digest(), RefinerModel::identity(5).digest());
  EXPECT_EQ(read_file(dir_ / "ck0.bin.curves.csv"), "step,d_loss,g_term\n");
}

TEST_F(TrainCliTest, CurvesHaveOneRowPerLoggedStep) {
  ASSERT_EQ(train("seed = 5\nsteps = 9\ncrop_size = 16\nbatch_size = 2\nlog_every = 2\n", dir_ / "ck.bin").code, 0);
  std::istringstream csv(read_file(dir_ / "ck.bin.curves.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,d_loss,g_term");
  std::vector<int> steps;
  while (std::getline(csv, line)) steps.push_back(std::stoi(line.substr(0, line.find(','))));
  EXPECT_EQ(steps, (std::vector<int>{0, 2, 4, 6, 8}));
}

TEST_F(TrainCliTest, ResumedRunMatchesUninterruptedRun) {
  const std::string cfg = "seed = 5\nsteps = 8\ncrop_size = 16\nbatch_size = 2\n";
  ASSERT_EQ(train(cfg, dir_ / "full.bin").code, 0);
  ASSERT_EQ(train(cfg, dir_ / "half.bin", {"--max-steps", "3"}).code, 0);
  EXPECT_EQ(read_json(dir_ / "half.bin.manifest.json")["steps_completed"], 3);
  ASSERT_EQ(train(cfg, dir_ / "resumed.bin", {"--resume", (dir_ / "half.bin").string()}).code, 0);
  EXPECT_EQ(read_file(dir_ / "full.bin.curves.csv"), read_file(dir_ / "resumed.bin.curves.csv"));
  EXPECT_EQ(read_json(dir_ / "full.bin.manifest.json")["refiner_digest"],
            read_json(dir_ / "resumed.bin.manifest.json")["refiner_digest"]);
}

TEST_F(TrainCliTest, IncompleteTripleIsAnError) {
  fs::remove(dir_ / "triples" / "x1_s2.png");
  const CliRun r = train("seed = 5\nsteps = 1\ncrop_size = 16\n", dir_ / "ck.bin");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("x1"), std::string::npos) << r.err;
}

class EvalCliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testing::make_temp_dir("eval");
    fs::create_directories(dir_ / "set");
    for (int i = 0; i < 3; ++i) save_png(testing::random_texture(32, 32, 40 + i), dir_ / "set" / ("img" + std::to_string(i) + ".png"));
  }
  fs::path dir_;
};

TEST_F(EvalCliTest, GramDistanceOfASetAgainstItself) {
  std::ofstream(dir_ / "g.cfg") << "seed = 2\nwork_size = 32\n";
  const CliRun r = run({"eval", "gram-distance", "--images", (dir_ / "set").string(), "--against",
                     (dir_ / "set").string(), "--config", (dir_ / "g.cfg").string(), "--out",
                     (dir_ / "g.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(read_file(dir_ / "g.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "image,reference,gram_distance");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string a, b, d;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, d);
    if (a == b) {
      EXPECT_EQ(std::stod(d), 0.0);
    } else {
      EXPECT_GT(std::stod(d), 0.0);
    }
  }
  EXPECT_EQ(rows, 9);
}

TEST_F(EvalCliTest, QualityWithStubScorer) {
  ::setenv("STUB_MODE", "const", 1);
  const CliRun r = run({"eval", "quality", (dir_ / "set").string(), "--scorer", STUB_SCORER, "--out",
                     (dir_ / "q.csv").string()});
  ::unsetenv("STUB_MODE");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(dir_ / "q.csv.manifest.json");
  EXPECT_EQ(m["mean_score"], 5.0);
  EXPECT_EQ(m["scorer_digest"], sha256_file(STUB_SCORER));
  EXPECT_NE(read_file(dir_ / "q.csv").find("img1,5\n"), std::string::npos);
}

TEST_F(EvalCliTest, QualityWithMissingScorerFailsBeforeScoring) {
  const CliRun r = run({"eval", "quality", (dir_ / "set").string(), "--scorer", (dir_ / "none").string(), "--out",
                     (dir_ / "q.csv").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(dir_ / "q.csv"));
}

TEST_F(EvalCliTest, EhmOutputsHaveTheReferenceHistogram) {
  save_png(testing::random_image(32, 32, 99), dir_ / "ref.png", 8);
  const CliRun r = run({"eval", "ehm", (dir_ / "set").string(), "--reference", (dir_ / "ref.png").string(),
                     "--bit-depth", "8", "--out", (dir_ / "ehm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Image ref = load_image(dir_ / "ref.png", {View::CC, "x"}).pixels;
  for (int i = 0; i < 3; ++i) {
    const Image out = load_image(dir_ / "ehm" / ("img" + std::to_string(i) + "_ehm.png"), {View::CC, "x"}).pixels;
    EXPECT_EQ(level_histogram(out, 8), level_histogram(ref, 8));
  }
  EXPECT_TRUE(fs::exists(dir_ / "ehm" / "ehm.csv"));
}

}  // namespace
}  // namespace stylenorm
