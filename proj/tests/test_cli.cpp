#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "commands.hpp"
#include "seaseg/checkpoint.hpp"
#include "seaseg/inference.hpp"
#include "seaseg/metrics.hpp"
#include "seaseg/trainer.hpp"
#include "test_util.hpp"

namespace seaseg {
namespace {

using testing::slurp;
using testing::TempDir;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(const std::vector<std::string>& args, const std::string& stdin_text = "") {
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string aggregate_line(const std::string& csv) {
  const auto pos = csv.find("__aggregate__");
  return pos == std::string::npos ? "" : csv.substr(pos, csv.find('\n', pos) - pos);
}

// Tiny training run: 2 step-decay and 2 averaging epochs on whole 32×32 images.
std::vector<std::string> tiny_train(const std::string& data, const std::string& out) {
  return {"--seed", "5", "train", "--data", data, "--out", out, "--epochs", "2", "--swa-epochs", "2", "--cycle", "1"};
}

TEST(Cli, HelpExitsZero) {
  const Result r = run_cli({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  for (const char* sub : {"synth", "train", "predict", "eval", "report", "rle"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
  const Result t = run_cli({"train", "--help"});
  EXPECT_EQ(t.code, cli::kExitOk);
  for (const char* flag : {"--loss", "--alpha", "--no-se", "--epochs", "--out", "--resume"}) {
    EXPECT_NE(t.out.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, UnknownCommandsAndFlagsAreValidationErrors) {
  EXPECT_EQ(run_cli({}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"fly"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"synth", "--out", "x", "--colour", "red"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"predict", "--model", "m", "--data", "d", "--out", "o", "--tta", "d8"}).code,
            cli::kExitValidation);
  EXPECT_FALSE(std::filesystem::exists("x"));
}

TEST(Cli, SynthAllocatesEmptyImagesExactlyAndIsReproducible) {
  TempDir dir;
  const auto a = (dir.path() / "a").string(), b = (dir.path() / "b").string();
  const std::vector<std::string> args{"--seed", "9", "synth", "--n", "10", "--empty-frac", "0.6", "--size", "64"};
  auto with_out = [&](const std::string& out) {
    auto v = args;
    v.insert(v.end(), {"--out", out});
    return v;
  };
  ASSERT_EQ(run_cli(with_out(a)).code, cli::kExitOk);
  ASSERT_EQ(run_cli(with_out(b)).code, cli::kExitOk);
  const Manifest m = read_manifest(dir.path() / "a" / "manifest.csv");
  EXPECT_EQ(m.image_ids().size(), 10u);
  int empty_rows = 0;
  for (const auto& row : m.rows()) empty_rows += row.encoded_pixels.empty();
  EXPECT_EQ(empty_rows, 6);
  EXPECT_EQ(slurp(dir.path() / "a" / "manifest.csv"), slurp(dir.path() / "b" / "manifest.csv"));
  for (const auto& id : m.image_ids()) {
    const auto rel = std::filesystem::path("images") / (id + ".png");
    EXPECT_EQ(slurp(dir.path() / "a" / rel), slurp(dir.path() / "b" / rel)) << id;
  }
}

TEST(Cli, SynthRejectsSizeNotDivisibleBy16WithoutOutput) {
  TempDir dir;
  const auto out = dir.path() / "c";
  const Result r = run_cli({"synth", "--out", out.string(), "--n", "4", "--size", "60"});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("16"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out));
}

TEST(Cli, RleDecodeDrawsAndEncodeRoundTrips) {
  const Result d = run_cli({"rle", "decode", "1 4", "2", "2"});
  ASSERT_EQ(d.code, cli::kExitOk);
  EXPECT_EQ(d.out, "##\n##\n");
  const Result e = run_cli({"rle", "encode"}, d.out);
  ASSERT_EQ(e.code, cli::kExitOk);
  EXPECT_EQ(e.out, "1 4\n");

  const Result d2 = run_cli({"rle", "decode", "2 2 7 1", "3", "3"});
  ASSERT_EQ(d2.code, cli::kExitOk);
  EXPECT_EQ(d2.out, "..#\n#..\n#..\n");
  EXPECT_EQ(run_cli({"rle", "encode"}, d2.out).out, "2 2 7 1\n");
}

TEST(Cli, RleErrors) {
  EXPECT_EQ(run_cli({"rle", "decode", "1 5", "2", "2"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"rle", "decode", "1 x", "2", "2"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"rle", "encode"}, "#.\n#x\n").code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"rle", "encode"}, "#.\n#\n").code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"rle"}).code, cli::kExitValidation);
}

TEST(Cli, ReportCountsSumToN) {
  TempDir dir;
  const auto data = (dir.path() / "d").string();
  ASSERT_EQ(run_cli({"synth", "--out", data, "--n", "17", "--size", "32"}).code, cli::kExitOk);
  const Result csv = run_cli({"report", "--data", data});
  ASSERT_EQ(csv.code, cli::kExitOk);
  std::istringstream lines(csv.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "ships,images");
  int total = 0;
  while (std::getline(lines, line)) total += std::stoi(line.substr(line.find(',') + 1));
  EXPECT_EQ(total, 17);
  const Result json = run_cli({"report", "--data", data, "--format", "json"});
  ASSERT_EQ(json.code, cli::kExitOk);
  const auto j = nlohmann::json::parse(json.out);
  EXPECT_EQ(j.at("images").get<int>(), 17);
}

TEST(Cli, EvalFixtures) {
  TempDir dir;
  const auto gt = dir.path() / "gt.csv", same = dir.path() / "same.csv", part = dir.path() / "part.csv",
             missing = dir.path() / "missing.csv";
  write_file(gt, "image_id,encoded_pixels\na,1 10\nb,\n");
  write_file(same, "image_id,encoded_pixels\na,1 10\nb,\n");
  // Six of the ten ship pixels: IoU 0.6 passes only the 0.50 and 0.55 thresholds.
  write_file(part, "image_id,encoded_pixels\na,1 6\nb,\n");
  write_file(missing, "image_id,encoded_pixels\nb,\n");

  const Result r1 = run_cli({"eval", "--pred", same.string(), "--gt", gt.string(), "--dims", "1x10"});
  ASSERT_EQ(r1.code, cli::kExitOk) << r1.err;
  EXPECT_EQ(aggregate_line(r1.out), "__aggregate__,1.000000");

  const Result r2 = run_cli({"eval", "--pred", part.string(), "--gt", gt.string(), "--dims", "1x10", "--format", "json"});
  ASSERT_EQ(r2.code, cli::kExitOk) << r2.err;
  const auto j = nlohmann::json::parse(r2.out);
  // Image a scores 0.2, image b (empty in both) scores 1.
  EXPECT_NEAR(j.at("aggregate").get<double>(), (0.2 + 1.0) / 2, 1e-12);

  const Result r3 = run_cli({"eval", "--pred", missing.string(), "--gt", gt.string(), "--dims", "1x10"});
  ASSERT_EQ(r3.code, cli::kExitOk) << r3.err;
  EXPECT_NE(r3.out.find("a,0.000000"), std::string::npos);
  EXPECT_EQ(aggregate_line(r3.out), "__aggregate__,0.500000");

  const auto out = dir.path() / "report.csv";
  ASSERT_EQ(run_cli({"eval", "--pred", part.string(), "--gt", gt.string(), "--dims", "1x10", "--out", out.string()}).code,
            cli::kExitOk);
  EXPECT_NE(slurp(out).find("a,0.200000"), std::string::npos);

  EXPECT_EQ(run_cli({"eval", "--pred", same.string(), "--gt", gt.string(), "--dims", "10"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"eval", "--pred", same.string(), "--gt", gt.string(), "--dims", "0x10"}).code, cli::kExitValidation);
  EXPECT_EQ(run_cli({"eval", "--pred", "nope.csv", "--gt", gt.string(), "--dims", "1x10"}).code, cli::kExitValidation);
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    data_ = (dir_.path() / "data").string();
    ASSERT_EQ(run_cli({"--seed", "2", "synth", "--out", data_, "--n", "12", "--size", "32"}).code, cli::kExitOk);
  }
  std::string path(const std::string& name) const { return (dir_.path() / name).string(); }
  TempDir dir_;
  std::string data_;
};

TEST_F(CliPipeline, TrainRejectsBadFlagsBeforeWritingAnything) {
  for (const auto& extra : std::vector<std::vector<std::string>>{
           {"--alpha", "1.5"}, {"--crop", "20"}, {"--batch", "0"}, {"--val-frac", "1"}, {"--lr", "-1"}}) {
    auto args = tiny_train(data_, path("m.ckpt"));
    args.insert(args.end(), extra.begin(), extra.end());
    EXPECT_EQ(run_cli(args).code, cli::kExitValidation) << extra[0];
  }
  auto ce = tiny_train(data_, path("m.ckpt"));
  ce.insert(ce.end(), {"--loss", "ce", "--alpha", "0.5"});
  EXPECT_EQ(run_cli(ce).code, cli::kExitValidation);
  EXPECT_EQ(run_cli(tiny_train(path("nowhere"), path("m.ckpt"))).code, cli::kExitValidation);
  EXPECT_EQ(run_cli(tiny_train(data_, path("no/such/dir/m.ckpt"))).code, cli::kExitValidation);
  for (const auto& e : std::filesystem::directory_iterator(dir_.path())) EXPECT_EQ(e.path().filename(), "data");
}

TEST_F(CliPipeline, TrainWritesCheckpointsAndLogAndHonoursNoSe) {
  auto args = tiny_train(data_, path("m.ckpt"));
  args.insert(args.end(), {"--no-se", "--loss", "ce"});
  const Result r = run_cli(args);
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* f : {"m.ckpt", "m.ckpt.best", "m.ckpt.last", "m.ckpt.log.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(path(f))) << f;
  }
  EXPECT_FALSE(load_checkpoint(path("m.ckpt")).model.config().use_se);
  EXPECT_EQ(slurp(path("m.ckpt.log.csv")).substr(0, log_header().size()), log_header());
}

TEST_F(CliPipeline, ConfigFileSuppliesOptionsAndRejectsUnknownKeys) {
  write_file(path("run.toml"), "seed = 5\n[train]\nepochs = 1\nswa-epochs = 0\nse = false\n");
  const Result r = run_cli({"--config", path("run.toml"), "train", "--data", data_, "--out", path("m.ckpt")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const LoadedCheckpoint ck = load_checkpoint(path("m.ckpt"));
  EXPECT_FALSE(ck.model.config().use_se);
  EXPECT_EQ(ck.extras.meta.at("seed").get<int>(), 5);
  EXPECT_EQ(ck.extras.meta.at("swa_snapshots").get<int>(), 0);

  write_file(path("bad.toml"), "[train]\nepochz = 2\n");
  EXPECT_EQ(run_cli({"--config", path("bad.toml"), "train", "--data", data_, "--out", path("m2.ckpt")}).code,
            cli::kExitValidation);
  EXPECT_FALSE(std::filesystem::exists(path("m2.ckpt")));
}

TEST_F(CliPipeline, PredictTtaOffMatchesPlainForwardAndFeedsEval) {
  ASSERT_EQ(run_cli(tiny_train(data_, path("m.ckpt"))).code, cli::kExitOk);
  const Result p = run_cli({"predict", "--model", path("m.ckpt"), "--data", data_, "--out", path("p.csv"), "--tta",
                            "off", "--threshold", "0.3", "--min-area", "1"});
  ASSERT_EQ(p.code, cli::kExitOk) << p.err;
  const SeUNet model = load_checkpoint(path("m.ckpt")).model;
  const Dataset data = load_dataset(data_);
  const Manifest want = predict_dataset(model, data, data.manifest.image_ids(), TtaConfig{{0}, TtaMean::kArithmetic},
                                        PostprocessConfig{0.3, 1});
  EXPECT_EQ(read_manifest(path("p.csv")).rows(), want.rows());

  const Result e = run_cli({"eval", "--pred", path("p.csv"), "--gt", data_ + "/manifest.csv", "--dims", "32x32"});
  ASSERT_EQ(e.code, cli::kExitOk) << e.err;
  EXPECT_FALSE(aggregate_line(e.out).empty());

  const Result g = run_cli({"predict", "--model", path("m.ckpt"), "--data", data_, "--out", path("g.csv"), "--tta",
                            "full", "--mean", "geom", "--split", "val"});
  ASSERT_EQ(g.code, cli::kExitOk) << g.err;
  const Dataset d = load_dataset(data_);
  EXPECT_EQ(read_manifest(path("g.csv")).image_ids(), split_ids(d.manifest, 0.2, 5).val);
}

TEST_F(CliPipeline, PredictErrors) {
  write_file(path("junk.ckpt"), "not a checkpoint");
  EXPECT_EQ(run_cli({"predict", "--model", path("junk.ckpt"), "--data", data_, "--out", path("p.csv")}).code,
            cli::kExitRuntime);
  EXPECT_EQ(run_cli({"predict", "--model", path("none.ckpt"), "--data", data_, "--out", path("p.csv")}).code,
            cli::kExitValidation);
  EXPECT_EQ(run_cli({"predict", "--model", path("junk.ckpt"), "--data", data_, "--out", path("p.csv"), "--threshold",
                     "1.2"})
                .code,
            cli::kExitValidation);
  EXPECT_FALSE(std::filesystem::exists(path("p.csv")));
}

TEST_F(CliPipeline, StopAndResumeMatchesUninterruptedRun) {
  ASSERT_EQ(run_cli(tiny_train(data_, path("full.ckpt"))).code, cli::kExitOk);
  auto first = tiny_train(data_, path("part.ckpt"));
  first.insert(first.end(), {"--stop-after", "3"});
  ASSERT_EQ(run_cli(first).code, cli::kExitOk);
  EXPECT_FALSE(std::filesystem::exists(path("part.ckpt")));
  auto second = tiny_train(data_, path("part.ckpt"));
  second.push_back("--resume");
  ASSERT_EQ(run_cli(second).code, cli::kExitOk);
  EXPECT_EQ(slurp(path("full.ckpt")), slurp(path("part.ckpt")));
  EXPECT_EQ(slurp(path("full.ckpt.log.csv")), slurp(path("part.ckpt.log.csv")));
}

TEST_F(CliPipeline, WholePipelineIsDeterministic) {
  std::string reports[2];
  for (int k = 0; k < 2; ++k) {
    const std::string tag = std::to_string(k);
    const std::string data = path("d" + tag), model = path("m" + tag), pred = path("p" + tag + ".csv");
    ASSERT_EQ(run_cli({"--seed", "7", "synth", "--out", data, "--n", "10", "--size", "32"}).code, cli::kExitOk);
    ASSERT_EQ(run_cli(tiny_train(data, model)).code, cli::kExitOk);
    ASSERT_EQ(run_cli({"predict", "--model", model, "--data", data, "--out", pred}).code, cli::kExitOk);
    const Result e = run_cli({"eval", "--pred", pred, "--gt", data + "/manifest.csv", "--dims", "32x32"});
    ASSERT_EQ(e.code, cli::kExitOk);
    reports[k] = e.out;
  }
  EXPECT_EQ(reports[0], reports[1]);
}

}  // namespace
}  // namespace seaseg
