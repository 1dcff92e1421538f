#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"

#include "mdepth/cli.hpp"
#include "mdepth/io.hpp"
#include "mdepth/predictors.hpp"

using namespace mdepth;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdepth_cli_" + name);
  fs::remove_all(p);
  return p;
}

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "mdepth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  }
  return files;
}

fs::path synth_dataset(const std::string& name, const std::vector<std::string>& extra = {}) {
  const fs::path d = scratch(name);
  std::vector<std::string> args{"synth", "--out", d.string(), "--set", "synth.size=16", "--set", "synth.scene=dynamic"};
  for (const auto& e : extra) {
    args.push_back("--set");
    args.push_back(e);
  }
  EXPECT_EQ(run(args), 0);
  return d;
}

}  // namespace

TEST(Cli, SynthIsByteIdenticalForAFixedSeed) {
  const fs::path a = synth_dataset("synth_a"), b = synth_dataset("synth_b");
  const auto fa = tree_bytes(a), fb = tree_bytes(b);
  ASSERT_FALSE(fa.empty());
  EXPECT_EQ(fa, fb);
  EXPECT_TRUE(fa.count("seq_0/meta.json"));
  EXPECT_TRUE(fa.count("seq_0/frame_2.png"));
  EXPECT_TRUE(fa.count("config.ini"));
}

TEST(Cli, NoObjectsGiveBackgroundOnlyMasks) {
  const fs::path d = synth_dataset("synth_static", {"synth.scene=static"});
  const auto seq = io::read_sequence(d / "seq_0");
  for (const auto& m : seq.masks) EXPECT_TRUE(m.empty());
}

TEST(Cli, MetaJsonReproducesTheRender) {
  const fs::path d = synth_dataset("synth_meta");
  const auto seq = io::read_sequence(d / "seq_0");
  for (int k = 0; k < 3; ++k) {
    const auto r = synth::render(seq.scene, k);
    const auto& img = seq.frames[static_cast<std::size_t>(k)].field().data;
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(img[i], r.image.field().data[i], 0.5 / 65535 + 1e-12);
  }
}

TEST(Cli, TrainWithZeroStepsWritesTheInitialisation) {
  const fs::path data = synth_dataset("train0_data");
  const fs::path out = scratch("train0_out");
  ASSERT_EQ(run({"train", "--out", out.string(), "--set", "paths.data=" + data.string(), "--set", "train.steps=0"}), 0);
  const ad::ParamSet saved = io::load_checkpoint(out / "checkpoint");
  DirectPredictor fresh;
  for (const auto& w : io::windows(io::read_dataset(data))) fresh.register_sample(w.sample, TrainConfig{}.init);
  ASSERT_EQ(saved.size(), fresh.params().size());
  for (const auto& [name, prm] : fresh.params()) {
    const auto& got = saved.at(name).value.data;
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], static_cast<float>(prm.value.data[i])) << name;
  }
  EXPECT_EQ(io::read_text(out / "trace.jsonl"), "");
}

TEST(Cli, EvalOfGroundTruthIsZeroError) {
  const fs::path data = synth_dataset("eval_data", {"synth.frames=5", "synth.scene=standard"});
  const fs::path pred = scratch("eval_pred");
  fs::create_directories(pred / "depth");
  std::string poses;
  for (const auto& w : io::windows(io::read_dataset(data))) {
    io::write_pfm(pred / "depth" / (cli::window_stem(w.sample.name) + ".pfm"), w.gt_depth.field());
    const auto a = w.gt_ego_prev.as_array(), b = w.gt_ego_next.as_array();
    poses += json{{"window", w.sample.name}, {"ego_prev", a}, {"ego_next", b}}.dump() + "\n";
  }
  io::write_text(pred / "poses.jsonl", poses);
  const fs::path out = scratch("eval_out");
  ASSERT_EQ(run({"eval", "--out", out.string(), "--set", "paths.data=" + data.string(), "--set",
                 "paths.predictions=" + pred.string(), "--set", "eval.scaling=none"}),
            0);
  const json m = json::parse(io::read_text(out / "metrics.json"));
  EXPECT_EQ(m["depth"]["abs_rel"].get<double>(), 0.0);
  EXPECT_EQ(m["depth"]["rmse"].get<double>(), 0.0);
  EXPECT_EQ(m["depth"]["delta1"].get<double>(), 1.0);
  EXPECT_EQ(m["ate"]["snippets"].get<int>(), 1);
  EXPECT_NEAR(m["ate"]["mean"].get<double>(), 0.0, 1e-12);
}

TEST(Cli, RerunWithEchoedConfigIsBitwiseIdentical) {
  const fs::path data = synth_dataset("rerun_data");
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  ASSERT_EQ(run({"train", "--out", a.string(), "--set", "paths.data=" + data.string(), "--set", "train.steps=3"}), 0);
  ASSERT_EQ(run({"train", "--out", b.string(), "--config", (a / "config.ini").string()}), 0);
  EXPECT_EQ(tree_bytes(a), tree_bytes(b));
}

TEST(Cli, ExitCodes) {
  std::string err;
  EXPECT_EQ(run({"train", "--out", scratch("codes").string(), "--set", "train.nosuch=1"}, &err), cli::kConfig);
  EXPECT_NE(err.find("nosuch"), std::string::npos);
  EXPECT_EQ(run({"train", "--out", scratch("codes").string()}), cli::kConfig);
  EXPECT_EQ(run({"train", "--out", scratch("codes").string(), "--set", "paths.data=/nonexistent/dataset"}), cli::kData);
  EXPECT_EQ(run({"bogus"}), cli::kConfig);
}

TEST(Cli, DivergenceIsNumericExitCode) {
  const fs::path data = synth_dataset("diverge_data");
  EXPECT_EQ(run({"train", "--out", scratch("diverge").string(), "--set", "paths.data=" + data.string(), "--set",
                 "train.steps=20", "--set", "train.learning_rate=0", "--set", "train.divergence_factor=0.5", "--set",
                 "train.divergence_patience=3"}),
            cli::kNumeric);
}

TEST(Cli, BinaryReportsExitCodes) {
  const std::string bin = MDEPTH_CLI_PATH;
  const int status = std::system((bin + " train --out " + scratch("bin").string() + " --set bad.key=1 2>/dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kConfig);
}

TEST(Cli, WindowStem) { EXPECT_EQ(cli::window_stem("seq_0/1"), "seq_0_1"); }
