#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rmgpmsi/cli.hpp"

using namespace rmgpmsi;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rmgpmsi_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "rmgpmsi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Small and fast: 32 px inputs, narrow interaction.
std::vector<std::string> small(const fs::path& out) {
  return {"--out", out.string(), "--set", "msi.c=8", "--set", "msi.mlp_hidden=8", "--set", "backbone.input_size=32",
          "--set", "transform.resize_to=32", "--set", "transform.crop_to=32", "--set",
          "data.synthetic_train_per_class=2", "--set", "data.synthetic_test_per_class=2"};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Config, PrecedenceDefaultsFileFlags) {
  // Random subsets of keys set in the file and/or by flags.
  const std::vector<std::pair<std::string, std::vector<std::string>>> keys{
      {"train.epochs", {"3", "9"}},          {"train.lr_new", {"0.02", "0.005"}},
      {"msi.c", {"16", "64"}},               {"data.synthetic_seed", {"4", "8"}},
      {"corrupt.kinds", {"color_jitter", "gaussian_noise"}},
      {"viz.format", {"ppm", "png"}},        {"train.batch_size", {"2", "12"}}};
  const auto dir = temp_dir("precedence");
  Rng rng(31);
  const config::RunConfig defaults;
  const auto default_entries = defaults.entries();
  const auto value_of = [](const config::RunConfig& c, const std::string& key) {
    for (const auto& [k, v] : c.entries())
      if (k == key) return v;
    return std::string("<missing>");
  };
  for (int trial = 0; trial < 60; ++trial) {
    std::ofstream file(dir / "c.cfg");
    cli::Options o;
    o.config_path = (dir / "c.cfg").string();
    std::map<std::string, std::string> expected;
    for (const auto& [key, values] : keys) {
      expected[key] = value_of(defaults, key);
      if (rng.bernoulli(0.5)) {
        file << key << " = " << values[0] << "\n";
        expected[key] = values[0];
      }
      if (rng.bernoulli(0.5)) {
        o.sets.push_back(key + "=" + values[1]);
        expected[key] = values[1];
      }
    }
    file.close();
    const auto cfg = cli::build_config(o);
    for (const auto& [key, value] : expected) {
      auto got = value_of(cfg, key);
      if (key == "train.lr_new") EXPECT_EQ(std::stod(got), std::stod(value)) << key;
      else EXPECT_EQ(got, value) << key;
    }
  }
}

TEST(Config, SeedAndOutFlagsWin) {
  const auto dir = temp_dir("flags");
  std::ofstream(dir / "c.cfg") << "train.seed = 3\nout = from_file\n";
  cli::Options o;
  o.config_path = (dir / "c.cfg").string();
  EXPECT_EQ(cli::build_config(o).train.seed, 3u);
  EXPECT_EQ(cli::build_config(o).out, "from_file");
  o.seed = 11;
  o.out = "from_flag";
  EXPECT_EQ(cli::build_config(o).train.seed, 11u);
  EXPECT_EQ(cli::build_config(o).out, "from_flag");
}

TEST(Config, OutputRootFromEnvironment) {
  ::setenv(config::kOutputRootVariable, "/tmp/rmgpmsi_env_root", 1);
  EXPECT_EQ(config::RunConfig{}.out, "/tmp/rmgpmsi_env_root");
  ::unsetenv(config::kOutputRootVariable);
  EXPECT_EQ(config::RunConfig{}.out, "runs");
}

TEST(Config, TextEchoRoundTrips) {
  config::RunConfig a;
  a.apply("train.lr_new", "0.0031");
  a.apply("msi.stage_num", "2");
  a.apply("corrupt.kinds", "gaussian_noise");
  config::RunConfig b;
  std::istringstream is(a.to_text());
  b.apply_text(is);
  EXPECT_EQ(b.to_text(), a.to_text());
  EXPECT_EQ(b.train.stage_num, 2u);
}

TEST(Cli, TrainOneEpochRowAccountingAndArtifacts) {
  const auto dir = temp_dir("train1");
  const auto r = run(small(dir) + std::vector<std::string>{"train", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(dir / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 + 1 + 1);  // header, StageNum + 1 phases, eval
  EXPECT_TRUE(fs::exists(dir / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
}

TEST(Cli, SameSeedGivesIdenticalCsv) {
  const auto a = temp_dir("seed_a"), b = temp_dir("seed_b");
  ASSERT_EQ(run(small(a) + std::vector<std::string>{"--seed", "7", "train", "--epochs", "2"}).code, 0);
  ASSERT_EQ(run(small(b) + std::vector<std::string>{"--seed", "7", "train", "--epochs", "2"}).code, 0);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  const auto c = temp_dir("seed_c");
  ASSERT_EQ(run(small(c) + std::vector<std::string>{"--seed", "8", "train", "--epochs", "2"}).code, 0);
  EXPECT_NE(read_file(a / "metrics.csv"), read_file(c / "metrics.csv"));
}

TEST(Cli, EvalReproducesFinalTrainingEvalRow) {
  const auto dir = temp_dir("eval");
  ASSERT_EQ(run(small(dir) + std::vector<std::string>{"train", "--epochs", "2"}).code, 0);
  const auto rows = trainer::parse_metrics_csv(read_file(dir / "metrics.csv"));
  const auto& last = rows.back();
  const auto r = run(small(dir) + std::vector<std::string>{"eval", "--checkpoint", (dir / "checkpoint.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("acc_concat=" + text::exact(*last.acc_concat) + " acc_mix=" + text::exact(*last.acc_mix) +
                       " loss_concat=" + text::exact(last.loss)),
            std::string::npos)
      << r.out;
}

TEST(Cli, CorruptEvalAndViz) {
  const auto dir = temp_dir("corrupt");
  ASSERT_EQ(run(small(dir) + std::vector<std::string>{"train", "--epochs", "1"}).code, 0);
  const auto ckpt = (dir / "checkpoint.bin").string();
  auto r = run(small(dir) + std::vector<std::string>{"corrupt-eval", "--checkpoint", ckpt, "--kinds", ""});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);  // header and clean row
  r = run(small(dir) + std::vector<std::string>{"corrupt-eval", "--checkpoint", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
  r = run(small(dir) + std::vector<std::string>{"corrupt-eval", "--checkpoint", ckpt, "--kinds", "blur"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("UnknownKind"), std::string::npos);

  r = run(small(dir) + std::vector<std::string>{"--set", "viz.limit=2", "viz", "--checkpoint", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "cams")) files += e.path().extension() == ".png";
  EXPECT_EQ(files, 2u * 3u);  // StageNum heatmaps per image
  EXPECT_TRUE(fs::exists(dir / "cams" / "sample0001_stage4_cam.png"));
}

TEST(Cli, AblateRowsAndCombos) {
  const auto dir = temp_dir("ablate");
  auto r = run(small(dir) + std::vector<std::string>{"ablate", "--toggles", "R"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("InvalidCombo"), std::string::npos);
  r = run(small(dir) + std::vector<std::string>{"ablate", "--toggles", "", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
  EXPECT_NE(r.out.find("baseline"), std::string::npos);
  r = run(small(dir) + std::vector<std::string>{"ablate", "--toggles", "RPM", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::vector<std::string> labels;
  for (std::string line; std::getline(is, line);) labels.push_back(line.substr(0, line.find(' ')));
  EXPECT_EQ(labels, (std::vector<std::string>{"Method", "baseline", "+M", "+P", "+P&M", "+P&R", "+P&M&R"}));
}

TEST(Cli, ExitCodes) {
  const auto dir = temp_dir("codes");
  auto r = run(small(dir) + std::vector<std::string>{"train", "--stage-num", "6"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("6"), std::string::npos);
  EXPECT_NE(r.err.find("N = 5"), std::string::npos);
  EXPECT_EQ(run({"--set", "no.such.key=1", "train"}).code, 2);
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run(small(dir) + std::vector<std::string>{"--data", (dir / "missing").string(), "train"}).code, 3);
  r = run(small(dir) + std::vector<std::string>{"--set", "train.lr_new=1e6", "--set", "train.lr_pretrained=1e6", "train",
                                                "--epochs", "3"});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("NonFiniteLoss"), std::string::npos);
}

TEST(Cli, TrainsFromImageDirectories) {
  const auto dir = temp_dir("folders");
  const auto root = dir / "data";
  data::write_dataset(data::make_synthetic(3, 2, 32, 1), root.string(), data::Split::Train);
  data::write_dataset(data::make_synthetic(data::SyntheticSpec{3, 1, 32, 1}, 1), root.string(), data::Split::Test);
  const auto r = run(small(dir / "out") + std::vector<std::string>{"--data", root.string(), "train", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest_train.txt"));
  const auto cfg = read_file(dir / "out" / "config.txt");
  EXPECT_NE(cfg.find("model.classes = 3"), std::string::npos);
}
