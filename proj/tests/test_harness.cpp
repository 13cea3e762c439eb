// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fod/config.hpp"
#include "fod/errors.hpp"
#include "fod/pipeline.hpp"
#include "fod/synthetic.hpp"
#include "fod/tensor_io.hpp"
#include "support.hpp"

using namespace fod;
using namespace fod::testing;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.height = s.width = 32;
  s.n_train = 3;
  s.n_test_normal = 2;
  s.n_test_anomalous = 5;
  s.anomaly_size = 8;
  s.seed = seed;
  return s;
}

double px(const Tensor& img, std::size_t c, std::size_t y, std::size_t x) {
  return img[(c * img.dim(1) + y) * img.dim(2) + x];
}

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synthetic, DeterministicPerSeed) {
  const Dataset a = generate_dataset(small_spec(4)), b = generate_dataset(small_spec(4));
  const Dataset c = generate_dataset(small_spec(5));
  ASSERT_EQ(a.test.size(), 7u);
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    EXPECT_EQ(a.test[i], b.test[i]);
    EXPECT_EQ(a.masks[i], b.masks[i]);
  }
  EXPECT_EQ(a.train[0], b.train[0]);
  EXPECT_NE(a.train[0], c.train[0]);
}

TEST(Synthetic, LabelsKindsAndMaskAreas) {
  const SyntheticSpec spec = small_spec(6);
  const Dataset ds = generate_dataset(spec);
  EXPECT_EQ(ds.train.size(), 3u);
  EXPECT_EQ(ds.train[0].shape(), (Shape{1, 32, 32}));
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    EXPECT_EQ(ds.labels[i], ds.kinds[i] == AnomalyKind::none ? 0 : 1);
    const double area = total(ds.masks[i]);
    switch (ds.kinds[i]) {
      case AnomalyKind::none: EXPECT_EQ(area, 0.0); break;
      case AnomalyKind::local: EXPECT_EQ(area, 64.0); break;
      case AnomalyKind::global: EXPECT_EQ(area, 1024.0); break;
      case AnomalyKind::quadrant: EXPECT_EQ(area, 512.0); break;
    }
  }
}

TEST(Synthetic, QuadrantSwapKeepsTheHistogram) {
  const SyntheticSpec spec = small_spec(7);
  Tensor img = normal_image(spec, 11);
  const Tensor before = img;
  const Tensor mask = swap_quadrants(img);
  std::vector<double> a(before.data().begin(), before.data().end()), b(img.data().begin(), img.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(px(img, 0, 0, 0), px(before, 0, 16, 16));
  EXPECT_EQ(px(img, 0, 0, 31), px(before, 0, 0, 31));
  EXPECT_EQ(mask.at(20, 20), 1.0);
  EXPECT_EQ(mask.at(0, 20), 0.0);
  swap_quadrants(img);
  EXPECT_EQ(img, before);
}

TEST(Synthetic, LocalInjectionOffsetsTheSquareOnly) {
  Tensor img(Shape{2, 16, 16}, 0.5);
  const Tensor mask = inject_local(img, 4, -0.25, 3, 5);
  EXPECT_EQ(total(mask), 16.0);
  EXPECT_EQ(px(img, 1, 4, 6), 0.25);
  EXPECT_EQ(px(img, 1, 2, 6), 0.5);
  EXPECT_THROW(inject_local(img, 4, 0.1, 13, 0), DimensionError);
}

TEST(Synthetic, MixScheduleAndParsing) {
  const AnomalyMix mix = AnomalyMix::parse("local:2,global:2,quadrant:1");
  const auto s = mix.schedule(10);
  EXPECT_EQ(std::count(s.begin(), s.end(), AnomalyKind::local), 4);
  EXPECT_EQ(std::count(s.begin(), s.end(), AnomalyKind::quadrant), 2);
  const AnomalyMix only = AnomalyMix::parse("quadrant:1");
  EXPECT_EQ(only.local, 0u);
  EXPECT_EQ(AnomalyMix::parse(only.to_string()).to_string(), only.to_string());
  for (std::size_t n : {1, 3, 7}) EXPECT_EQ(mix.schedule(n).size(), n);
  EXPECT_THROW(AnomalyMix::parse("stripes:1"), ConfigError);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, TextRoundTrip) {
  RunConfig c;
  c.seed = 42;
  c.set("views", "inter");
  c.set("lr", "0.003");
  c.set("ablate_banks", "mean,coreset");
  c.set("entropy_reduction", "sum");
  c.set("standardize", "off");
  const RunConfig d = RunConfig::parse(c.to_text());
  EXPECT_EQ(d.to_text(), c.to_text());
  EXPECT_EQ(d.train.lr, 0.003);
  EXPECT_EQ(d.ablate_banks.size(), 2u);
  EXPECT_FALSE(d.standardize);
  EXPECT_EQ(d.train.weights.entropy_reduction, EntropyReduction::sum);
}

TEST(Config, CommentsBlankLinesAndErrors) {
  const RunConfig c = RunConfig::parse("# header\n\nseed = 3  # trailing\n  epochs=5\n");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train.epochs, 5u);
  EXPECT_THROW(RunConfig::parse("sead = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("seed\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("epochs = many\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("entropy = maybe\n"), ConfigError);
}

TEST(Config, EveryKeyIsListedAndSettable) {
  const RunConfig c;
  std::istringstream lines(c.to_text());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const std::string key = line.substr(0, line.find(" = "));
    EXPECT_EQ(key, RunConfig::keys()[n++]);
  }
  EXPECT_EQ(n, RunConfig::keys().size());
}

TEST(Config, DerivedSeedsDifferButAreStable) {
  RunConfig a, b;
  a.seed = b.seed = 9;
  EXPECT_EQ(a.extractor_seed(), b.extractor_seed());
  EXPECT_NE(a.bank_seed(8), a.bank_seed(16));
  EXPECT_NE(a.data_spec().seed, a.train_config().seed);
  b.seed = 10;
  EXPECT_NE(a.data_spec().seed, b.data_spec().seed);
}

// ---------------------------------------------------------------------------
// Tensor files

TEST(TensorFile, RoundTripsEveryRank) {
  Rng rng(8);
  for (const Shape& s : {Shape{5}, Shape{2, 3}, Shape{2, 1, 4}, Shape{1, 2, 3, 2}}) {
    const Tensor t = rand_tensor(rng, s, -1e3, 1e3);
    EXPECT_EQ(decode_tensor(encode_tensor(t)), t);
  }
  const std::string bytes = encode_tensor(Tensor::vector({1.5}));
  EXPECT_EQ(bytes.size(), 4u + 1 + 1 + 4 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "FODT");
}

TEST(TensorFile, CorruptInputReportsTheOffset) {
  const std::string good = encode_tensor(Tensor::matrix({{1, 2}, {3, 4}}));
  std::string bad = good;
  bad[0] = 'X';
  try {
    decode_tensor(bad);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = good;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_tensor(bad), FormatError);
  EXPECT_THROW(decode_tensor(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(decode_tensor(good + "x"), FormatError);
}

TEST(TensorFile, TablesAndBanksRoundTrip) {
  Rng rng(9);
  const NamedTensors t{{"alpha", rand_tensor(rng, {3})}, {"beta", rand_tensor(rng, {2, 2})}};
  const NamedTensors back = decode_table(encode_table(t));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(table_entry(back, "beta"), t[1].second);
  EXPECT_EQ(find_entry(back, "gamma"), nullptr);
  EXPECT_THROW(table_entry(back, "gamma"), FormatError);
  EXPECT_THROW(decode_tensor(encode_table(t)), FormatError);

  ReferenceBank bank;
  bank.kind = BankKind::prototype;
  bank.features = rand_tensor(rng, {4, 3});
  bank.positions = grid_positions({2, 2});
  const ReferenceBank rb = bank_from_table(bank_to_table(bank));
  EXPECT_EQ(rb.kind, bank.kind);
  EXPECT_EQ(rb.features, bank.features);
  EXPECT_EQ(*rb.positions, *bank.positions);
  bank.positions.reset();
  EXPECT_FALSE(bank_from_table(bank_to_table(bank)).has_positions());

  const fs::path p = fs::path(::testing::TempDir()) / "fod_table_roundtrip.fodt";
  write_table(p, t);
  EXPECT_EQ(read_table(p)[0].second, t[0].second);
  fs::remove(p);
  EXPECT_THROW(read_tensor(p), Error);
}

TEST(TensorFile, ModelsRoundTripThroughTables) {
  ToyProblem a = make_toy(10), b = make_toy(11);
  load_model_table(b.model, model_to_table(a.model));
  EXPECT_EQ(forward(a.x, a.bank, a.model).xhat.value(), forward(a.x, a.bank, b.model).xhat.value());
  NamedTensors broken = model_to_table(a.model);
  broken.pop_back();
  EXPECT_THROW(load_model_table(b.model, broken), Error);
}

// ---------------------------------------------------------------------------
// Feature standardization

TEST(FeatureStandardizer, FitsTrainingStatistics) {
  Rng rng(12);
  std::vector<FeatureSequence> train;
  for (int k = 0; k < 3; ++k) train.push_back({rand_tensor(rng, {4, 3}, 2, 6), {2, 2}, 8});
  for (std::size_t i = 0; i < 4; ++i) train[1].features.at(i, 2) = train[0].features.at(0, 2);
  for (auto& f : train)
    for (std::size_t i = 0; i < 4; ++i) f.features.at(i, 2) = 1.25;  // constant dimension
  const FeatureStandardizer st = FeatureStandardizer::fit(train);
  for (auto& f : train) st.apply(f);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, v = 0.0;
    for (const auto& f : train)
      for (std::size_t i = 0; i < 4; ++i) m += f.features.at(i, c) / 12.0;
    for (const auto& f : train)
      for (std::size_t i = 0; i < 4; ++i) v += (f.features.at(i, c) - m) * (f.features.at(i, c) - m) / 12.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
  for (const auto& f : train) EXPECT_EQ(f.features.at(1, 2), 0.0);
  EXPECT_THROW(FeatureStandardizer::fit(std::vector<FeatureSequence>{}), ConfigError);
  FeatureSequence wrong{Tensor(Shape{4, 5}), {2, 2}, 8};
  EXPECT_THROW(st.apply(wrong), DimensionError);
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct CliResult {
  int code;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const fs::path log = fs::path(::testing::TempDir()) / "fod_cli_output.txt";
  const std::string cmd = std::string(FOD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) / "fod_cli_run";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    cfg_ = dir_ / "tiny.cfg";
    std::ofstream(cfg_) << "height = 32\nwidth = 32\nn_train = 4\nn_test_normal = 3\nn_test_anomalous = 3\n"
                           "anomaly_size = 8\nproj_dim = 8\nd_model = 8\nheads = 2\nlayers = 1\nepochs = 2\n"
                           "ablate_views = patch,full\nablate_entropy = on\nablate_banks = mean\n"
                           "ablate_criteria = rec,recdiv\n";
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string common() const { return "--config " + cfg_.string() + " --out " + dir_.string(); }

  fs::path dir_, cfg_;
};

}  // namespace

TEST_F(Cli, GenTrainEvalIsReproducible) {
  ASSERT_EQ(run_cli("gen " + common()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / run_files::kDataset));
  const CliResult tr = run_cli("train " + common());
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_TRUE(fs::exists(dir_ / run_files::model(8)));
  EXPECT_TRUE(fs::exists(dir_ / run_files::history(16)));
  const CliResult e1 = run_cli("eval " + common());
  const CliResult e2 = run_cli("eval " + common());
  ASSERT_EQ(e1.code, 0) << e1.out;
  EXPECT_NE(e1.out.find("image_auroc="), std::string::npos);
  EXPECT_EQ(e1.out, e2.out);
  const CliResult sc = run_cli("score " + common());
  ASSERT_EQ(sc.code, 0) << sc.out;
  EXPECT_TRUE(fs::exists(dir_ / run_files::kImageScores));
  EXPECT_EQ(run_cli("eval " + common()).out, e1.out);
}

TEST_F(Cli, AblationWritesOneRowPerCell) {
  const CliResult r = run_cli("ablate " + common());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream csv(dir_ / run_files::kAblation);
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "views,entropy,bank,criterion,image_auroc,pixel_auroc");
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("eval --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("").code, 2);
  const CliResult missing = run_cli("train " + common());
  EXPECT_EQ(missing.code, 2);
  EXPECT_EQ(missing.out.rfind("error: usage: ", 0), 0u) << missing.out;
  const CliResult bad = run_cli("gen " + common() + " --bank knn");
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(bad.out.rfind("error: config: ", 0), 0u) << bad.out;
}

TEST_F(Cli, CorruptArtifactsExitOne) {
  ASSERT_EQ(run_cli("gen " + common()).code, 0);
  std::ofstream(dir_ / run_files::kDataset, std::ios::binary) << "junk";
  const CliResult r = run_cli("eval " + common());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out.rfind("error: format: ", 0), 0u) << r.out;
}
