#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "kpl/commands.hpp"
#include "kpl/config.hpp"
#include "kpl/error.hpp"
#include "kpl/model_io.hpp"
#include "support/expect.hpp"

namespace {

namespace fs = std::filesystem;
using namespace kpl;
using namespace kpl::cli;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  parse_config(cfg, in, "test.cfg");
  return cfg;
}

TEST(Config, DefaultsMirrorTheExperimentalSetup) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.dt, 0.1);
  EXPECT_EQ(cfg.corpus.steps, 350u);
  EXPECT_EQ(cfg.corpus.n_trajectories, 50);
  EXPECT_EQ(cfg.corpus.n_followers, 5);
  EXPECT_EQ(cfg.train_ratio, 0.8);
  EXPECT_EQ(cfg.train.embedding_dim, 40);
  EXPECT_EQ(cfg.freq_points, 400);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto cfg = parse(
      "# run\n"
      "epochs = 12   # short\n"
      "\n"
      "hidden = 16, 8\n"
      "freq_unit = rad\n"
      "out_dir = /tmp/x\n");
  EXPECT_EQ(cfg.train.epochs, 12);
  EXPECT_EQ(cfg.train.hidden, (std::vector<int>{16, 8}));
  EXPECT_EQ(cfg.freq_unit, stability::FrequencyUnit::rad_per_s);
  EXPECT_EQ(cfg.out_dir, "/tmp/x");
  EXPECT_EQ(cfg.data_dir(), fs::path("/tmp/x") / "data");
}

TEST(Config, ErrorsNameTheLine) {
  KPL_EXPECT_THROW_WITH(parse("epochs = 3\nnot_a_key = 1\n"), InputError, "test.cfg:2");
  KPL_EXPECT_THROW_WITH(parse("epochs = many\n"), InputError, "expects an integer");
  KPL_EXPECT_THROW_WITH(parse("just text\n"), InputError, "key = value");
}

TEST(Config, ZeroStepsFailsValidation) {
  const auto cfg = parse("steps = 0\n");
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(Config, DescribeRoundTrips) {
  auto cfg = parse("seed = 9\nlambda = 0.9\nhidden = none\n");
  std::ostringstream text;
  for (const auto& [k, v] : describe(cfg)) text << k << " = " << v << "\n";
  const auto again = parse(text.str());
  EXPECT_EQ(again.seed, 9u);
  EXPECT_EQ(again.train.lambda, 0.9);
  EXPECT_TRUE(again.train.hidden.empty());
}

class CommandsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("kpl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    cfg_.out_dir = dir_;
    cfg_.corpus.n_trajectories = 5;
    cfg_.corpus.steps = 60;
    cfg_.train.epochs = 3;
    cfg_.train.window = 10;
    cfg_.train.hidden = {8};
    cfg_.train.embedding_dim = 4;
    cfg_.freq_points = 20;
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  RunConfig cfg_;
  std::ostringstream log_;
};

TEST_F(CommandsTest, SimulateWritesFilesAndManifest) {
  cmd_simulate(cfg_, log_);
  EXPECT_TRUE(fs::exists(dir_ / "data" / "traj_000.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "data" / "traj_004.csv"));
  const auto manifest = slurp(dir_ / "manifest.csv");
  EXPECT_EQ(manifest.rfind("traj_id,file,seed,", 0), 0u);
  EXPECT_NE(log_.str().find("simulated 5 of 5"), std::string::npos);
}

TEST_F(CommandsTest, SimulateIsByteIdenticalOnRerun) {
  cmd_simulate(cfg_, log_);
  const auto first = slurp(dir_ / "data" / "traj_002.csv");
  const auto manifest = slurp(dir_ / "manifest.csv");
  cmd_simulate(cfg_, log_);
  EXPECT_EQ(slurp(dir_ / "data" / "traj_002.csv"), first);
  EXPECT_EQ(slurp(dir_ / "manifest.csv"), manifest);
}

TEST_F(CommandsTest, TrainWithoutDataSaysDataNotFound) {
  KPL_EXPECT_THROW_WITH(cmd_train(cfg_, log_), InputError, "data not found");
}

TEST_F(CommandsTest, FullPipelineProducesEveryReport) {
  cmd_simulate(cfg_, log_);
  cmd_train(cfg_, log_);
  EXPECT_TRUE(fs::exists(dir_ / "model.json"));
  EXPECT_TRUE(fs::exists(dir_ / "dmdc_model.json"));
  EXPECT_EQ(slurp(dir_ / "loss_curve.csv").rfind("epoch,loss\n1,", 0), 0u);
  EXPECT_NE(log_.str().find("held-out rollout RMSE"), std::string::npos);

  std::ostringstream eval_log;
  cmd_eval(cfg_, {}, eval_log);
  const auto agg = slurp(dir_ / "comparison_aggregate.csv");
  EXPECT_NE(agg.find("koopman"), std::string::npos);
  EXPECT_NE(agg.find("dmdc"), std::string::npos);
  EXPECT_NE(agg.find("idm"), std::string::npos);
  for (const char* f : {"comparison.csv", "phase_plane.csv", "reproduced_koopman.csv",
                        "reproduced_dmdc.csv", "reproduced_idm.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }

  std::ostringstream stab;
  try {
    cmd_stability(cfg_, {}, stab);
  } catch (const NumericalError&) {
    // A briefly trained operator may lack a principal logarithm; the eigen
    // report is still written.
  }
  EXPECT_EQ(slurp(dir_ / "eigenvalues.csv").rfind("index,re,im,magnitude\n", 0), 0u);
  EXPECT_NE(stab.str().find("local stability:"), std::string::npos);

  std::ostringstream roll;
  const std::vector<fs::path> dmdc{dir_ / "dmdc_model.json"};
  cmd_rollout(cfg_, dmdc, roll);
  EXPECT_TRUE(fs::exists(dir_ / "rollout_dmdc.csv"));
}

TEST_F(CommandsTest, EvalNamesBothDimensionsOnMismatch) {
  cmd_simulate(cfg_, log_);
  cmd_train(cfg_, log_);
  auto other = cfg_;
  other.corpus.n_followers = 3;
  other.data_path = dir_ / "data3";
  cmd_simulate(other, log_);
  KPL_EXPECT_THROW_WITH(cmd_eval(other, {}, log_), InputError,
                        "model expects n_followers = 5 (n_x = 15) but the data has n_followers = "
                        "3 (n_x = 9)");
}

TEST_F(CommandsTest, StabilityOfAHalvingOperator) {
  koopman::KoopmanModel m;
  m.encoder = koopman::Encoder(6, {}, 0);
  m.op.A = 0.5 * Eigen::MatrixXd::Identity(6, 6);
  m.op.B = Eigen::VectorXd::Constant(6, 0.1);
  m.scales = data::NormScales::identity(6);
  m.n_followers = 2;
  fs::create_directories(dir_);
  io::save_model(m, dir_ / "half.json");
  const std::vector<fs::path> files{dir_ / "half.json"};
  cmd_stability(cfg_, files, log_);
  EXPECT_NE(log_.str().find("local stability: asymptotically stable"), std::string::npos);
  EXPECT_NE(log_.str().find("peak gain"), std::string::npos);
  const auto first = slurp(dir_ / "frequency_response.csv");
  EXPECT_EQ(first.rfind("freq_hz,gain\n", 0), 0u);
  cmd_stability(cfg_, files, log_);
  EXPECT_EQ(slurp(dir_ / "frequency_response.csv"), first);
}

TEST_F(CommandsTest, StabilityReportsLocalInstability) {
  koopman::KoopmanModel m;
  m.encoder = koopman::Encoder(3, {}, 0);
  m.op.A = Eigen::Vector3d(1.02, 0.5, 0.3).asDiagonal();
  m.op.B = Eigen::Vector3d(0.1, 0.1, 0.1);
  m.scales = data::NormScales::identity(3);
  m.n_followers = 1;
  fs::create_directories(dir_);
  io::save_model(m, dir_ / "up.json");
  const std::vector<fs::path> files{dir_ / "up.json"};
  cmd_stability(cfg_, files, log_);
  EXPECT_NE(log_.str().find("locally unstable"), std::string::npos);
}

}  // namespace
