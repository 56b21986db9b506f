#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "kpl/error.hpp"
#include "kpl/model_io.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

namespace {

using namespace kpl;

koopman::KoopmanModel sample_model() {
  std::mt19937_64 rng(5);
  koopman::KoopmanModel m;
  m.encoder = koopman::Encoder::random(6, {7, 5}, 3, 11);
  m.op.A = kpl::testing::random_matrix(9, 9, rng, 0.3);
  m.op.B = kpl::testing::random_matrix(9, 1, rng);
  m.scales.state = Eigen::VectorXd::LinSpaced(6, 0.1, 3.3);
  m.scales.control = 0.4375;
  m.n_followers = 2;
  m.dt = 0.1;
  return m;
}

TEST(ModelIo, KoopmanRoundTripIsLossless) {
  const auto m = sample_model();
  const auto text = io::serialize(m);
  const auto back = io::parse_koopman(text);
  EXPECT_EQ(back.op.A, m.op.A);
  EXPECT_EQ(back.op.B, m.op.B);
  EXPECT_EQ(back.scales.state, m.scales.state);
  EXPECT_EQ(back.scales.control, m.scales.control);
  EXPECT_EQ(back.n_followers, 2);
  EXPECT_EQ(back.dt, 0.1);
  ASSERT_EQ(back.encoder.layers().size(), m.encoder.layers().size());
  for (std::size_t l = 0; l < m.encoder.layers().size(); ++l) {
    EXPECT_EQ(back.encoder.layers()[l].weights, m.encoder.layers()[l].weights);
    EXPECT_EQ(back.encoder.layers()[l].bias, m.encoder.layers()[l].bias);
  }
  EXPECT_EQ(io::serialize(back), text);
}

TEST(ModelIo, SaveLoadSaveIsByteIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "kpl_model_io";
  std::filesystem::create_directories(dir);
  const auto m = sample_model();
  io::save_model(m, dir / "a.json");
  io::save_model(io::load_model(dir / "a.json"), dir / "b.json");
  std::ifstream a(dir / "a.json"), b(dir / "b.json");
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(io::peek_kind(dir / "a.json"), io::ModelKind::koopman);
  std::filesystem::remove_all(dir);
}

TEST(ModelIo, ReloadedModelRollsOutIdentically) {
  const auto m = sample_model();
  const auto back = io::parse_koopman(io::serialize(m));
  const std::vector<double> u{0.1, -0.2, 0.3, 0.0, 0.5};
  const Eigen::VectorXd x0 = Eigen::VectorXd::LinSpaced(6, 1, 2);
  EXPECT_EQ(koopman::rollout_physical(x0, u, back), koopman::rollout_physical(x0, u, m));
}

TEST(ModelIo, TruncatedFileIsAnInputError) {
  const auto text = io::serialize(sample_model());
  KPL_EXPECT_THROW_WITH(io::parse_koopman(text.substr(0, text.size() / 2)), InputError,
                        "corrupt model file");
}

TEST(ModelIo, VersionAndKindAreChecked) {
  auto text = io::serialize(sample_model());
  const auto pos = text.find("\"version\": 1");
  ASSERT_NE(pos, std::string::npos);
  auto bumped = text;
  bumped.replace(pos, 12, "\"version\": 2");
  KPL_EXPECT_THROW_WITH(io::parse_koopman(bumped), InputError, "unsupported model version 2");
  KPL_EXPECT_THROW_WITH(io::parse_dmdc(text), InputError, "model kind 'koopman'");
}

TEST(ModelIo, DmdcRoundTrip) {
  std::mt19937_64 rng(2);
  io::DmdcArtifact art{{kpl::testing::random_matrix(6, 6, rng), kpl::testing::random_matrix(6, 1, rng), 7},
                       2, 0.1};
  const auto back = io::parse_dmdc(io::serialize(art));
  EXPECT_EQ(back.model.A, art.model.A);
  EXPECT_EQ(back.model.B, art.model.B);
  EXPECT_EQ(back.model.rank_used, 7);
  EXPECT_EQ(back.n_followers, 2);
}

TEST(ModelIo, ShapeMismatchIsRejected) {
  auto text = io::serialize(sample_model());
  const auto pos = text.find("\"m\": 9");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 6, "\"m\": 8");
  EXPECT_THROW(io::parse_koopman(text), InputError);
}

}  // namespace
