#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "kpl/error.hpp"
#include "kpl/evaluation.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

namespace {

using namespace kpl;
using namespace kpl::evaluation;

TEST(ReconstructPositions, ChainsFromTheLeader) {
  Eigen::MatrixXd s(1, 2);
  s << 10, 12;
  const auto y = reconstruct_positions(s, Eigen::VectorXd::Constant(1, 100.0));
  EXPECT_EQ(y(0, 0), 90.0);
  EXPECT_EQ(y(0, 1), 78.0);
  const auto z = reconstruct_positions(Eigen::MatrixXd::Zero(3, 4), Eigen::Vector3d(1, 2, 3));
  for (int k = 0; k < 3; ++k) EXPECT_TRUE((z.row(k).array() == k + 1.0).all());
}

TEST(ReconstructPositions, InvertsDeriveStates) {
  data::CorpusConfig cfg;
  cfg.n_trajectories = 3;
  for (const auto& t : data::generate_corpus(cfg).trajectories) {
    const auto seq = data::derive_states(t.trajectory);
    const auto y = reconstruct_positions(seq.states.leftCols(seq.n_followers), seq.leader_position);
    for (int i = 0; i < seq.n_followers; ++i) {
      for (Eigen::Index k = 0; k < seq.steps(); ++k) {
        EXPECT_NEAR(y(k, i), t.trajectory.vehicles[i + 1].position[k], 1e-9);
      }
    }
  }
}

TEST(ReconstructPositions, NegativeSpacingIsAllowed) {
  Eigen::MatrixXd s(1, 1);
  s << -2.0;
  EXPECT_EQ(reconstruct_positions(s, Eigen::VectorXd::Constant(1, 5.0))(0, 0), 7.0);
}

TEST(PositionMetrics, Examples) {
  Eigen::MatrixXd pred(2, 1), truth(2, 1);
  pred << 1, 2;
  truth << 1, 4;
  const auto r = position_metrics(pred, truth);
  EXPECT_DOUBLE_EQ(r.rmse, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(r.mae, 1.0);
  const auto z = position_metrics(truth, truth);
  EXPECT_EQ(z.rmse, 0.0);
  EXPECT_EQ(z.mae, 0.0);
  EXPECT_THROW(position_metrics(pred, Eigen::MatrixXd::Zero(3, 1)), InputError);
}

TEST(PositionMetrics, AgreesWithIndependentAccumulation) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd a = kpl::testing::random_matrix(50, 5, rng, 10.0);
  const Eigen::MatrixXd b = kpl::testing::random_matrix(50, 5, rng, 10.0);
  const auto r = position_metrics(a, b);
  // Reverse (column-major, backwards) accumulation.
  long double sq = 0, ab = 0;
  for (Eigen::Index i = a.size() - 1; i >= 0; --i) {
    const long double e = a.data()[i] - b.data()[i];
    sq += e * e;
    ab += std::fabs(e);
  }
  EXPECT_NEAR(r.rmse * r.rmse, static_cast<double>(sq / a.size()), 1e-10);
  EXPECT_NEAR(r.mae, static_cast<double>(ab / a.size()), 1e-12);
  ASSERT_EQ(r.per_vehicle_rmse.size(), 5u);
  for (int c = 0; c < 5; ++c) {
    EXPECT_NEAR(r.per_vehicle_rmse[c], std::sqrt((a.col(c) - b.col(c)).squaredNorm() / 50), 1e-12);
  }
}

// A two-follower sequence produced by a known linear system in state space.
struct LinearPlatoon {
  koopman::KoopmanModel model;
  data::StateSequence seq;
};

LinearPlatoon linear_platoon(int steps = 40) {
  std::mt19937_64 rng(6);
  auto sys = kpl::testing::random_stable_system(6, 7, 0.7, 0.99);
  Eigen::VectorXd x0(6);
  x0 << 20, 25, 15, 15, 0.5, -0.3;
  Eigen::VectorXd u(steps);
  for (auto& v : u) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const auto ep = kpl::testing::simulate_linear(sys, x0, u);
  LinearPlatoon lp;
  lp.model.encoder = koopman::Encoder(6, {}, 0);
  lp.model.op = {sys.A, sys.B};
  lp.model.scales = data::NormScales::identity(6);
  lp.model.n_followers = 2;
  lp.seq.id = "lin";
  lp.seq.n_followers = 2;
  lp.seq.states = ep.states;
  lp.seq.controls = u;
  lp.seq.leader_position = Eigen::VectorXd::LinSpaced(steps, 100, 200);
  lp.seq.leader_velocity = Eigen::VectorXd::Constant(steps, 15);
  return lp;
}

TEST(PhasePlane, FrozenDynamicsRepeatTheSourcePoint) {
  auto lp = linear_platoon();
  lp.model.op.A = Eigen::MatrixXd::Identity(6, 6);
  lp.model.op.B = Eigen::VectorXd::Zero(6);
  const int h = 10;
  const auto table = phase_plane_export(lp.model, lp.seq, h);
  ASSERT_EQ(table.size(), static_cast<std::size_t>(2 * (40 - h) * 3));
  for (const auto& r : table) {
    const auto kindx = r.kind == PlaneKind::speed_dv ? data::velocity_column(2, r.vehicle)
                                                     : data::spacing_column(2, r.vehicle);
    EXPECT_EQ(r.recon_x, lp.seq.states(r.step - 1, kindx));
    EXPECT_EQ(r.pred_x, lp.seq.states(r.step - h, kindx));
  }
}

TEST(PhasePlane, HorizonOneMakesPredictionEqualReconstruction) {
  const auto lp = linear_platoon();
  for (const auto& r : phase_plane_export(lp.model, lp.seq, 1)) {
    EXPECT_EQ(r.pred_x, r.recon_x);
    EXPECT_EQ(r.pred_y, r.recon_y);
  }
}

TEST(PhasePlane, PerfectLinearModelOverlaysTheTruth) {
  const auto lp = linear_platoon();
  for (const auto& r : phase_plane_export(lp.model, lp.seq, 10)) {
    EXPECT_NEAR(r.recon_x, r.truth_x, 1e-8);
    EXPECT_NEAR(r.recon_y, r.truth_y, 1e-8);
    EXPECT_NEAR(r.pred_x, r.truth_x, 1e-8);
  }
}

TEST(PhasePlane, CoversTheThreePlanesAndWritesCsv) {
  const auto lp = linear_platoon(15);
  const auto table = phase_plane_export(lp.model, lp.seq, 10);
  std::ostringstream out;
  write_phase_plane_csv(out, table);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "vehicle,step,pair_kind,truth_x,truth_y,recon_x,recon_y,pred_x,pred_y");
  EXPECT_EQ(first.rfind("1,10,spacing_speed,", 0), 0u);
  int counts[3] = {0, 0, 0};
  for (const auto& r : table) ++counts[static_cast<int>(r.kind)];
  EXPECT_EQ(counts[0], counts[1]);
  EXPECT_EQ(counts[1], counts[2]);
}

TEST(PhasePlane, SequenceMustOutlastTheHorizon) {
  const auto lp = linear_platoon(10);
  EXPECT_THROW(phase_plane_export(lp.model, lp.seq, 10), InputError);
}

data::Dataset noiseless_test_set(int n) {
  data::CorpusConfig cfg;
  cfg.n_trajectories = n;
  cfg.noise_sigma = 0.0;
  cfg.heterogeneity = 0.0;
  data::Dataset ds;
  for (const auto& t : data::generate_corpus(cfg).trajectories) {
    ds.sequences.push_back(data::derive_states(t.trajectory));
  }
  return ds;
}

TEST(CompareModels, ExactIdmRanksFirstWithNearZeroError) {
  const auto test = noiseless_test_set(3);
  const int n = test.n_followers();
  baselines::DmdcModel frozen{Eigen::MatrixXd::Identity(3 * n, 3 * n),
                              Eigen::VectorXd::Zero(3 * n), 3 * n};
  const std::vector<Predictor> models{dmdc_predictor(frozen),
                                      idm_predictor(std::vector<IdmParams>(n), 0.1)};
  const auto cmp = compare_models(test, models);
  ASSERT_EQ(cmp.aggregate.size(), 2u);
  ASSERT_EQ(cmp.rows.size(), 6u);
  EXPECT_LT(cmp.aggregate[1].rmse, 1e-8);
  EXPECT_LT(cmp.aggregate[1].rmse, cmp.aggregate[0].rmse);
  EXPECT_EQ(cmp.rows[0].model, "dmdc");
  EXPECT_EQ(cmp.rows[3].model, "idm");
}

TEST(CompareModels, DivergenceIsAFlaggedRow) {
  const auto test = noiseless_test_set(2);
  const int nx = test.state_dim();
  baselines::DmdcModel blowup{Eigen::MatrixXd::Identity(nx, nx) * 1e30,
                              Eigen::VectorXd::Zero(nx), nx};
  const std::vector<Predictor> models{dmdc_predictor(blowup)};
  const auto cmp = compare_models(test, models);
  EXPECT_TRUE(cmp.rows[0].flagged);
  EXPECT_FALSE(cmp.rows[0].note.empty());
  EXPECT_EQ(cmp.aggregate[0].flagged, 2);
  EXPECT_TRUE(std::isinf(cmp.aggregate[0].rmse));
}

TEST(CompareModels, EmptyTestSetIsAnError) {
  const std::vector<Predictor> models{idm_predictor(std::vector<IdmParams>(5), 0.1)};
  EXPECT_THROW(compare_models(data::Dataset{}, models), InputError);
}

TEST(CompareModels, CsvLayout) {
  const auto test = noiseless_test_set(2);
  const std::vector<Predictor> models{idm_predictor(std::vector<IdmParams>(5), 0.1)};
  const auto cmp = compare_models(test, models);
  std::ostringstream out;
  write_comparison_csv(out, cmp);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "model,sequence,rmse_m,mae_m");
  int rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 3);  // two sequences and the pooled row
  EXPECT_EQ(last.rfind("idm,ALL,", 0), 0u);
}

TEST(PredictedTrajectory, TruthRoundTrips) {
  const auto test = noiseless_test_set(1);
  const auto& s = test.sequences[0];
  const auto traj = predicted_trajectory(s, s.states.bottomRows(s.steps() - 1), 0.1);
  const auto again = data::derive_states(traj);
  EXPECT_LE((again.states.leftCols(5) - s.states.leftCols(5)).cwiseAbs().maxCoeff(), 1e-9);
}

}  // namespace
