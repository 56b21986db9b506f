#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "kpl/data.hpp"
#include "kpl/error.hpp"
#include "kpl/idm.hpp"
#include "support/expect.hpp"

namespace {

using namespace kpl;
using namespace kpl::data;

std::vector<PlatoonTrajectory> parse(const std::string& text, double dt = 0.1) {
  std::istringstream in(text);
  return parse_trajectory_csv(in, dt, "test.csv");
}

const std::string kTinyCsv =
    "traj_id,step,vehicle,position_m,velocity_mps,accel_mps2\n"
    "a,0,0,100,20,0\n"
    "a,0,1,90,18,0.1\n"
    "a,1,0,102,20,0\n"
    "a,1,1,91.8,18.1,0.1\n"
    "a,2,0,104,20,0\n"
    "a,2,1,93.61,18.2,0.1\n";

StateSequence sequence_from(const Eigen::MatrixXd& states, const Eigen::VectorXd& u,
                            std::string id = "s") {
  StateSequence s;
  s.id = std::move(id);
  s.n_followers = static_cast<int>(states.cols() / 3);
  s.states = states;
  s.controls = u;
  s.leader_position = Eigen::VectorXd::Zero(states.rows());
  s.leader_velocity = Eigen::VectorXd::Zero(states.rows());
  return s;
}

TEST(TrajectoryCsv, TinyFileGivesOneSequenceWithOneFollower) {
  const auto trajs = parse(kTinyCsv);
  ASSERT_EQ(trajs.size(), 1u);
  EXPECT_EQ(trajs[0].n_followers(), 1);
  EXPECT_EQ(trajs[0].steps(), 3u);
  const auto seq = derive_states(trajs[0]);
  EXPECT_EQ(seq.n_followers, 1);
  EXPECT_EQ(seq.steps(), 3);
}

TEST(TrajectoryCsv, ColumnOrderDoesNotMatter) {
  const auto trajs = parse(
      "vehicle,step,traj_id,accel_mps2,velocity_mps,position_m\n"
      "0,0,a,0,20,100\n1,0,a,0,18,90\n0,1,a,0,20,102\n1,1,a,0,18,91.8\n");
  ASSERT_EQ(trajs.size(), 1u);
  EXPECT_DOUBLE_EQ(trajs[0].vehicles[1].position[1], 91.8);
}

TEST(TrajectoryCsv, FollowerAheadOfLeaderIsRejected) {
  KPL_EXPECT_THROW_WITH(parse("traj_id,step,vehicle,position_m,velocity_mps,accel_mps2\n"
                              "a,0,0,100,20,0\na,0,1,100,18,0\n"
                              "a,1,0,102,20,0\na,1,1,101,18,0\n"),
                        InputError, "non-positive spacing");
}

TEST(TrajectoryCsv, EmptyFileHasNoTrajectories) {
  KPL_EXPECT_THROW_WITH(parse(""), InputError, "no trajectories");
  KPL_EXPECT_THROW_WITH(parse("traj_id,step,vehicle,position_m,velocity_mps,accel_mps2\n"),
                        InputError, "no trajectories");
}

TEST(TrajectoryCsv, MissingColumnIsNamed) {
  KPL_EXPECT_THROW_WITH(parse("traj_id,step,vehicle,position_m,velocity_mps\na,0,0,1,1\n"),
                        InputError, "accel_mps2");
}

TEST(TrajectoryCsv, NonUniformStepCountIsRejected) {
  KPL_EXPECT_THROW_WITH(parse("traj_id,step,vehicle,position_m,velocity_mps,accel_mps2\n"
                              "a,0,0,100,20,0\na,0,1,90,18,0\n"
                              "a,1,0,102,20,0\na,1,1,92,18,0\na,2,0,104,20,0\n"),
                        InputError, "non-uniform step count");
}

TEST(TrajectoryCsv, NonPositiveDtIsRejected) {
  EXPECT_THROW(parse(kTinyCsv, 0.0), InputError);
}

TEST(TrajectoryCsv, WriteThenReadRoundTripsExactly) {
  auto trajs = parse(kTinyCsv);
  trajs[0].vehicles[1].position[2] = 93.61000000000001;  // needs all 17 digits
  std::ostringstream out;
  write_trajectory_csv(out, trajs);
  const auto again = parse(out.str());
  ASSERT_EQ(again.size(), 1u);
  for (std::size_t v = 0; v < 2; ++v) {
    EXPECT_EQ(again[0].vehicles[v].position, trajs[0].vehicles[v].position);
    EXPECT_EQ(again[0].vehicles[v].velocity, trajs[0].vehicles[v].velocity);
    EXPECT_EQ(again[0].vehicles[v].acceleration, trajs[0].vehicles[v].acceleration);
  }
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), kTrajectoryCsvHeader);
}

TEST(LoadTrajectories, MissingPathSaysDataNotFound) {
  KPL_EXPECT_THROW_WITH(load_trajectories("/nonexistent/kpl/data", 0.1), InputError,
                        "data not found");
}

TEST(LoadTrajectories, DirectoryIsSortedById) {
  const auto dir = std::filesystem::temp_directory_path() / "kpl_test_load_dir";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto trajs = parse(kTinyCsv);
  trajs[0].id = "zeta";
  write_trajectory_csv(dir / "a.csv", trajs);
  trajs[0].id = "alpha";
  write_trajectory_csv(dir / "b.csv", trajs);
  const auto ds = load_trajectories(dir, 0.1);
  ASSERT_EQ(ds.sequences.size(), 2u);
  EXPECT_EQ(ds.sequences[0].id, "alpha");
  EXPECT_EQ(ds.sequences[1].id, "zeta");
  std::filesystem::remove_all(dir);
}

TEST(DeriveStates, DirectFormula) {
  PlatoonTrajectory t;
  t.id = "x";
  t.vehicles.resize(2);
  t.vehicles[0] = {{100, 101}, {20, 20}, {0.5, 0.5}};
  t.vehicles[1] = {{90, 91}, {18, 18}, {0, 0}};
  const auto s = derive_states(t);
  EXPECT_DOUBLE_EQ(s.states(0, spacing_column(1, 1)), 10.0);
  EXPECT_DOUBLE_EQ(s.states(0, velocity_column(1, 1)), 18.0);
  EXPECT_DOUBLE_EQ(s.states(0, speed_diff_column(1, 1)), -2.0);
  EXPECT_DOUBLE_EQ(s.controls(0), 0.5);
  EXPECT_DOUBLE_EQ(s.leader_position(1), 101.0);
}

TEST(DeriveStates, EqualSpeedsAndZeroLeaderAccel) {
  PlatoonTrajectory t;
  t.vehicles.resize(3);
  t.vehicles[0] = {{50, 52, 54}, {20, 20, 20}, {0, 0, 0}};
  t.vehicles[1] = {{40, 42, 44}, {20, 20, 20}, {0, 0, 0}};
  t.vehicles[2] = {{30, 32, 34}, {20, 20, 20}, {0, 0, 0}};
  const auto s = derive_states(t);
  EXPECT_TRUE(s.states.rightCols(2).isZero(0.0));
  EXPECT_TRUE(s.controls.isZero(0.0));
}

TEST(LeaderProfile, SinusoidValues) {
  const LeaderProfile p{LeaderProfileKind::sinusoid, 1.0, 0.05, 0.0};
  const auto a = generate_leader_profile(p, 60, 0.1);
  EXPECT_EQ(a[0], 0.0);
  EXPECT_NEAR(a[50], 1.0, 1e-15);  // k*dt = 5 s, a quarter period
}

TEST(LeaderProfile, StopAndGoStartsWithBraking) {
  const LeaderProfile p{LeaderProfileKind::stop_and_go, 1.0, 0.1, 0.0};  // period 10 s
  const auto a = generate_leader_profile(p, 200, 0.1);
  EXPECT_EQ(a[20], -1.0);   // t = 2 s
  EXPECT_EQ(a[70], 1.0);    // t = 7 s
  EXPECT_EQ(a[120], -1.0);  // t = 12 s, next period
}

TEST(LeaderProfile, ConstantIsBias) {
  const LeaderProfile p{LeaderProfileKind::constant, 0.0, 0.0, 0.25};
  for (double v : generate_leader_profile(p, 10, 0.1)) EXPECT_EQ(v, 0.25);
}

TEST(LeaderProfile, NegativeParametersAreRejected) {
  EXPECT_THROW(generate_leader_profile({LeaderProfileKind::sinusoid, -1.0, 0.1, 0}, 10, 0.1),
               InputError);
  EXPECT_THROW(generate_leader_profile({LeaderProfileKind::sinusoid, 1.0, -0.1, 0}, 10, 0.1),
               InputError);
  EXPECT_THROW(generate_leader_profile({LeaderProfileKind::sinusoid, 1.0, 0.1, 0}, 0, 0.1),
               InputError);
}

std::vector<FollowerInit> equilibrium_followers(int n, double v, const IdmParams& p = {}) {
  std::vector<FollowerInit> f(n);
  for (auto& x : f) x = {p, idm_equilibrium_spacing(v, p), v};
  return f;
}

TEST(SimulatePlatoon, EquilibriumIsAFixedPoint) {
  const double v = 15.0;
  const auto followers = equilibrium_followers(5, v);
  const std::vector<double> accel(350, 0.0);
  const auto traj = simulate_platoon({0.0, v}, accel, followers, 0.1);
  const auto s = derive_states(traj);
  double worst = 0.0;
  for (Eigen::Index k = 1; k < s.steps(); ++k) {
    worst = std::max(worst, (s.states.row(k) - s.states.row(k - 1)).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(SimulatePlatoon, JamStandsStill) {
  const IdmParams p;
  std::vector<FollowerInit> followers(3, FollowerInit{p, p.s0, 0.0});
  const auto traj = simulate_platoon({50.0, 0.0}, std::vector<double>(100, 0.0), followers, 0.1);
  for (const auto& veh : traj.vehicles) {
    for (std::size_t k = 0; k < veh.position.size(); ++k) {
      EXPECT_EQ(veh.position[k], veh.position[0]);
      EXPECT_EQ(veh.velocity[k], 0.0);
    }
  }
}

TEST(SimulatePlatoon, SinusoidalLeaderKeepsSpacingsPositiveAndBounded) {
  const LeaderProfile prof{LeaderProfileKind::sinusoid, 0.5, 0.05, 0.0};  // period 20 s
  const auto accel = generate_leader_profile(prof, 350, 0.1);
  const auto traj = simulate_platoon({0.0, 15.0}, accel, equilibrium_followers(5, 15.0), 0.1);
  const auto s = derive_states(traj);
  const Eigen::MatrixXd spacing = s.states.leftCols(5);
  EXPECT_GT(spacing.minCoeff(), kCollisionSpacing);
  EXPECT_LT(spacing.maxCoeff(), 200.0);
}

TEST(SimulatePlatoon, SemiImplicitEulerLeader) {
  const std::vector<double> accel{1.0, 1.0, 0.0};
  const auto traj = simulate_platoon({0.0, 10.0}, accel, equilibrium_followers(1, 10.0), 0.1);
  const auto& L = traj.vehicles[0];
  EXPECT_DOUBLE_EQ(L.velocity[1], 10.1);
  EXPECT_DOUBLE_EQ(L.position[1], 0.0 + 10.1 * 0.1);
  EXPECT_DOUBLE_EQ(L.velocity[2], 10.2);
  EXPECT_DOUBLE_EQ(L.position[2], L.position[1] + 10.2 * 0.1);
}

TEST(SimulatePlatoon, VelocityClampRecordsEffectiveAcceleration) {
  const std::vector<double> accel{-5.0, -5.0, -5.0};
  const IdmParams p;
  const auto traj =
      simulate_platoon({0.0, 0.2}, accel, std::vector<FollowerInit>{{p, 30.0, 0.0}}, 0.1);
  EXPECT_EQ(traj.vehicles[0].velocity[1], 0.0);
  EXPECT_NEAR(traj.vehicles[0].acceleration[0], -2.0, 1e-12);
  EXPECT_EQ(traj.vehicles[0].acceleration[1], 0.0);
}

TEST(SimulatePlatoon, CollisionNamesStepAndFollower) {
  const IdmParams p;
  // With a 3 s step the follower covers 60 m before it can react to a
  // leader that stops dead, overrunning its ~36 m equilibrium gap.
  std::vector<FollowerInit> f{{p, idm_equilibrium_spacing(20.0, p), 20.0}};
  KPL_EXPECT_THROW_WITH(simulate_platoon({0.0, 20.0}, std::vector<double>(10, -100.0), f, 3.0),
                        NumericalError, "collision at step 1, follower 1");
}

TEST(Corpus, DefaultShapeMatchesExperimentalSetup) {
  const auto corpus = generate_corpus(CorpusConfig{});
  EXPECT_TRUE(corpus.failures.empty());
  ASSERT_EQ(corpus.trajectories.size(), 50u);
  for (const auto& t : corpus.trajectories) {
    EXPECT_EQ(t.trajectory.steps(), 350u);
    EXPECT_EQ(t.trajectory.vehicles.size(), 6u);
  }
}

TEST(Corpus, ParametersStayWithinHeterogeneityBand) {
  CorpusConfig cfg;
  cfg.n_trajectories = 10;
  const auto corpus = generate_corpus(cfg);
  const IdmParams n;
  for (const auto& t : corpus.trajectories) {
    for (const auto& p : t.params) {
      EXPECT_LE(std::abs(p.v0 / n.v0 - 1), 0.2 + 1e-12);
      EXPECT_LE(std::abs(p.T / n.T - 1), 0.2 + 1e-12);
      EXPECT_LE(std::abs(p.s0 / n.s0 - 1), 0.2 + 1e-12);
      EXPECT_LE(std::abs(p.a_max / n.a_max - 1), 0.2 + 1e-12);
      EXPECT_LE(std::abs(p.b / n.b - 1), 0.2 + 1e-12);
      EXPECT_LE(std::abs(p.delta / n.delta - 1), 0.2 + 1e-12);
    }
  }
}

TEST(Corpus, SeedChangesDataButNotSchema) {
  CorpusConfig a, b;
  a.n_trajectories = b.n_trajectories = 3;
  b.seed = a.seed + 1;
  const auto ca = generate_corpus(a), cb = generate_corpus(b);
  ASSERT_EQ(ca.trajectories.size(), cb.trajectories.size());
  EXPECT_EQ(ca.trajectories[0].trajectory.id, cb.trajectories[0].trajectory.id);
  EXPECT_EQ(ca.trajectories[0].trajectory.steps(), cb.trajectories[0].trajectory.steps());
  EXPECT_NE(ca.trajectories[0].trajectory.vehicles[1].position,
            cb.trajectories[0].trajectory.vehicles[1].position);
}

TEST(Corpus, SameSeedIsBitIdentical) {
  CorpusConfig cfg;
  cfg.n_trajectories = 4;
  const auto a = generate_corpus(cfg), b = generate_corpus(cfg);
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    for (std::size_t v = 0; v < 6; ++v) {
      EXPECT_EQ(a.trajectories[i].trajectory.vehicles[v].position,
                b.trajectories[i].trajectory.vehicles[v].position);
    }
  }
}

TEST(Corpus, ZeroStepsIsAConfigurationError) {
  CorpusConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(generate_corpus(cfg), InputError);
}

Dataset numbered_dataset(int n) {
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    ds.sequences.push_back(
        sequence_from(Eigen::MatrixXd::Constant(3, 3, i + 1), Eigen::VectorXd::Zero(3),
                      "seq" + std::to_string(i)));
  }
  return ds;
}

TEST(Split, FortyTenPartition) {
  const auto ds = numbered_dataset(50);
  const auto [train, test] = split_dataset(ds, 0.8, 3);
  EXPECT_EQ(train.sequences.size(), 40u);
  EXPECT_EQ(test.sequences.size(), 10u);
  std::set<std::string> ids;
  for (const auto& s : train.sequences) ids.insert(s.id);
  for (const auto& s : test.sequences) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 50u);
}

TEST(Split, DeterministicPerSeed) {
  const auto ds = numbered_dataset(20);
  const auto a = split_dataset(ds, 0.8, 11).second;
  const auto b = split_dataset(ds, 0.8, 11).second;
  const auto c = split_dataset(ds, 0.8, 12).second;
  std::vector<std::string> ia, ib, ic;
  for (const auto& s : a.sequences) ia.push_back(s.id);
  for (const auto& s : b.sequences) ib.push_back(s.id);
  for (const auto& s : c.sequences) ic.push_back(s.id);
  EXPECT_EQ(ia, ib);
  EXPECT_NE(ia, ic);
}

TEST(Split, SingleSequenceLeavesNothingToTrainOn) {
  KPL_EXPECT_THROW_WITH(split_dataset(numbered_dataset(1), 0.8, 0), InputError,
                        "empty train split");
}

TEST(Normalization, PopulationStdAndDegenerateColumn) {
  Eigen::MatrixXd states(2, 3);
  states << 1, 5, 0.5, 3, 5, -0.5;
  Dataset ds;
  ds.sequences.push_back(sequence_from(states, Eigen::Vector2d(2.0, -2.0)));
  const auto scales = fit_normalization(ds);
  EXPECT_DOUBLE_EQ(scales.state(0), 1.0);  // {1, 3}
  EXPECT_DOUBLE_EQ(scales.state(1), 1.0);  // constant column
  EXPECT_DOUBLE_EQ(scales.state(2), 0.5);
  EXPECT_DOUBLE_EQ(scales.control, 2.0);
  const Eigen::VectorXd x = states.row(0).transpose();
  EXPECT_EQ(scales.apply_state(x)(0), 1.0);
  EXPECT_EQ(scales.apply_state(x)(1), 5.0);
}

TEST(Normalization, RoundTripIsIdentity) {
  NormScales s;
  s.state = Eigen::VectorXd::LinSpaced(15, 0.3, 7.1);
  s.control = 0.37;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 20.0);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x(15);
    for (auto& v : x) v = g(rng);
    const Eigen::VectorXd back = s.invert_state(s.apply_state(x));
    EXPECT_LE((back - x).norm(), 1e-12 * x.norm());
    const double u = g(rng);
    EXPECT_NEAR(s.invert_control(s.apply_control(u)), u, 1e-12 * std::abs(u));
  }
}

TEST(Episodes, ScaledWhenScalesGiven) {
  Dataset ds;
  Eigen::MatrixXd states = Eigen::MatrixXd::Constant(4, 3, 2.0);
  ds.sequences.push_back(sequence_from(states, Eigen::VectorXd::Constant(4, 3.0)));
  NormScales s;
  s.state = Eigen::Vector3d(2.0, 4.0, 1.0);
  s.control = 3.0;
  const auto eps = to_episodes(ds, s);
  ASSERT_EQ(eps.size(), 1u);
  EXPECT_DOUBLE_EQ(eps[0].states(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(eps[0].controls(2), 1.0);
  const auto raw = to_episodes(ds, std::nullopt);
  EXPECT_DOUBLE_EQ(raw[0].states(0, 1), 2.0);
}

}  // namespace
