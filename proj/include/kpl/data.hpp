#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kpl/idm.hpp"

namespace kpl::data {

struct VehicleTrace {
  std::vector<double> position;      // [m]
  std::vector<double> velocity;      // [m/s]
  std::vector<double> acceleration;  // [m/s^2]
};

/// Raw platoon trajectory. vehicles[0] is the leader, followers are ordered
/// front to back.
struct PlatoonTrajectory {
  std::string id;
  double dt = 0.1;
  std::vector<VehicleTrace> vehicles;

  std::size_t steps() const {
    return vehicles.empty() ? 0 : vehicles.front().position.size();
  }
  int n_followers() const { return static_cast<int>(vehicles.size()) - 1; }

  /// Checks trace lengths, dt and strict front-to-back ordering.
  void validate() const;
};

// Column layout of a car-following state row: [s_1..s_n | v_1..v_n | dv_1..dv_n].
// Follower indices are 1-based, matching vehicle numbering.
inline int spacing_column(int /*n_followers*/, int i) { return i - 1; }
inline int velocity_column(int n_followers, int i) { return n_followers + i - 1; }
inline int speed_diff_column(int n_followers, int i) {
  return 2 * n_followers + i - 1;
}

/// Car-following states derived from a trajectory. One row per step.
struct StateSequence {
  std::string id;
  int n_followers = 0;
  Eigen::MatrixXd states;           // steps x 3*n_followers
  Eigen::VectorXd controls;         // leader acceleration per step
  Eigen::VectorXd leader_position;  // per step
  Eigen::VectorXd leader_velocity;  // per step

  Eigen::Index steps() const { return states.rows(); }
  int state_dim() const { return static_cast<int>(states.cols()); }
};

/// Scale-only normalization; no mean shift so the origin stays the zero state.
struct NormScales {
  Eigen::VectorXd state;
  double control = 1.0;

  static NormScales identity(int n_x);

  Eigen::VectorXd apply_state(const Eigen::VectorXd& x) const;
  Eigen::VectorXd invert_state(const Eigen::VectorXd& x) const;
  /// Row-wise versions for steps x n_x matrices.
  Eigen::MatrixXd apply_states(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd invert_states(const Eigen::MatrixXd& rows) const;
  double apply_control(double u) const { return u / control; }
  double invert_control(double u) const { return u * control; }
  Eigen::VectorXd apply_controls(const Eigen::VectorXd& u) const;

  void validate() const;
};

struct Dataset {
  std::vector<StateSequence> sequences;
  double dt = 0.1;
  std::optional<NormScales> norm;

  int n_followers() const {
    return sequences.empty() ? 0 : sequences.front().n_followers;
  }
  int state_dim() const { return 3 * n_followers(); }
};

/// Plain state/control series consumed by the identification routines.
/// `controls` has one entry per state row; the last entry is unused by
/// one-step maps.
struct Episode {
  Eigen::MatrixXd states;  // steps x n_x
  Eigen::VectorXd controls;
};

/// Episodes in model coordinates: scaled by `scales` when given.
std::vector<Episode> to_episodes(const Dataset& ds,
                                 const std::optional<NormScales>& scales);

// --- trajectory CSV ---------------------------------------------------------

inline constexpr const char* kTrajectoryCsvHeader =
    "traj_id,step,vehicle,position_m,velocity_mps,accel_mps2";

/// Reads the long-format trajectory CSV. Trajectories come back sorted by id.
std::vector<PlatoonTrajectory> read_trajectory_csv(
    const std::filesystem::path& path, double dt);
std::vector<PlatoonTrajectory> parse_trajectory_csv(std::istream& in,
                                                    double dt,
                                                    const std::string& source);

void write_trajectory_csv(std::ostream& out,
                          std::span<const PlatoonTrajectory> trajectories);
void write_trajectory_csv(const std::filesystem::path& path,
                          std::span<const PlatoonTrajectory> trajectories);

/// Loads a CSV file, or every *.csv in a directory (sorted by file name),
/// and derives state sequences. Sequences are ordered by trajectory id.
Dataset load_trajectories(const std::filesystem::path& path, double dt);

StateSequence derive_states(const PlatoonTrajectory& traj);

// --- synthesis --------------------------------------------------------------

struct LeaderInit {
  double position = 0.0;
  double velocity = 0.0;
};

struct FollowerInit {
  IdmParams params;
  double spacing = 0.0;   // to the preceding vehicle [m]
  double velocity = 0.0;  // [m/s]
};

struct AccelNoise {
  double sigma = 0.0;  // [m/s^2]
  std::uint64_t seed = 0;
};

/// Spacing at or below which a simulation is aborted as a collision.
inline constexpr double kCollisionSpacing = 0.1;

/// Integrates the platoon with semi-implicit Euler. The leader follows
/// `leader_accel`, every follower applies IDM (plus optional Gaussian noise).
/// Velocities are clamped at zero; recorded accelerations are the effective
/// ones in that case.
PlatoonTrajectory simulate_platoon(const LeaderInit& leader,
                                   std::span<const double> leader_accel,
                                   std::span<const FollowerInit> followers,
                                   double dt, const AccelNoise& noise = {},
                                   std::string id = {});

enum class LeaderProfileKind { constant, sinusoid, stop_and_go };

struct LeaderProfile {
  LeaderProfileKind kind = LeaderProfileKind::sinusoid;
  double amplitude = 0.5;      // [m/s^2]
  double frequency_hz = 0.05;  // sinusoid frequency, or 1/period for stop_and_go
  double bias = 0.0;           // constant offset (constant kind only)
};

/// Integrates only the followers behind a fully specified leader trace. This
/// is the follower half of simulate_platoon, shared with baseline replays.
PlatoonTrajectory simulate_followers(const VehicleTrace& leader,
                                     std::span<const FollowerInit> followers, double dt,
                                     const AccelNoise& noise = {}, std::string id = {});

std::vector<double> generate_leader_profile(const LeaderProfile& profile,
                                            std::size_t steps, double dt);

/// Heterogeneous-IDM corpus with oscillatory leaders.
struct CorpusConfig {
  int n_trajectories = 50;
  std::size_t steps = 350;
  double dt = 0.1;
  int n_followers = 5;
  IdmParams nominal;
  double heterogeneity = 0.2;  // uniform +-fraction around nominal
  double noise_sigma = 0.05;
  double leader_speed_min = 10.0;
  double leader_speed_max = 20.0;
  double amplitude_min = 0.3;
  double amplitude_max = 1.0;
  double frequency_min_hz = 0.03;
  double frequency_max_hz = 0.12;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SyntheticTrajectory {
  PlatoonTrajectory trajectory;
  std::vector<IdmParams> params;  // one per follower
  LeaderProfile profile;
  double leader_speed = 0.0;
  std::uint64_t seed = 0;
};

struct CorpusResult {
  std::vector<SyntheticTrajectory> trajectories;
  std::vector<std::string> failures;  // one message per skipped trajectory
};

/// Trajectory `i` depends only on (cfg, i); failures are reported, not thrown.
CorpusResult generate_corpus(const CorpusConfig& cfg);

// --- split / normalization --------------------------------------------------

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double ratio_train,
                                          std::uint64_t seed);

/// Population standard deviation per column over every training step;
/// near-constant columns (std < 1e-8) get scale 1.
NormScales fit_normalization(const Dataset& train);

}  // namespace kpl::data
