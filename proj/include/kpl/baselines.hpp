#pragma once

#include <optional>
#include <span>

#include <Eigen/Core>

#include "kpl/data.hpp"
#include "kpl/idm.hpp"

namespace kpl::baselines {

/// Linear model x_{k+1} = A x_k + B u_k identified by DMD with control.
struct DmdcModel {
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
  int rank_used = 0;
};

/// Relative singular-value cutoff used by dmdc_fit.
inline constexpr double kDmdcRelativeCutoff = 1e-10;

/// Least-squares [A B] = X' pinv([X; U]) via SVD. `states` is steps x n_x and
/// `controls` has one entry per step; the pairs (k, k+1) for k < steps-1 are
/// used. Singular values below `rank` or below 1e-10 sigma_max are dropped.
DmdcModel dmdc_fit(const Eigen::MatrixXd& states, const Eigen::VectorXd& controls,
                   std::optional<int> rank = std::nullopt);

/// Pools the snapshot pairs of every episode into one fit.
DmdcModel dmdc_fit(std::span<const data::Episode> episodes,
                   std::optional<int> rank = std::nullopt);

/// K x n_x predictions for steps 1..K, K = u.size().
Eigen::MatrixXd dmdc_rollout(const DmdcModel& model, const Eigen::VectorXd& x0,
                             std::span<const double> u);

/// Followers' positions and velocities at the first step, front to back.
struct PlatoonInit {
  std::vector<double> position;
  std::vector<double> velocity;
};

/// Leader motion replayed verbatim by idm_rollout.
struct LeaderTrace {
  std::vector<double> position;
  std::vector<double> velocity;
  std::vector<double> acceleration;
};

/// Replays a platoon behind a recorded leader with the given IDM parameters,
/// using the same integrator as data::simulate_platoon (no noise).
data::StateSequence idm_rollout(const PlatoonInit& init, const LeaderTrace& leader,
                                std::span<const IdmParams> params, double dt);

/// Initial follower state and leader trace recorded in a state sequence.
PlatoonInit initial_platoon(const data::StateSequence& seq);
LeaderTrace leader_trace(const data::StateSequence& seq);

}  // namespace kpl::baselines
