#include "kpl/baselines.hpp"

#include <algorithm>
#include <string>

#include <Eigen/SVD>

#include "kpl/error.hpp"

namespace kpl::baselines {

namespace {

DmdcModel solve_dmdc(const Eigen::MatrixXd& omega, const Eigen::MatrixXd& next,
                     std::optional<int> rank) {
  const auto n_x = next.rows();
  // Thin SVD of the (n_x + 1) x N snapshot matrix; N >> n_x for trajectory data.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(omega, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  const double cutoff = sigma.size() > 0 ? kDmdcRelativeCutoff * sigma(0) : 0.0;
  int keep = 0;
  while (keep < sigma.size() && sigma(keep) > cutoff) ++keep;
  if (rank) {
    if (*rank < 1) throw InputError("dmdc_fit: rank must be >= 1");
    keep = std::min(keep, *rank);
  }
  if (keep == 0) throw NumericalError("dmdc_fit: snapshot matrix is zero");

  const Eigen::MatrixXd U = svd.matrixU().leftCols(keep);
  const Eigen::MatrixXd V = svd.matrixV().leftCols(keep);
  const Eigen::VectorXd inv_sigma = sigma.head(keep).cwiseInverse();
  // [A B] = X' V diag(1/sigma) U^T
  const Eigen::MatrixXd G = ((next * V) * inv_sigma.asDiagonal()) * U.transpose();

  DmdcModel model;
  model.A = G.leftCols(n_x);
  model.B = G.col(n_x);
  model.rank_used = keep;
  if (!model.A.allFinite() || !model.B.allFinite()) {
    throw NumericalError("dmdc_fit: non-finite solution");
  }
  return model;
}

}  // namespace

DmdcModel dmdc_fit(const Eigen::MatrixXd& states, const Eigen::VectorXd& controls,
                   std::optional<int> rank) {
  data::Episode ep{states, controls};
  return dmdc_fit(std::span<const data::Episode>(&ep, 1), rank);
}

DmdcModel dmdc_fit(std::span<const data::Episode> episodes, std::optional<int> rank) {
  if (episodes.empty()) throw InputError("dmdc_fit: no data");
  const auto n_x = episodes.front().states.cols();
  Eigen::Index pairs = 0;
  for (const auto& ep : episodes) {
    if (ep.states.cols() != n_x) throw InputError("dmdc_fit: inconsistent state widths");
    if (ep.controls.size() < ep.states.rows() - 1) {
      throw InputError("dmdc_fit: fewer controls than snapshot pairs");
    }
    pairs += std::max<Eigen::Index>(0, ep.states.rows() - 1);
  }
  if (pairs < n_x + 1) {
    throw InputError("dmdc_fit: insufficient snapshots (" + std::to_string(pairs) +
                     " pairs, need at least " + std::to_string(n_x + 1) + ")");
  }
  Eigen::MatrixXd omega(n_x + 1, pairs);
  Eigen::MatrixXd next(n_x, pairs);
  Eigen::Index col = 0;
  for (const auto& ep : episodes) {
    const auto p = ep.states.rows() - 1;
    if (p <= 0) continue;
    omega.block(0, col, n_x, p) = ep.states.topRows(p).transpose();
    omega.block(n_x, col, 1, p) = ep.controls.head(p).transpose();
    next.middleCols(col, p) = ep.states.bottomRows(p).transpose();
    col += p;
  }
  return solve_dmdc(omega, next, rank);
}

Eigen::MatrixXd dmdc_rollout(const DmdcModel& model, const Eigen::VectorXd& x0,
                             std::span<const double> u) {
  if (model.A.rows() != model.A.cols() || model.B.size() != model.A.rows() ||
      x0.size() != model.A.rows()) {
    throw InputError("dmdc_rollout: shape mismatch");
  }
  const auto K = static_cast<Eigen::Index>(u.size());
  Eigen::MatrixXd out(K, x0.size());
  Eigen::VectorXd x = x0;
  for (Eigen::Index k = 0; k < K; ++k) {
    x = model.A * x + model.B * u[k];
    if (!x.allFinite()) {
      throw NumericalError("dmdc rollout diverged at step " + std::to_string(k + 1));
    }
    out.row(k) = x.transpose();
  }
  return out;
}

data::StateSequence idm_rollout(const PlatoonInit& init, const LeaderTrace& leader,
                                std::span<const IdmParams> params, double dt) {
  const auto n = params.size();
  if (init.position.size() != n || init.velocity.size() != n) {
    throw InputError("idm_rollout: initial state does not match parameter count");
  }
  data::VehicleTrace lead{leader.position, leader.velocity, leader.acceleration};
  std::vector<data::FollowerInit> followers(n);
  double ahead = leader.position.empty() ? 0.0 : leader.position.front();
  for (std::size_t i = 0; i < n; ++i) {
    followers[i] = {params[i], ahead - init.position[i], init.velocity[i]};
    ahead = init.position[i];
  }
  auto traj = data::simulate_followers(lead, followers, dt);
  return data::derive_states(traj);
}

PlatoonInit initial_platoon(const data::StateSequence& seq) {
  const int n = seq.n_followers;
  if (seq.steps() < 1 || seq.state_dim() != 3 * n) {
    throw InputError("initial_platoon: malformed state sequence");
  }
  PlatoonInit init;
  double ahead = seq.leader_position(0);
  for (int i = 1; i <= n; ++i) {
    ahead -= seq.states(0, data::spacing_column(n, i));
    init.position.push_back(ahead);
    init.velocity.push_back(seq.states(0, data::velocity_column(n, i)));
  }
  return init;
}

LeaderTrace leader_trace(const data::StateSequence& seq) {
  LeaderTrace t;
  t.position.assign(seq.leader_position.data(), seq.leader_position.data() + seq.steps());
  t.velocity.assign(seq.leader_velocity.data(), seq.leader_velocity.data() + seq.steps());
  t.acceleration.assign(seq.controls.data(), seq.controls.data() + seq.steps());
  return t;
}

}  // namespace kpl::baselines
