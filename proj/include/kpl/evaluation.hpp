#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kpl/baselines.hpp"
#include "kpl/data.hpp"
#include "kpl/koopman.hpp"

namespace kpl::evaluation {

/// Chains y_i = y_{i-1} - s_i from the leader. `spacings` is steps x n.
/// Negative spacings are allowed: learned models may emit them.
Eigen::MatrixXd reconstruct_positions(const Eigen::MatrixXd& spacings,
                                      const Eigen::VectorXd& leader_position);

struct MetricReport {
  double rmse = 0.0;
  double mae = 0.0;
  std::vector<double> per_vehicle_rmse;
  std::vector<double> per_vehicle_mae;
  int horizon = 0;
};

/// Pooled RMSE/MAE over all (step, vehicle) entries plus per-vehicle columns.
MetricReport position_metrics(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth);

enum class PlaneKind { spacing_speed, spacing_dv, speed_dv };
std::string to_string(PlaneKind k);

struct PhasePlaneRow {
  int vehicle = 0;  // follower index, 1-based
  int step = 0;     // target step t
  PlaneKind kind = PlaneKind::spacing_speed;
  double truth_x = 0, truth_y = 0;  // ground truth at t
  double recon_x = 0, recon_y = 0;  // one step from the truth at t-1
  double pred_x = 0, pred_y = 0;    // `horizon` steps from the truth at t-horizon
};

using PhasePlaneTable = std::vector<PhasePlaneRow>;

/// Physical-unit phase-plane points for every follower and every step
/// t >= horizon of `seq`.
PhasePlaneTable phase_plane_export(const koopman::KoopmanModel& model,
                                   const data::StateSequence& seq, int horizon = 10);

void write_phase_plane_csv(std::ostream& out, const PhasePlaneTable& table);

/// Full-horizon predictor: returns physical states for steps 1..K of `seq`
/// (K = steps - 1) from the state at step 0 and the leader acceleration.
struct Predictor {
  std::string name;
  std::function<Eigen::MatrixXd(const data::StateSequence&)> predict;
};

Predictor koopman_predictor(const koopman::KoopmanModel& model, std::string name = "koopman");
Predictor dmdc_predictor(const baselines::DmdcModel& model, std::string name = "dmdc");
Predictor idm_predictor(std::vector<IdmParams> params, double dt, std::string name = "idm");

struct ComparisonRow {
  std::string model;
  std::string sequence;
  double rmse = 0.0;
  double mae = 0.0;
  bool flagged = false;  // prediction failed; `note` says why
  std::string note;
};

struct AggregateRow {
  std::string model;
  double rmse = 0.0;  // pooled over every vehicle, step and sequence
  double mae = 0.0;
  std::vector<double> per_vehicle_rmse;
  std::vector<double> per_vehicle_mae;
  int sequences = 0;
  int flagged = 0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;       // model-major, then test order
  std::vector<AggregateRow> aggregate;   // one per model, input order
  /// Predicted follower positions per model per sequence (steps 1..K).
  std::vector<std::vector<Eigen::MatrixXd>> positions;
};

/// Rolls every predictor over every test sequence and scores follower
/// positions. A failing prediction is recorded as a flagged row; a model with
/// any flagged row has an infinite aggregate error.
Comparison compare_models(const data::Dataset& test, std::span<const Predictor> models);

/// Follower positions of `seq` for steps 1..K.
Eigen::MatrixXd truth_positions(const data::StateSequence& seq);

/// Rebuilds a trajectory (leader + followers) from predicted states for
/// steps 1..K, with the truth at step 0; accelerations are backward
/// differences of the predicted velocities.
data::PlatoonTrajectory predicted_trajectory(const data::StateSequence& seq,
                                             const Eigen::MatrixXd& predicted_states,
                                             double dt);

void write_comparison_csv(std::ostream& out, const Comparison& cmp);
void write_aggregate_csv(std::ostream& out, const Comparison& cmp);

}  // namespace kpl::evaluation
