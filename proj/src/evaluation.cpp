#include "kpl/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "kpl/error.hpp"

namespace kpl::evaluation {

namespace {

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<double> controls_head(const data::StateSequence& seq, Eigen::Index count) {
  return std::vector<double>(seq.controls.data(), seq.controls.data() + count);
}

}  // namespace

Eigen::MatrixXd reconstruct_positions(const Eigen::MatrixXd& spacings,
                                      const Eigen::VectorXd& leader_position) {
  if (spacings.rows() != leader_position.size()) {
    throw InputError("reconstruct_positions: spacing rows (" + std::to_string(spacings.rows()) +
                     ") differ from leader samples (" + std::to_string(leader_position.size()) +
                     ")");
  }
  if (!spacings.allFinite()) throw InputError("reconstruct_positions: non-finite spacing");
  Eigen::MatrixXd y(spacings.rows(), spacings.cols());
  for (Eigen::Index k = 0; k < spacings.rows(); ++k) {
    double ahead = leader_position(k);
    for (Eigen::Index i = 0; i < spacings.cols(); ++i) {
      ahead -= spacings(k, i);
      y(k, i) = ahead;
    }
  }
  return y;
}

MetricReport position_metrics(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw InputError("position_metrics: shape mismatch (" + std::to_string(pred.rows()) + "x" +
                     std::to_string(pred.cols()) + " vs " + std::to_string(truth.rows()) + "x" +
                     std::to_string(truth.cols()) + ")");
  }
  if (pred.size() == 0) throw InputError("position_metrics: empty input");
  const Eigen::ArrayXXd err = (pred - truth).array();
  MetricReport r;
  r.horizon = static_cast<int>(pred.rows());
  r.rmse = std::sqrt(err.square().mean());
  r.mae = err.abs().mean();
  for (Eigen::Index i = 0; i < err.cols(); ++i) {
    r.per_vehicle_rmse.push_back(std::sqrt(err.col(i).square().mean()));
    r.per_vehicle_mae.push_back(err.col(i).abs().mean());
  }
  return r;
}

std::string to_string(PlaneKind k) {
  switch (k) {
    case PlaneKind::spacing_speed: return "spacing_speed";
    case PlaneKind::spacing_dv: return "spacing_dv";
    case PlaneKind::speed_dv: return "speed_dv";
  }
  return "unknown";
}

PhasePlaneTable phase_plane_export(const koopman::KoopmanModel& model,
                                   const data::StateSequence& seq, int horizon) {
  if (horizon < 1) throw InputError("phase_plane_export: horizon must be >= 1");
  if (seq.steps() <= horizon) {
    throw InputError("phase_plane_export: sequence has " + std::to_string(seq.steps()) +
                     " steps, need more than " + std::to_string(horizon));
  }
  const int n = seq.n_followers;
  if (model.n_x() != seq.state_dim()) {
    throw InputError("phase_plane_export: model state width " + std::to_string(model.n_x()) +
                     " does not match data width " + std::to_string(seq.state_dim()));
  }
  const auto steps = seq.steps();
  const auto& sc = model.scales;

  // Lift every ground-truth state once (columns).
  const Eigen::MatrixXd x_cols = sc.apply_states(seq.states).transpose();
  Eigen::MatrixXd z(model.m(), steps);
  z.topRows(model.n_x()) = x_cols;
  if (model.d() > 0) z.bottomRows(model.d()) = model.encoder.features_batch(x_cols);
  const Eigen::RowVectorXd u = sc.apply_controls(seq.controls).transpose();

  // recon.col(k): one step from the truth at k; pred.col(k): horizon steps from k.
  const Eigen::MatrixXd recon_z = model.op.A * z + model.op.B * u;
  Eigen::MatrixXd pred_z = z.leftCols(steps - horizon + 1);
  for (int h = 0; h < horizon; ++h) {
    pred_z = model.op.A * pred_z + model.op.B * u.segment(h, pred_z.cols());
  }
  if (!recon_z.allFinite() || !pred_z.allFinite()) {
    throw NumericalError("phase_plane_export: rollout diverged");
  }
  const Eigen::MatrixXd recon = sc.invert_states(recon_z.topRows(model.n_x()).transpose());
  const Eigen::MatrixXd pred = sc.invert_states(pred_z.topRows(model.n_x()).transpose());

  PhasePlaneTable table;
  const PlaneKind kinds[] = {PlaneKind::spacing_speed, PlaneKind::spacing_dv, PlaneKind::speed_dv};
  for (int i = 1; i <= n; ++i) {
    const int cs = data::spacing_column(n, i);
    const int cv = data::velocity_column(n, i);
    const int cd = data::speed_diff_column(n, i);
    for (Eigen::Index t = horizon; t < steps; ++t) {
      for (PlaneKind kind : kinds) {
        const int cx = kind == PlaneKind::speed_dv ? cv : cs;
        const int cy = kind == PlaneKind::spacing_speed ? cv : cd;
        PhasePlaneRow row;
        row.vehicle = i;
        row.step = static_cast<int>(t);
        row.kind = kind;
        row.truth_x = seq.states(t, cx);
        row.truth_y = seq.states(t, cy);
        row.recon_x = recon(t - 1, cx);
        row.recon_y = recon(t - 1, cy);
        row.pred_x = pred(t - horizon, cx);
        row.pred_y = pred(t - horizon, cy);
        table.push_back(row);
      }
    }
  }
  return table;
}

void write_phase_plane_csv(std::ostream& out, const PhasePlaneTable& table) {
  out << "vehicle,step,pair_kind,truth_x,truth_y,recon_x,recon_y,pred_x,pred_y\n";
  for (const auto& r : table) {
    out << r.vehicle << ',' << r.step << ',' << to_string(r.kind) << ',' << num(r.truth_x) << ','
        << num(r.truth_y) << ',' << num(r.recon_x) << ',' << num(r.recon_y) << ','
        << num(r.pred_x) << ',' << num(r.pred_y) << '\n';
  }
}

Predictor koopman_predictor(const koopman::KoopmanModel& model, std::string name) {
  return {std::move(name), [model](const data::StateSequence& seq) {
            const auto K = seq.steps() - 1;
            return koopman::rollout_physical(seq.states.row(0).transpose(),
                                             controls_head(seq, K), model);
          }};
}

Predictor dmdc_predictor(const baselines::DmdcModel& model, std::string name) {
  return {std::move(name), [model](const data::StateSequence& seq) {
            const auto K = seq.steps() - 1;
            return baselines::dmdc_rollout(model, seq.states.row(0).transpose(),
                                           controls_head(seq, K));
          }};
}

Predictor idm_predictor(std::vector<IdmParams> params, double dt, std::string name) {
  return {std::move(name), [params = std::move(params), dt](const data::StateSequence& seq) {
            if (params.size() != static_cast<std::size_t>(seq.n_followers)) {
              throw InputError("idm baseline has " + std::to_string(params.size()) +
                               " followers, data has " + std::to_string(seq.n_followers));
            }
            const auto out = baselines::idm_rollout(baselines::initial_platoon(seq),
                                                    baselines::leader_trace(seq), params, dt);
            return Eigen::MatrixXd(out.states.bottomRows(out.steps() - 1));
          }};
}

Eigen::MatrixXd truth_positions(const data::StateSequence& seq) {
  const auto K = seq.steps() - 1;
  return reconstruct_positions(seq.states.bottomRows(K).leftCols(seq.n_followers),
                               seq.leader_position.tail(K));
}

data::PlatoonTrajectory predicted_trajectory(const data::StateSequence& seq,
                                             const Eigen::MatrixXd& predicted_states, double dt) {
  const int n = seq.n_followers;
  const auto steps = seq.steps();
  if (predicted_states.rows() != steps - 1 || predicted_states.cols() != seq.state_dim()) {
    throw InputError("predicted_trajectory: prediction shape does not match sequence");
  }
  Eigen::MatrixXd states(steps, seq.state_dim());
  states.row(0) = seq.states.row(0);
  states.bottomRows(steps - 1) = predicted_states;
  const Eigen::MatrixXd pos = reconstruct_positions(states.leftCols(n), seq.leader_position);

  data::PlatoonTrajectory traj;
  traj.id = seq.id;
  traj.dt = dt;
  traj.vehicles.resize(n + 1);
  auto& lead = traj.vehicles[0];
  lead.position.assign(seq.leader_position.data(), seq.leader_position.data() + steps);
  lead.velocity.assign(seq.leader_velocity.data(), seq.leader_velocity.data() + steps);
  lead.acceleration.assign(seq.controls.data(), seq.controls.data() + steps);
  for (int i = 1; i <= n; ++i) {
    auto& v = traj.vehicles[i];
    const int cv = data::velocity_column(n, i);
    for (Eigen::Index k = 0; k < steps; ++k) {
      v.position.push_back(pos(k, i - 1));
      v.velocity.push_back(states(k, cv));
      v.acceleration.push_back(k == 0 ? 0.0 : (states(k, cv) - states(k - 1, cv)) / dt);
    }
  }
  return traj;
}

Comparison compare_models(const data::Dataset& test, std::span<const Predictor> models) {
  if (test.sequences.empty()) throw InputError("compare_models: empty test set");
  if (models.empty()) throw InputError("compare_models: no models");
  const int n = test.n_followers();
  Comparison cmp;
  for (const auto& model : models) {
    AggregateRow agg;
    agg.model = model.name;
    double sq = 0, ab = 0, count = 0;
    std::vector<double> v_sq(n, 0.0), v_ab(n, 0.0);
    double v_count = 0;
    std::vector<Eigen::MatrixXd> predicted;
    for (const auto& seq : test.sequences) {
      ComparisonRow row;
      row.model = model.name;
      row.sequence = seq.id;
      if (seq.n_followers != n) throw InputError("compare_models: inconsistent platoon size");
      try {
        const Eigen::MatrixXd states = model.predict(seq);
        if (states.rows() != seq.steps() - 1 || states.cols() != seq.state_dim()) {
          throw InputError("prediction has shape " + std::to_string(states.rows()) + "x" +
                           std::to_string(states.cols()));
        }
        if (!states.allFinite()) throw NumericalError("non-finite prediction");
        const auto K = seq.steps() - 1;
        const Eigen::MatrixXd pos =
            reconstruct_positions(states.leftCols(n), seq.leader_position.tail(K));
        const Eigen::MatrixXd truth = truth_positions(seq);
        const auto m = position_metrics(pos, truth);
        row.rmse = m.rmse;
        row.mae = m.mae;
        const Eigen::ArrayXXd err = (pos - truth).array();
        sq += err.square().sum();
        ab += err.abs().sum();
        count += static_cast<double>(err.size());
        for (int i = 0; i < n; ++i) {
          v_sq[i] += err.col(i).square().sum();
          v_ab[i] += err.col(i).abs().sum();
        }
        v_count += static_cast<double>(K);
        predicted.push_back(pos);
      } catch (const NumericalError& e) {
        row.flagged = true;
        row.note = e.what();
        row.rmse = row.mae = std::numeric_limits<double>::infinity();
        ++agg.flagged;
        predicted.emplace_back();
      }
      ++agg.sequences;
      cmp.rows.push_back(std::move(row));
    }
    if (agg.flagged > 0 || count == 0) {
      agg.rmse = agg.mae = std::numeric_limits<double>::infinity();
      agg.per_vehicle_rmse.assign(n, agg.rmse);
      agg.per_vehicle_mae.assign(n, agg.mae);
    } else {
      agg.rmse = std::sqrt(sq / count);
      agg.mae = ab / count;
      for (int i = 0; i < n; ++i) {
        agg.per_vehicle_rmse.push_back(std::sqrt(v_sq[i] / v_count));
        agg.per_vehicle_mae.push_back(v_ab[i] / v_count);
      }
    }
    cmp.aggregate.push_back(std::move(agg));
    cmp.positions.push_back(std::move(predicted));
  }
  return cmp;
}

void write_comparison_csv(std::ostream& out, const Comparison& cmp) {
  out << "model,sequence,rmse_m,mae_m\n";
  for (const auto& r : cmp.rows) {
    out << r.model << ',' << r.sequence << ',' << num(r.rmse) << ',' << num(r.mae) << '\n';
  }
  for (const auto& a : cmp.aggregate) {
    out << a.model << ",ALL," << num(a.rmse) << ',' << num(a.mae) << '\n';
  }
}

void write_aggregate_csv(std::ostream& out, const Comparison& cmp) {
  out << "model,vehicle,rmse_m,mae_m,sequences,flagged\n";
  for (const auto& a : cmp.aggregate) {
    out << a.model << ",all," << num(a.rmse) << ',' << num(a.mae) << ',' << a.sequences << ','
        << a.flagged << '\n';
    for (std::size_t i = 0; i < a.per_vehicle_rmse.size(); ++i) {
      out << a.model << ',' << i + 1 << ',' << num(a.per_vehicle_rmse[i]) << ','
          << num(a.per_vehicle_mae[i]) << ',' << a.sequences << ',' << a.flagged << '\n';
    }
  }
}

}  // namespace kpl::evaluation
