#include "kpl/commands.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include "kpl/baselines.hpp"
#include "kpl/error.hpp"
#include "kpl/evaluation.hpp"
#include "kpl/model_io.hpp"
#include "kpl/stability.hpp"

namespace kpl::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Fixed-width numbers for console tables.
std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6e", v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

data::Dataset load_data(const RunConfig& cfg) {
  const fs::path path = cfg.data_dir();
  if (!fs::exists(path)) throw InputError("data not found: " + path.string());
  return data::load_trajectories(path, cfg.dt);
}

std::pair<data::Dataset, data::Dataset> split(const RunConfig& cfg) {
  return data::split_dataset(load_data(cfg), cfg.train_ratio, cfg.seed);
}

// A loaded model file of either kind.
struct LoadedModel {
  std::string name;
  fs::path path;
  io::ModelKind kind = io::ModelKind::koopman;
  std::optional<koopman::KoopmanModel> koopman;
  std::optional<io::DmdcArtifact> dmdc;

  int n_followers() const { return koopman ? koopman->n_followers : dmdc->n_followers; }
  int n_x() const { return koopman ? koopman->n_x() : static_cast<int>(dmdc->model.A.rows()); }
  double dt() const { return koopman ? koopman->dt : dmdc->dt; }
};

LoadedModel load_any(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("model not found: " + path.string());
  LoadedModel m;
  m.path = path;
  m.kind = io::peek_kind(path);
  if (m.kind == io::ModelKind::koopman) {
    m.koopman = io::load_model(path);
  } else {
    m.dmdc = io::load_dmdc(path);
  }
  return m;
}

// Explicit files, or the configured Koopman file followed by the DMDc file
// when it exists. Names are the kind, suffixed when a kind repeats.
std::vector<LoadedModel> load_models(const RunConfig& cfg, std::span<const fs::path> files,
                                     bool include_default_dmdc) {
  std::vector<fs::path> paths(files.begin(), files.end());
  if (paths.empty()) {
    paths.push_back(cfg.koopman_file());
    if (include_default_dmdc && fs::exists(cfg.dmdc_file())) paths.push_back(cfg.dmdc_file());
  }
  std::vector<LoadedModel> models;
  int n_koopman = 0, n_dmdc = 0;
  for (const auto& p : paths) {
    auto m = load_any(p);
    const int count = m.kind == io::ModelKind::koopman ? ++n_koopman : ++n_dmdc;
    m.name = io::to_string(m.kind) + (count > 1 ? "_" + std::to_string(count) : "");
    models.push_back(std::move(m));
  }
  return models;
}

void check_compatible(const LoadedModel& m, const data::Dataset& ds) {
  const int data_n = ds.n_followers();
  const int data_x = ds.state_dim();
  if (m.n_followers() != 0 ? m.n_followers() != data_n : m.n_x() != data_x) {
    throw InputError(m.path.string() + ": model expects n_followers = " +
                     std::to_string(m.n_followers()) + " (n_x = " + std::to_string(m.n_x()) +
                     ") but the data has n_followers = " + std::to_string(data_n) +
                     " (n_x = " + std::to_string(data_x) + ")");
  }
  if (std::abs(m.dt() - ds.dt) > 1e-12 * std::max(1.0, ds.dt)) {
    throw InputError(m.path.string() + ": model dt = " + num(m.dt()) +
                     " but the configured dt = " + num(ds.dt));
  }
}

evaluation::Predictor predictor_for(const LoadedModel& m) {
  if (m.koopman) return evaluation::koopman_predictor(*m.koopman, m.name);
  return evaluation::dmdc_predictor(m.dmdc->model, m.name);
}

evaluation::Predictor idm_baseline(const RunConfig& cfg, int n_followers) {
  return evaluation::idm_predictor(
      std::vector<IdmParams>(static_cast<std::size_t>(n_followers), cfg.idm_baseline), cfg.dt,
      "idm");
}

void print_aggregate(std::ostream& out, const evaluation::Comparison& cmp) {
  out << "model          rmse_m      mae_m  sequences  flagged\n";
  for (const auto& a : cmp.aggregate) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %10s %10s %10d %8d\n", a.model.c_str(),
                  fixed(a.rmse).c_str(), fixed(a.mae).c_str(), a.sequences, a.flagged);
    out << line;
  }
  for (const auto& r : cmp.rows) {
    if (r.flagged) out << "  flagged " << r.model << " on " << r.sequence << ": " << r.note << "\n";
  }
}

// Writes reproduced_<model>.csv for every model; flagged sequences are left out.
void write_reproduced(const RunConfig& cfg, const data::Dataset& test,
                      const evaluation::Comparison& cmp,
                      std::span<const evaluation::Predictor> predictors,
                      const std::string& prefix) {
  for (std::size_t mi = 0; mi < predictors.size(); ++mi) {
    std::vector<data::PlatoonTrajectory> trajs;
    for (std::size_t si = 0; si < test.sequences.size(); ++si) {
      const auto& row = cmp.rows[mi * test.sequences.size() + si];
      if (row.flagged) continue;
      const auto states = predictors[mi].predict(test.sequences[si]);
      trajs.push_back(evaluation::predicted_trajectory(test.sequences[si], states, cfg.dt));
    }
    data::write_trajectory_csv(cfg.out_dir / (prefix + predictors[mi].name + ".csv"), trajs);
  }
}

const data::StateSequence& pick_sequence(const RunConfig& cfg, const data::Dataset& all,
                                         const data::Dataset& test) {
  if (cfg.phase_sequence.empty()) return test.sequences.front();
  for (const auto& s : all.sequences) {
    if (s.id == cfg.phase_sequence) return s;
  }
  throw InputError("phase_sequence '" + cfg.phase_sequence + "' not found in the data");
}

void write_phase_plane(const RunConfig& cfg, const koopman::KoopmanModel& model,
                       const data::StateSequence& seq, std::ostream& out) {
  const auto table = evaluation::phase_plane_export(model, seq, cfg.phase_horizon);
  auto file = open_out(cfg.out_dir / "phase_plane.csv");
  evaluation::write_phase_plane_csv(file, table);
  out << "phase plane: " << seq.id << ", horizon " << cfg.phase_horizon << ", " << table.size()
      << " rows -> " << (cfg.out_dir / "phase_plane.csv").string() << "\n";
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const fs::path dir = cfg.data_dir();
  ensure_dir(dir);
  ensure_dir(cfg.out_dir);
  const auto corpus = data::generate_corpus(cfg.corpus_config());

  auto manifest = open_out(cfg.out_dir / "manifest.csv");
  manifest << "traj_id,file,seed,profile,amplitude_mps2,frequency_hz,leader_speed_mps,follower,"
              "v0,T,s0,a_max,b,delta\n";
  for (const auto& t : corpus.trajectories) {
    const std::string file = t.trajectory.id + ".csv";
    const std::vector<data::PlatoonTrajectory> one{t.trajectory};
    data::write_trajectory_csv(dir / file, one);
    const std::string kind = t.profile.kind == data::LeaderProfileKind::sinusoid ? "sinusoid"
                             : t.profile.kind == data::LeaderProfileKind::stop_and_go
                                 ? "stop_and_go"
                                 : "constant";
    for (std::size_t i = 0; i < t.params.size(); ++i) {
      const auto& p = t.params[i];
      manifest << t.trajectory.id << ',' << file << ',' << t.seed << ',' << kind << ','
               << num(t.profile.amplitude) << ',' << num(t.profile.frequency_hz) << ','
               << num(t.leader_speed) << ',' << (i + 1) << ',' << num(p.v0) << ',' << num(p.T)
               << ',' << num(p.s0) << ',' << num(p.a_max) << ',' << num(p.b) << ','
               << num(p.delta) << '\n';
    }
  }

  auto run = open_out(cfg.out_dir / "run_config.csv");
  run << "key,value\n";
  for (const auto& [k, v] : describe(cfg)) run << k << ',' << v << '\n';

  out << "simulated " << corpus.trajectories.size() << " of " << cfg.corpus.n_trajectories
      << " trajectories (" << cfg.corpus.steps << " steps, " << cfg.corpus.n_followers + 1
      << " vehicles) -> " << dir.string() << "\n";
  for (const auto& f : corpus.failures) out << "  skipped: " << f << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  auto [train_set, test_set] = split(cfg);
  ensure_dir(cfg.out_dir);
  out << "train/test split: " << train_set.sequences.size() << "/" << test_set.sequences.size()
      << " sequences\n";

  const auto tc = cfg.train_config();
  const int every = std::max(1, tc.epochs / 10);
  const auto result = koopman::train(train_set, tc, [&](int epoch, double loss) {
    if ((epoch + 1) % every == 0 || epoch == 0) {
      out << "epoch " << (epoch + 1) << "/" << tc.epochs << "  loss " << sci(loss) << "\n";
    }
  });
  io::save_model(result.model, cfg.koopman_file());
  {
    auto curve = open_out(cfg.out_dir / "loss_curve.csv");
    curve << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
      curve << (e + 1) << ',' << num(result.loss_curve[e]) << '\n';
    }
  }

  const auto raw_episodes = data::to_episodes(train_set, std::nullopt);
  io::DmdcArtifact dmdc{baselines::dmdc_fit(raw_episodes), train_set.n_followers(), cfg.dt};
  io::save_model(dmdc, cfg.dmdc_file());

  const std::vector<evaluation::Predictor> preds{
      evaluation::koopman_predictor(result.model, "koopman")};
  const auto cmp = evaluation::compare_models(test_set, preds);
  const auto& agg = cmp.aggregate.front();
  out << "final train loss: " << sci(result.final_loss) << "\n";
  out << "held-out rollout RMSE: " << fixed(agg.rmse) << " m";
  if (agg.flagged > 0) out << " (" << agg.flagged << " sequences diverged)";
  out << "\n";
  out << "model -> " << cfg.koopman_file().string() << ", dmdc -> " << cfg.dmdc_file().string()
      << "\n";
}

void cmd_eval(const RunConfig& cfg, std::span<const fs::path> model_files, std::ostream& out) {
  cfg.validate();
  const auto all = load_data(cfg);
  const auto [train_set, test_set] = data::split_dataset(all, cfg.train_ratio, cfg.seed);
  const auto models = load_models(cfg, model_files, true);
  std::vector<evaluation::Predictor> preds;
  for (const auto& m : models) {
    check_compatible(m, test_set);
    preds.push_back(predictor_for(m));
  }
  preds.push_back(idm_baseline(cfg, test_set.n_followers()));

  ensure_dir(cfg.out_dir);
  const auto cmp = evaluation::compare_models(test_set, preds);
  {
    auto f = open_out(cfg.out_dir / "comparison.csv");
    evaluation::write_comparison_csv(f, cmp);
  }
  {
    auto f = open_out(cfg.out_dir / "comparison_aggregate.csv");
    evaluation::write_aggregate_csv(f, cmp);
  }
  write_reproduced(cfg, test_set, cmp, preds, "reproduced_");
  {
    std::vector<data::PlatoonTrajectory> trajs;
    for (const auto& s : test_set.sequences) {
      trajs.push_back(evaluation::predicted_trajectory(
          s, s.states.bottomRows(s.steps() - 1), cfg.dt));
    }
    data::write_trajectory_csv(cfg.out_dir / "reproduced_truth.csv", trajs);
  }
  print_aggregate(out, cmp);

  for (const auto& m : models) {
    if (m.koopman) {
      write_phase_plane(cfg, *m.koopman, pick_sequence(cfg, all, test_set), out);
      break;
    }
  }
}

void cmd_rollout(const RunConfig& cfg, std::span<const fs::path> model_files,
                 std::ostream& out) {
  cfg.validate();
  const auto [train_set, test_set] = split(cfg);
  const auto models = load_models(cfg, model_files, false);
  std::vector<evaluation::Predictor> preds;
  for (const auto& m : models) {
    check_compatible(m, test_set);
    preds.push_back(predictor_for(m));
  }
  ensure_dir(cfg.out_dir);
  const auto cmp = evaluation::compare_models(test_set, preds);
  write_reproduced(cfg, test_set, cmp, preds, "rollout_");
  {
    auto f = open_out(cfg.out_dir / "rollout_metrics.csv");
    evaluation::write_comparison_csv(f, cmp);
  }
  print_aggregate(out, cmp);
}

void cmd_stability(const RunConfig& cfg, std::span<const fs::path> model_files,
                   std::ostream& out) {
  cfg.validate();
  if (model_files.size() > 1) throw InputError("stability takes one model file");
  const auto models = load_models(cfg, model_files, false);
  const auto& m = models.front();
  const Eigen::MatrixXd A = m.koopman ? m.koopman->op.A : m.dmdc->model.A;
  Eigen::VectorXd B = m.koopman ? m.koopman->op.B : m.dmdc->model.B;
  ensure_dir(cfg.out_dir);

  const auto report = stability::local_stability(A, cfg.local_tol);
  {
    auto f = open_out(cfg.out_dir / "eigenvalues.csv");
    f << "index,re,im,magnitude\n";
    for (std::size_t i = 0; i < report.eigenvalues.size(); ++i) {
      f << i << ',' << num(report.eigenvalues[i].real()) << ',' << num(report.eigenvalues[i].imag())
        << ',' << num(report.magnitudes[i]) << '\n';
    }
  }
  const std::string local = report.verdict == stability::LocalVerdict::asymptotically_stable
                                ? "asymptotically stable"
                            : report.verdict == stability::LocalVerdict::marginally_stable
                                ? "marginally stable"
                                : "locally unstable";
  out << "local stability: " << local << " (max |lambda| = " << fixed(report.max_magnitude, 6)
      << ", " << A.rows() << " eigenvalues)\n";
  if (report.repeated_unit_eigenvalue) {
    out << "  note: repeated eigenvalues on the unit circle; boundedness not established\n";
  }

  auto summary = open_out(cfg.out_dir / "stability_summary.csv");
  summary << "key,value\n";
  summary << "model_kind," << io::to_string(m.kind) << '\n';
  summary << "local_verdict," << stability::to_string(report.verdict) << '\n';
  summary << "max_eigenvalue_magnitude," << num(report.max_magnitude) << '\n';
  summary << "repeated_unit_eigenvalue," << (report.repeated_unit_eigenvalue ? 1 : 0) << '\n';

  const int n = m.n_followers();
  if (n <= 0) {
    throw InputError(m.path.string() +
                     ": model has no platoon layout (n_followers = 0); string stability needs "
                     "follower velocity coordinates");
  }
  const int follower = cfg.follower_index == 0 ? n : cfg.follower_index;
  if (follower > n) {
    throw InputError("follower_index " + std::to_string(follower) + " exceeds n_followers " +
                     std::to_string(n));
  }
  const int out_idx = stability::velocity_index(n, follower);

  stability::ContinuousSystem sys;
  try {
    sys = stability::d2c_zoh(A, B, m.dt());
  } catch (const NumericalError& e) {
    summary << "string_verdict,unavailable\n";
    throw NumericalError(std::string(e.what()) +
                         "; the operator has eigenvalues with no principal logarithm (e.g. on "
                         "the negative real axis or at zero). Retrain with a smaller learning "
                         "rate or more data, or analyze the discrete operator directly.");
  }
  // The learned system acts on normalized coordinates; rescale so the gain is
  // the physical follower/leader acceleration ratio.
  if (m.koopman) {
    sys.B *= m.koopman->scales.state(out_idx) / m.koopman->scales.control;
  }
  const auto grid = stability::log_grid(cfg.freq_min, cfg.freq_max, cfg.freq_points);
  const auto resp =
      stability::string_stability_sweep(sys, out_idx, grid, cfg.string_tol, cfg.freq_unit);
  const bool hz = cfg.freq_unit == stability::FrequencyUnit::hertz;
  {
    auto f = open_out(cfg.out_dir / "frequency_response.csv");
    f << (hz ? "freq_hz" : "freq_rad_s") << ",gain\n";
    for (std::size_t i = 0; i < resp.frequencies.size(); ++i) {
      f << num(resp.frequencies[i]) << ',' << num(resp.gains[i]) << '\n';
    }
  }
  summary << "follower_index," << follower << '\n';
  summary << "string_verdict," << (resp.string_stable ? "stable" : "unstable") << '\n';
  summary << "peak_gain," << num(resp.peak_gain) << '\n';
  summary << (hz ? "peak_frequency_hz," : "peak_frequency_rad_s,") << num(resp.peak_frequency)
          << '\n';
  summary << "skipped_frequencies," << resp.warnings.size() << '\n';

  out << "string stability (follower " << follower << "): "
      << (resp.string_stable ? "stable" : "unstable") << ", peak gain " << fixed(resp.peak_gain)
      << " at " << fixed(resp.peak_frequency) << (hz ? " Hz" : " rad/s") << "\n";
  for (const auto& w : resp.warnings) out << "  warning: " << w << "\n";
}

void cmd_phase_plane(const RunConfig& cfg, std::span<const fs::path> model_files,
                     std::ostream& out) {
  cfg.validate();
  if (model_files.size() > 1) throw InputError("phase-plane takes one model file");
  const auto models = load_models(cfg, model_files, false);
  const auto& m = models.front();
  if (!m.koopman) throw InputError(m.path.string() + ": phase-plane needs a koopman model");
  const auto all = load_data(cfg);
  const auto [train_set, test_set] = data::split_dataset(all, cfg.train_ratio, cfg.seed);
  check_compatible(m, all);
  ensure_dir(cfg.out_dir);
  write_phase_plane(cfg, *m.koopman, pick_sequence(cfg, all, test_set), out);
}

}  // namespace kpl::cli
