#include "kpl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "kpl/error.hpp"

namespace kpl::data {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// splitmix64 finalizer; decorrelates per-trajectory seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r'))
      f.remove_suffix(1);
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

}  // namespace

void PlatoonTrajectory::validate() const {
  const std::string where = "trajectory '" + id + "'";
  if (!(dt > 0)) throw InputError(where + ": non-positive dt");
  if (vehicles.size() < 2) throw InputError(where + ": need a leader and at least one follower");
  const auto n = steps();
  if (n < 2) throw InputError(where + ": need at least 2 steps");
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto& v = vehicles[i];
    if (v.position.size() != n || v.velocity.size() != n || v.acceleration.size() != n) {
      throw InputError(where + ": vehicle " + std::to_string(i) + " has non-uniform step count");
    }
  }
  for (std::size_t i = 1; i < vehicles.size(); ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (!(vehicles[i - 1].position[k] - vehicles[i].position[k] > 0)) {
        throw InputError(where + ": non-positive spacing for vehicle " +
                         std::to_string(i) + " at step " + std::to_string(k));
      }
    }
  }
}

NormScales NormScales::identity(int n_x) {
  return NormScales{Eigen::VectorXd::Ones(n_x), 1.0};
}

Eigen::VectorXd NormScales::apply_state(const Eigen::VectorXd& x) const {
  return x.cwiseQuotient(state);
}

Eigen::VectorXd NormScales::invert_state(const Eigen::VectorXd& x) const {
  return x.cwiseProduct(state);
}

Eigen::MatrixXd NormScales::apply_states(const Eigen::MatrixXd& rows) const {
  return rows * state.cwiseInverse().asDiagonal();
}

Eigen::MatrixXd NormScales::invert_states(const Eigen::MatrixXd& rows) const {
  return rows * state.asDiagonal();
}

Eigen::VectorXd NormScales::apply_controls(const Eigen::VectorXd& u) const {
  return u / control;
}

void NormScales::validate() const {
  if (!(control > 0) || !(state.array() > 0).all()) {
    throw InputError("normalization scales must be positive");
  }
}

std::vector<Episode> to_episodes(const Dataset& ds,
                                 const std::optional<NormScales>& scales) {
  std::vector<Episode> out;
  out.reserve(ds.sequences.size());
  for (const auto& seq : ds.sequences) {
    if (scales) {
      out.push_back({scales->apply_states(seq.states), scales->apply_controls(seq.controls)});
    } else {
      out.push_back({seq.states, seq.controls});
    }
  }
  return out;
}

// --- CSV --------------------------------------------------------------------

std::vector<PlatoonTrajectory> parse_trajectory_csv(std::istream& in, double dt,
                                                    const std::string& source) {
  if (!(dt > 0)) throw InputError(source + ": non-positive dt");
  std::string line;
  std::size_t row = 0;
  // Skip blank lines before the header.
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
    line.clear();
  }
  if (line.empty()) throw InputError(source + ": no trajectories");

  const auto header = split_fields(line);
  const std::vector<std::string> required = {"traj_id", "step", "vehicle",
                                             "position_m", "velocity_mps", "accel_mps2"};
  std::vector<int> col(required.size(), -1);
  for (std::size_t r = 0; r < required.size(); ++r) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == required[r]) col[r] = static_cast<int>(c);
    }
    if (col[r] < 0) throw InputError(source + ": missing column '" + required[r] + "'");
  }

  struct Sample {
    double pos, vel, acc;
  };
  // traj_id -> vehicle -> step -> sample
  std::map<std::string, std::map<long, std::map<long, Sample>>> raw;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_fields(line);
    const auto where = source + " row " + std::to_string(row);
    if (f.size() < header.size()) throw InputError(where + ": too few fields");
    long step = 0, vehicle = 0;
    Sample s{};
    if (!parse_number(f[col[1]], step) || step < 0) throw InputError(where + ": bad step");
    if (!parse_number(f[col[2]], vehicle) || vehicle < 0) throw InputError(where + ": bad vehicle");
    if (!parse_number(f[col[3]], s.pos) || !parse_number(f[col[4]], s.vel) ||
        !parse_number(f[col[5]], s.acc)) {
      throw InputError(where + ": bad numeric field");
    }
    const std::string id(f[col[0]]);
    if (id.empty()) throw InputError(where + ": empty traj_id");
    auto& slot = raw[id][vehicle];
    if (!slot.emplace(step, s).second) {
      throw InputError(where + ": duplicate (traj_id, vehicle, step)");
    }
  }
  if (raw.empty()) throw InputError(source + ": no trajectories");

  std::vector<PlatoonTrajectory> out;
  for (const auto& [id, vehicles] : raw) {
    const auto where = source + ": trajectory '" + id + "'";
    PlatoonTrajectory traj;
    traj.id = id;
    traj.dt = dt;
    long expected_vehicle = 0;
    std::size_t steps = 0;
    for (const auto& [vehicle, samples] : vehicles) {
      if (vehicle != expected_vehicle++) {
        throw InputError(where + ": vehicle indices must be contiguous from 0");
      }
      if (vehicle == 0) steps = samples.size();
      if (samples.size() != steps) {
        throw InputError(where + ": non-uniform step count (vehicle " +
                         std::to_string(vehicle) + " has " + std::to_string(samples.size()) +
                         ", leader has " + std::to_string(steps) + ")");
      }
      VehicleTrace trace;
      long expected_step = 0;
      for (const auto& [step, s] : samples) {
        if (step != expected_step++) {
          throw InputError(where + ": steps must be contiguous from 0 (vehicle " +
                           std::to_string(vehicle) + ")");
        }
        trace.position.push_back(s.pos);
        trace.velocity.push_back(s.vel);
        trace.acceleration.push_back(s.acc);
      }
      traj.vehicles.push_back(std::move(trace));
    }
    try {
      traj.validate();
    } catch (const InputError& e) {
      throw InputError(source + ": " + e.what());
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<PlatoonTrajectory> read_trajectory_csv(const std::filesystem::path& path,
                                                   double dt) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_trajectory_csv(in, dt, path.string());
}

void write_trajectory_csv(std::ostream& out,
                          std::span<const PlatoonTrajectory> trajectories) {
  out << kTrajectoryCsvHeader << '\n';
  for (const auto& t : trajectories) {
    for (std::size_t k = 0; k < t.steps(); ++k) {
      for (std::size_t i = 0; i < t.vehicles.size(); ++i) {
        const auto& v = t.vehicles[i];
        out << t.id << ',' << k << ',' << i << ',' << format_double(v.position[k]) << ','
            << format_double(v.velocity[k]) << ',' << format_double(v.acceleration[k]) << '\n';
      }
    }
  }
}

void write_trajectory_csv(const std::filesystem::path& path,
                          std::span<const PlatoonTrajectory> trajectories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_trajectory_csv(out, trajectories);
}

Dataset load_trajectories(const std::filesystem::path& path, double dt) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw InputError("data not found: " + path.string());
  std::vector<PlatoonTrajectory> trajs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto part = read_trajectory_csv(f, dt);
      for (auto& t : part) trajs.push_back(std::move(t));
    }
    if (trajs.empty()) throw InputError(path.string() + ": no trajectories");
  } else {
    trajs = read_trajectory_csv(path, dt);
  }
  std::stable_sort(trajs.begin(), trajs.end(),
                   [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < trajs.size(); ++i) {
    if (trajs[i].id == trajs[i - 1].id) {
      throw InputError("duplicate trajectory id '" + trajs[i].id + "'");
    }
  }

  Dataset ds;
  ds.dt = dt;
  for (const auto& t : trajs) {
    ds.sequences.push_back(derive_states(t));
    if (ds.sequences.back().n_followers != ds.sequences.front().n_followers) {
      throw InputError("trajectory '" + t.id + "' has a different platoon size");
    }
  }
  return ds;
}

StateSequence derive_states(const PlatoonTrajectory& traj) {
  traj.validate();
  const int n = traj.n_followers();
  const auto steps = static_cast<Eigen::Index>(traj.steps());
  StateSequence seq;
  seq.id = traj.id;
  seq.n_followers = n;
  seq.states.resize(steps, 3 * n);
  seq.controls.resize(steps);
  seq.leader_position.resize(steps);
  seq.leader_velocity.resize(steps);
  const auto& leader = traj.vehicles[0];
  for (Eigen::Index k = 0; k < steps; ++k) {
    seq.controls(k) = leader.acceleration[k];
    seq.leader_position(k) = leader.position[k];
    seq.leader_velocity(k) = leader.velocity[k];
    for (int i = 1; i <= n; ++i) {
      const auto& ahead = traj.vehicles[i - 1];
      const auto& self = traj.vehicles[i];
      const double s = ahead.position[k] - self.position[k];
      if (!(s > 0)) {
        throw InputError("trajectory '" + traj.id + "': non-positive spacing at step " +
                         std::to_string(k) + ", follower " + std::to_string(i));
      }
      seq.states(k, spacing_column(n, i)) = s;
      seq.states(k, velocity_column(n, i)) = self.velocity[k];
      seq.states(k, speed_diff_column(n, i)) = self.velocity[k] - ahead.velocity[k];
    }
  }
  return seq;
}

// --- synthesis --------------------------------------------------------------

PlatoonTrajectory simulate_platoon(const LeaderInit& leader,
                                   std::span<const double> leader_accel,
                                   std::span<const FollowerInit> followers, double dt,
                                   const AccelNoise& noise, std::string id) {
  if (!(dt > 0)) throw InputError("simulate_platoon: non-positive dt");
  if (leader_accel.size() < 2) throw InputError("simulate_platoon: need at least 2 steps");

  const std::size_t steps = leader_accel.size();
  VehicleTrace lead;
  lead.position.resize(steps);
  lead.velocity.resize(steps);
  lead.acceleration.assign(leader_accel.begin(), leader_accel.end());
  lead.position[0] = leader.position;
  lead.velocity[0] = leader.velocity;
  for (std::size_t k = 0; k + 1 < steps; ++k) {
    double v_next = lead.velocity[k] + lead.acceleration[k] * dt;
    if (v_next < 0) {
      v_next = 0;
      lead.acceleration[k] = -lead.velocity[k] / dt;
    }
    lead.velocity[k + 1] = v_next;
    lead.position[k + 1] = lead.position[k] + v_next * dt;
  }
  return simulate_followers(lead, followers, dt, noise, std::move(id));
}

PlatoonTrajectory simulate_followers(const VehicleTrace& leader,
                                     std::span<const FollowerInit> followers, double dt,
                                     const AccelNoise& noise, std::string id) {
  if (!(dt > 0)) throw InputError("simulate_followers: non-positive dt");
  if (followers.empty()) throw InputError("simulate_followers: no followers");
  if (noise.sigma < 0) throw InputError("simulate_followers: negative noise sigma");
  const std::size_t steps = leader.position.size();
  if (steps < 2 || leader.velocity.size() != steps || leader.acceleration.size() != steps) {
    throw InputError("simulate_followers: leader trace needs >= 2 steps of equal length");
  }

  const std::size_t n_veh = followers.size() + 1;
  PlatoonTrajectory traj;
  traj.id = std::move(id);
  traj.dt = dt;
  traj.vehicles.resize(n_veh);
  traj.vehicles[0] = leader;
  for (std::size_t i = 1; i < n_veh; ++i) {
    auto& v = traj.vehicles[i];
    v.position.resize(steps);
    v.velocity.resize(steps);
    v.acceleration.resize(steps);
    const auto& f = followers[i - 1];
    f.params.validate();
    if (!(f.spacing > 0)) {
      throw InputError("simulate_followers: follower " + std::to_string(i) +
                       " has non-positive initial spacing");
    }
    v.position[0] = traj.vehicles[i - 1].position[0] - f.spacing;
    v.velocity[0] = f.velocity;
  }

  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t k = 0; k < steps; ++k) {
    // All followers react to the state at step k before anyone moves.
    for (std::size_t i = 1; i < n_veh; ++i) {
      auto& self = traj.vehicles[i];
      const auto& ahead = traj.vehicles[i - 1];
      const double s = ahead.position[k] - self.position[k];
      if (s <= kCollisionSpacing) {
        throw NumericalError("collision at step " + std::to_string(k) + ", follower " +
                             std::to_string(i) + " (spacing " + format_double(s) + " m)");
      }
      const double v = self.velocity[k];
      double a = idm_accel(s, v, v - ahead.velocity[k], followers[i - 1].params);
      if (noise.sigma > 0) a += noise.sigma * gauss(rng);
      self.acceleration[k] = a;
    }
    if (k + 1 == steps) break;
    for (std::size_t i = 1; i < n_veh; ++i) {
      auto& self = traj.vehicles[i];
      double v_next = self.velocity[k] + self.acceleration[k] * dt;
      if (v_next < 0) {
        v_next = 0;
        self.acceleration[k] = -self.velocity[k] / dt;
      }
      self.velocity[k + 1] = v_next;
      self.position[k + 1] = self.position[k] + v_next * dt;
    }
  }
  return traj;
}

std::vector<double> generate_leader_profile(const LeaderProfile& profile, std::size_t steps,
                                            double dt) {
  if (steps < 1) throw InputError("leader profile: steps must be >= 1");
  if (!(dt > 0)) throw InputError("leader profile: non-positive dt");
  if (profile.amplitude < 0) throw InputError("leader profile: negative amplitude");
  if (profile.frequency_hz < 0) throw InputError("leader profile: negative frequency");

  std::vector<double> a(steps, 0.0);
  switch (profile.kind) {
    case LeaderProfileKind::constant:
      std::fill(a.begin(), a.end(), profile.bias);
      break;
    case LeaderProfileKind::sinusoid:
      for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        a[k] = profile.amplitude * std::sin(2.0 * std::numbers::pi * profile.frequency_hz * t);
      }
      break;
    case LeaderProfileKind::stop_and_go: {
      if (!(profile.frequency_hz > 0)) {
        throw InputError("leader profile: stop_and_go needs a positive frequency");
      }
      const double period = 1.0 / profile.frequency_hz;
      for (std::size_t k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const double phase = std::fmod(t, period);
        a[k] = phase < 0.5 * period ? -profile.amplitude : profile.amplitude;
      }
      break;
    }
  }
  return a;
}

void CorpusConfig::validate() const {
  if (n_trajectories < 1) throw InputError("corpus: n_trajectories must be >= 1");
  if (steps < 2) throw InputError("corpus: steps must be >= 2");
  if (!(dt > 0)) throw InputError("corpus: dt must be positive");
  if (n_followers < 1) throw InputError("corpus: n_followers must be >= 1");
  if (heterogeneity < 0 || heterogeneity >= 1) throw InputError("corpus: heterogeneity must be in [0, 1)");
  if (noise_sigma < 0) throw InputError("corpus: negative noise sigma");
  if (!(leader_speed_min >= 0 && leader_speed_min <= leader_speed_max))
    throw InputError("corpus: bad leader speed range");
  if (!(amplitude_min >= 0 && amplitude_min <= amplitude_max))
    throw InputError("corpus: bad amplitude range");
  if (!(frequency_min_hz > 0 && frequency_min_hz <= frequency_max_hz))
    throw InputError("corpus: bad frequency range");
  nominal.validate();
}

CorpusResult generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  CorpusResult result;
  for (int n = 0; n < cfg.n_trajectories; ++n) {
    SyntheticTrajectory st;
    st.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(n));
    std::mt19937_64 rng(st.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto jitter = [&](double nominal) {
      return nominal * uniform(1.0 - cfg.heterogeneity, 1.0 + cfg.heterogeneity);
    };

    st.leader_speed = uniform(cfg.leader_speed_min, cfg.leader_speed_max);
    st.profile.kind = n % 2 == 0 ? LeaderProfileKind::sinusoid : LeaderProfileKind::stop_and_go;
    st.profile.amplitude = uniform(cfg.amplitude_min, cfg.amplitude_max);
    st.profile.frequency_hz = uniform(cfg.frequency_min_hz, cfg.frequency_max_hz);

    std::vector<FollowerInit> followers;
    double total_spacing = 0.0;
    for (int i = 0; i < cfg.n_followers; ++i) {
      IdmParams p;
      p.v0 = jitter(cfg.nominal.v0);
      p.T = jitter(cfg.nominal.T);
      p.s0 = jitter(cfg.nominal.s0);
      p.a_max = jitter(cfg.nominal.a_max);
      p.b = jitter(cfg.nominal.b);
      p.delta = std::max(1.0, jitter(cfg.nominal.delta));
      st.params.push_back(p);
      const double s = idm_equilibrium_spacing(std::min(st.leader_speed, 0.95 * p.v0), p);
      followers.push_back({p, s, st.leader_speed});
      total_spacing += s;
    }

    char id[32];
    std::snprintf(id, sizeof(id), "traj_%03d", n);
    try {
      const auto accel = generate_leader_profile(st.profile, cfg.steps, cfg.dt);
      st.trajectory = simulate_platoon({total_spacing, st.leader_speed}, accel, followers, cfg.dt,
                                       {cfg.noise_sigma, st.seed ^ 0xA5A5A5A5ull}, id);
    } catch (const std::exception& e) {
      result.failures.push_back(std::string(id) + ": " + e.what());
      continue;
    }
    result.trajectories.push_back(std::move(st));
  }
  return result;
}

// --- split / normalization --------------------------------------------------

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double ratio_train,
                                          std::uint64_t seed) {
  if (!(ratio_train > 0 && ratio_train < 1)) {
    throw InputError("split: ratio_train must be in (0, 1)");
  }
  if (ds.sequences.empty()) throw InputError("split: empty dataset");
  const std::size_t n = ds.sequences.size();
  const auto n_train = static_cast<std::size_t>(std::floor(n * ratio_train));
  if (n_train == 0) throw InputError("split: empty train split");
  if (n_train == n) throw InputError("split: empty test split");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit modulo draws keeps the permutation independent
  // of the standard library's distribution implementation.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng() % (i + 1);
    std::swap(order[i], order[j]);
  }

  Dataset train, test;
  train.dt = test.dt = ds.dt;
  train.norm = test.norm = ds.norm;
  for (std::size_t r = 0; r < n; ++r) {
    (r < n_train ? train : test).sequences.push_back(ds.sequences[order[r]]);
  }
  return {std::move(train), std::move(test)};
}

NormScales fit_normalization(const Dataset& train) {
  if (train.sequences.empty()) throw InputError("fit_normalization: empty dataset");
  const int n_x = train.sequences.front().state_dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_x);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(n_x);
  double u_sum = 0, u_sum_sq = 0;
  double count = 0;
  for (const auto& seq : train.sequences) {
    if (seq.state_dim() != n_x) throw InputError("fit_normalization: inconsistent state width");
    sum += seq.states.colwise().sum().transpose();
    count += static_cast<double>(seq.steps());
    u_sum += seq.controls.sum();
  }
  const Eigen::VectorXd mean = sum / count;
  const double u_mean = u_sum / count;
  // Two-pass for accuracy.
  for (const auto& seq : train.sequences) {
    sum_sq += (seq.states.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    u_sum_sq += (seq.controls.array() - u_mean).square().sum();
  }
  NormScales scales;
  scales.state = (sum_sq / count).cwiseSqrt();
  for (Eigen::Index c = 0; c < n_x; ++c) {
    if (scales.state(c) < 1e-8) scales.state(c) = 1.0;
  }
  scales.control = std::sqrt(u_sum_sq / count);
  if (scales.control < 1e-8) scales.control = 1.0;
  return scales;
}

}  // namespace kpl::data
