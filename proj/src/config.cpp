#include "kpl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "kpl/error.hpp"

namespace kpl::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InputError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InputError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty() || trim(v) == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(key, trim(item))));
  return out;
}

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out.empty() ? "none" : out;
}


using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"out_dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
      {"data_path", [](RunConfig& c, auto&, auto& v) { c.data_path = v; }},
      {"model_path", [](RunConfig& c, auto&, auto& v) { c.model_path = v; }},
      {"dmdc_path", [](RunConfig& c, auto&, auto& v) { c.dmdc_path = v; }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"dt", [](RunConfig& c, auto& k, auto& v) { c.dt = to_double(k, v); }},
      {"n_trajectories", [](RunConfig& c, auto& k, auto& v) { c.corpus.n_trajectories = static_cast<int>(to_int(k, v)); }},
      {"steps", [](RunConfig& c, auto& k, auto& v) {
         const auto s = to_int(k, v);
         if (s < 0) throw InputError("config: steps must be non-negative");
         c.corpus.steps = static_cast<std::size_t>(s);
       }},
      {"n_followers", [](RunConfig& c, auto& k, auto& v) { c.corpus.n_followers = static_cast<int>(to_int(k, v)); }},
      {"heterogeneity", [](RunConfig& c, auto& k, auto& v) { c.corpus.heterogeneity = to_double(k, v); }},
      {"noise_sigma", [](RunConfig& c, auto& k, auto& v) { c.corpus.noise_sigma = to_double(k, v); }},
      {"leader_speed_min", [](RunConfig& c, auto& k, auto& v) { c.corpus.leader_speed_min = to_double(k, v); }},
      {"leader_speed_max", [](RunConfig& c, auto& k, auto& v) { c.corpus.leader_speed_max = to_double(k, v); }},
      {"leader_amplitude_min", [](RunConfig& c, auto& k, auto& v) { c.corpus.amplitude_min = to_double(k, v); }},
      {"leader_amplitude_max", [](RunConfig& c, auto& k, auto& v) { c.corpus.amplitude_max = to_double(k, v); }},
      {"leader_frequency_min", [](RunConfig& c, auto& k, auto& v) { c.corpus.frequency_min_hz = to_double(k, v); }},
      {"leader_frequency_max", [](RunConfig& c, auto& k, auto& v) { c.corpus.frequency_max_hz = to_double(k, v); }},
      {"idm_v0", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.v0 = to_double(k, v); }},
      {"idm_T", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.T = to_double(k, v); }},
      {"idm_s0", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.s0 = to_double(k, v); }},
      {"idm_a_max", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.a_max = to_double(k, v); }},
      {"idm_b", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.b = to_double(k, v); }},
      {"idm_delta", [](RunConfig& c, auto& k, auto& v) { c.corpus.nominal.delta = to_double(k, v); }},
      {"baseline_v0", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.v0 = to_double(k, v); }},
      {"baseline_T", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.T = to_double(k, v); }},
      {"baseline_s0", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.s0 = to_double(k, v); }},
      {"baseline_a_max", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.a_max = to_double(k, v); }},
      {"baseline_b", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.b = to_double(k, v); }},
      {"baseline_delta", [](RunConfig& c, auto& k, auto& v) { c.idm_baseline.delta = to_double(k, v); }},
      {"train_ratio", [](RunConfig& c, auto& k, auto& v) { c.train_ratio = to_double(k, v); }},
      {"lambda", [](RunConfig& c, auto& k, auto& v) { c.train.lambda = to_double(k, v); }},
      {"window", [](RunConfig& c, auto& k, auto& v) { c.train.window = static_cast<int>(to_int(k, v)); }},
      {"learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = to_double(k, v); }},
      {"lr_decay", [](RunConfig& c, auto& k, auto& v) { c.train.lr_decay = to_double(k, v); }},
      {"stride", [](RunConfig& c, auto& k, auto& v) { c.train.stride = static_cast<int>(to_int(k, v)); }},
      {"warm_start", [](RunConfig& c, auto& k, auto& v) { c.train.warm_start = to_bool(k, v); }},
      {"epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = static_cast<int>(to_int(k, v)); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
      {"hidden", [](RunConfig& c, auto& k, auto& v) { c.train.hidden = to_int_list(k, v); }},
      {"embedding_dim", [](RunConfig& c, auto& k, auto& v) { c.train.embedding_dim = static_cast<int>(to_int(k, v)); }},
      {"activation", [](RunConfig& c, auto&, auto& v) { c.train.activation = koopman::activation_from_string(v); }},
      {"phase_horizon", [](RunConfig& c, auto& k, auto& v) { c.phase_horizon = static_cast<int>(to_int(k, v)); }},
      {"phase_sequence", [](RunConfig& c, auto&, auto& v) { c.phase_sequence = v; }},
      {"local_tol", [](RunConfig& c, auto& k, auto& v) { c.local_tol = to_double(k, v); }},
      {"string_tol", [](RunConfig& c, auto& k, auto& v) { c.string_tol = to_double(k, v); }},
      {"freq_min", [](RunConfig& c, auto& k, auto& v) { c.freq_min = to_double(k, v); }},
      {"freq_max", [](RunConfig& c, auto& k, auto& v) { c.freq_max = to_double(k, v); }},
      {"freq_points", [](RunConfig& c, auto& k, auto& v) { c.freq_points = static_cast<int>(to_int(k, v)); }},
      {"freq_unit", [](RunConfig& c, auto&, auto& v) {
         if (v == "hz") c.freq_unit = stability::FrequencyUnit::hertz;
         else if (v == "rad") c.freq_unit = stability::FrequencyUnit::rad_per_s;
         else throw InputError("config: freq_unit must be 'hz' or 'rad'");
       }},
      {"follower_index", [](RunConfig& c, auto& k, auto& v) { c.follower_index = static_cast<int>(to_int(k, v)); }},
  };
  return table;
}

}  // namespace

std::filesystem::path RunConfig::data_dir() const {
  return data_path.empty() ? out_dir / "data" : data_path;
}

std::filesystem::path RunConfig::koopman_file() const {
  return model_path.empty() ? out_dir / "model.json" : model_path;
}

std::filesystem::path RunConfig::dmdc_file() const {
  return dmdc_path.empty() ? out_dir / "dmdc_model.json" : dmdc_path;
}

data::CorpusConfig RunConfig::corpus_config() const {
  auto c = corpus;
  c.dt = dt;
  c.seed = seed;
  return c;
}

koopman::TrainConfig RunConfig::train_config() const {
  auto t = train;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  if (!(dt > 0)) throw InputError("config: dt must be positive");
  if (corpus.steps < 2) throw InputError("config: steps must be >= 2");
  corpus_config().validate();
  train_config().validate();
  idm_baseline.validate();
  if (!(train_ratio > 0 && train_ratio < 1)) throw InputError("config: train_ratio must be in (0, 1)");
  if (phase_horizon < 1) throw InputError("config: phase_horizon must be >= 1");
  if (!(local_tol >= 0) || !(string_tol >= 0)) throw InputError("config: tolerances must be >= 0");
  if (!(freq_min > 0 && freq_max > freq_min) || freq_points < 2) {
    throw InputError("config: need 0 < freq_min < freq_max and freq_points >= 2");
  }
  if (follower_index < 0) throw InputError("config: follower_index must be >= 0");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw InputError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

void parse_config(RunConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(source + ":" + std::to_string(row) + ": expected 'key = value'");
    }
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const InputError& e) {
      throw InputError(source + ":" + std::to_string(row) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config not found: " + path.string());
  RunConfig cfg;
  parse_config(cfg, in, path.string());
  return cfg;
}

std::vector<std::pair<std::string, std::string>> describe(const RunConfig& c) {
  return {
      {"out_dir", c.out_dir.string()},
      {"data_path", c.data_dir().string()},
      {"model_path", c.koopman_file().string()},
      {"dmdc_path", c.dmdc_file().string()},
      {"seed", std::to_string(c.seed)},
      {"dt", num(c.dt)},
      {"n_trajectories", std::to_string(c.corpus.n_trajectories)},
      {"steps", std::to_string(c.corpus.steps)},
      {"n_followers", std::to_string(c.corpus.n_followers)},
      {"heterogeneity", num(c.corpus.heterogeneity)},
      {"noise_sigma", num(c.corpus.noise_sigma)},
      {"leader_speed_min", num(c.corpus.leader_speed_min)},
      {"leader_speed_max", num(c.corpus.leader_speed_max)},
      {"leader_amplitude_min", num(c.corpus.amplitude_min)},
      {"leader_amplitude_max", num(c.corpus.amplitude_max)},
      {"leader_frequency_min", num(c.corpus.frequency_min_hz)},
      {"leader_frequency_max", num(c.corpus.frequency_max_hz)},
      {"idm_v0", num(c.corpus.nominal.v0)},
      {"idm_T", num(c.corpus.nominal.T)},
      {"idm_s0", num(c.corpus.nominal.s0)},
      {"idm_a_max", num(c.corpus.nominal.a_max)},
      {"idm_b", num(c.corpus.nominal.b)},
      {"idm_delta", num(c.corpus.nominal.delta)},
      {"baseline_v0", num(c.idm_baseline.v0)},
      {"baseline_T", num(c.idm_baseline.T)},
      {"baseline_s0", num(c.idm_baseline.s0)},
      {"baseline_a_max", num(c.idm_baseline.a_max)},
      {"baseline_b", num(c.idm_baseline.b)},
      {"baseline_delta", num(c.idm_baseline.delta)},
      {"train_ratio", num(c.train_ratio)},
      {"lambda", num(c.train.lambda)},
      {"window", std::to_string(c.train.window)},
      {"learning_rate", num(c.train.learning_rate)},
      {"lr_decay", num(c.train.lr_decay)},
      {"stride", std::to_string(c.train.stride)},
      {"warm_start", c.train.warm_start ? "true" : "false"},
      {"epochs", std::to_string(c.train.epochs)},
      {"batch_size", std::to_string(c.train.batch_size)},
      {"hidden", join(c.train.hidden)},
      {"embedding_dim", std::to_string(c.train.embedding_dim)},
      {"activation", koopman::to_string(c.train.activation)},
      {"phase_horizon", std::to_string(c.phase_horizon)},
      {"phase_sequence", c.phase_sequence},
      {"local_tol", num(c.local_tol)},
      {"string_tol", num(c.string_tol)},
      {"freq_min", num(c.freq_min)},
      {"freq_max", num(c.freq_max)},
      {"freq_points", std::to_string(c.freq_points)},
      {"freq_unit", c.freq_unit == stability::FrequencyUnit::hertz ? "hz" : "rad"},
      {"follower_index", std::to_string(c.follower_index)},
  };
}

}  // namespace kpl::cli
