#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kpl/data.hpp"
#include "kpl/koopman.hpp"
#include "kpl/stability.hpp"

namespace kpl::cli {

/// Every setting of a pipeline run. The file format is one `key = value` per
/// line with `#` comments; see README.md for the key list and defaults.
struct RunConfig {
  std::filesystem::path out_dir = "out";
  std::filesystem::path data_path;   // default: <out_dir>/data
  std::filesystem::path model_path;  // default: <out_dir>/model.json
  std::filesystem::path dmdc_path;   // default: <out_dir>/dmdc_model.json

  std::uint64_t seed = 42;  // simulation, split and training
  double dt = 0.1;

  // Synthetic corpus (dt and seed above take precedence over corpus fields).
  data::CorpusConfig corpus;

  double train_ratio = 0.8;
  koopman::TrainConfig train;

  // IDM baseline parameters, shared by every follower.
  IdmParams idm_baseline;

  int phase_horizon = 10;
  std::string phase_sequence;  // default: first test sequence

  double local_tol = 1e-9;
  double string_tol = 1e-6;
  double freq_min = 1e-3;
  double freq_max = 5.0;
  int freq_points = 400;
  stability::FrequencyUnit freq_unit = stability::FrequencyUnit::hertz;
  int follower_index = 0;  // 0: last follower

  std::filesystem::path data_dir() const;
  std::filesystem::path koopman_file() const;
  std::filesystem::path dmdc_file() const;
  data::CorpusConfig corpus_config() const;
  koopman::TrainConfig train_config() const;

  /// Throws InputError on any out-of-range setting.
  void validate() const;
};

/// Sets one key. Unknown keys and unparsable values throw InputError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses `key = value` lines on top of the defaults already in `cfg`.
void parse_config(RunConfig& cfg, std::istream& in, const std::string& source);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical `key = value` listing of every setting, in a fixed order.
std::vector<std::pair<std::string, std::string>> describe(const RunConfig& cfg);

}  // namespace kpl::cli
