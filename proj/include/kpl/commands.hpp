#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>

#include "kpl/config.hpp"

namespace kpl::cli {

// Subcommand bodies. Each writes its files under cfg.out_dir and a short
// report to `out`. Input problems throw InputError, numerical failures throw
// NumericalError; the executable maps these to exit codes 2 and 1.

/// Synthetic corpus: <data_dir>/traj_NNN.csv, manifest.csv and run_config.csv.
void cmd_simulate(const RunConfig& cfg, std::ostream& out);

/// Trains on the train side of the split: model.json, dmdc_model.json and
/// loss_curve.csv.
void cmd_train(const RunConfig& cfg, std::ostream& out);

/// Scores every model (plus the IDM baseline) on the test side of the split.
/// With no files given, the configured Koopman and DMDc paths are used.
void cmd_eval(const RunConfig& cfg, std::span<const std::filesystem::path> model_files,
              std::ostream& out);

/// Reproduced trajectories of the test sequences for each model file.
void cmd_rollout(const RunConfig& cfg, std::span<const std::filesystem::path> model_files,
                 std::ostream& out);

/// Local and string stability of one model's (A, B).
void cmd_stability(const RunConfig& cfg, std::span<const std::filesystem::path> model_files,
                   std::ostream& out);

/// Phase-plane table of one sequence for a Koopman model.
void cmd_phase_plane(const RunConfig& cfg, std::span<const std::filesystem::path> model_files,
                     std::ostream& out);

}  // namespace kpl::cli
