// kpl: simulate platoon data, train the Koopman model and its baselines,
// evaluate them and analyze stability.

#include <cstdint>
#include <exception>
#include <optional>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kpl/commands.hpp"
#include "kpl/config.hpp"
#include "kpl/error.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> settings;
  std::vector<std::string> models;
};

void add_common(CLI::App* sub, CommonFlags& f, bool takes_models) {
  sub->add_option("--config", f.config, "Run configuration file (key = value lines)");
  sub->add_option("--seed", f.seed, "Seed for simulation, split and training");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--set", f.settings, "Override one setting, as key=value")->take_all();
  if (takes_models) sub->add_option("models", f.models, "Model files (default: from config)");
}

kpl::cli::RunConfig resolve(const CommonFlags& f) {
  kpl::cli::RunConfig cfg = f.config.empty() ? kpl::cli::RunConfig{} : kpl::cli::load_config(f.config);
  for (const auto& s : f.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw kpl::InputError("--set expects key=value, got '" + s + "'");
    kpl::cli::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman platoon dynamics: simulate, train, eval, rollout, stability, phase-plane"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* simulate = app.add_subcommand("simulate", "Generate the synthetic trajectory corpus");
  auto* train = app.add_subcommand("train", "Train the Koopman model and the DMDc baseline");
  auto* eval = app.add_subcommand("eval", "Compare models on the held-out sequences");
  auto* rollout = app.add_subcommand("rollout", "Reproduce held-out trajectories with a model");
  auto* stab = app.add_subcommand("stability", "Local and string stability of a model");
  auto* phase = app.add_subcommand("phase-plane", "Export phase-plane points for one sequence");
  add_common(simulate, flags, false);
  add_common(train, flags, false);
  for (auto* sub : {eval, rollout, stab, phase}) add_common(sub, flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(flags);
    const std::vector<std::filesystem::path> files(flags.models.begin(), flags.models.end());
    if (simulate->parsed()) kpl::cli::cmd_simulate(cfg, std::cout);
    else if (train->parsed()) kpl::cli::cmd_train(cfg, std::cout);
    else if (eval->parsed()) kpl::cli::cmd_eval(cfg, files, std::cout);
    else if (rollout->parsed()) kpl::cli::cmd_rollout(cfg, files, std::cout);
    else if (stab->parsed()) kpl::cli::cmd_stability(cfg, files, std::cout);
    else kpl::cli::cmd_phase_plane(cfg, files, std::cout);
  } catch (const kpl::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
