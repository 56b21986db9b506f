#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kpl/baselines.hpp"
#include "kpl/data.hpp"
#include "kpl/error.hpp"
#include "kpl/evaluation.hpp"
#include "kpl/idm.hpp"
#include "kpl/koopman.hpp"
#include "kpl/model_io.hpp"
#include "kpl/stability.hpp"

namespace py = pybind11;
using namespace kpl;

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Koopman platoon dynamics: data, training, baselines and stability";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<IdmParams>(m, "IdmParams")
      .def(py::init<>())
      .def_readwrite("v0", &IdmParams::v0)
      .def_readwrite("T", &IdmParams::T)
      .def_readwrite("s0", &IdmParams::s0)
      .def_readwrite("a_max", &IdmParams::a_max)
      .def_readwrite("b", &IdmParams::b)
      .def_readwrite("delta", &IdmParams::delta);
  m.def("idm_accel", &idm_accel, py::arg("s"), py::arg("v"), py::arg("dv"),
        py::arg("params") = IdmParams{});
  m.def("idm_equilibrium_spacing", &idm_equilibrium_spacing, py::arg("v"),
        py::arg("params") = IdmParams{});

  // --- data ---
  py::class_<data::NormScales>(m, "NormScales")
      .def(py::init<>())
      .def_readwrite("state", &data::NormScales::state)
      .def_readwrite("control", &data::NormScales::control);

  py::class_<data::StateSequence>(m, "StateSequence")
      .def_readonly("id", &data::StateSequence::id)
      .def_readonly("n_followers", &data::StateSequence::n_followers)
      .def_readonly("states", &data::StateSequence::states)
      .def_readonly("controls", &data::StateSequence::controls)
      .def_readonly("leader_position", &data::StateSequence::leader_position)
      .def_readonly("leader_velocity", &data::StateSequence::leader_velocity);

  py::class_<data::Dataset>(m, "Dataset")
      .def_readonly("sequences", &data::Dataset::sequences)
      .def_readonly("dt", &data::Dataset::dt)
      .def_readwrite("norm", &data::Dataset::norm)
      .def("__len__", [](const data::Dataset& d) { return d.sequences.size(); });

  py::class_<data::CorpusConfig>(m, "CorpusConfig")
      .def(py::init<>())
      .def_readwrite("n_trajectories", &data::CorpusConfig::n_trajectories)
      .def_readwrite("steps", &data::CorpusConfig::steps)
      .def_readwrite("dt", &data::CorpusConfig::dt)
      .def_readwrite("n_followers", &data::CorpusConfig::n_followers)
      .def_readwrite("nominal", &data::CorpusConfig::nominal)
      .def_readwrite("heterogeneity", &data::CorpusConfig::heterogeneity)
      .def_readwrite("noise_sigma", &data::CorpusConfig::noise_sigma)
      .def_readwrite("seed", &data::CorpusConfig::seed);

  m.def(
      "generate_dataset",
      [](const data::CorpusConfig& cfg) {
        const auto corpus = data::generate_corpus(cfg);
        data::Dataset ds;
        ds.dt = cfg.dt;
        for (const auto& t : corpus.trajectories) ds.sequences.push_back(data::derive_states(t.trajectory));
        return py::make_tuple(ds, corpus.failures);
      },
      py::arg("config") = data::CorpusConfig{},
      "Simulates a corpus and returns (dataset, failure messages).");
  m.def(
      "write_corpus_csv",
      [](const data::CorpusConfig& cfg, const std::filesystem::path& path) {
        const auto corpus = data::generate_corpus(cfg);
        std::vector<data::PlatoonTrajectory> trajs;
        for (const auto& t : corpus.trajectories) trajs.push_back(t.trajectory);
        data::write_trajectory_csv(path, trajs);
        return trajs.size();
      },
      py::arg("config"), py::arg("path"));
  m.def("load_trajectories", &data::load_trajectories, py::arg("path"), py::arg("dt") = 0.1);
  m.def("split_dataset", &data::split_dataset, py::arg("dataset"), py::arg("ratio_train") = 0.8,
        py::arg("seed") = 0);
  m.def("fit_normalization", &data::fit_normalization, py::arg("train"));

  // --- koopman ---
  py::enum_<koopman::Activation>(m, "Activation")
      .value("tanh", koopman::Activation::tanh)
      .value("identity", koopman::Activation::identity);

  py::class_<koopman::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &koopman::TrainConfig::lambda)
      .def_readwrite("window", &koopman::TrainConfig::window)
      .def_readwrite("stride", &koopman::TrainConfig::stride)
      .def_readwrite("warm_start", &koopman::TrainConfig::warm_start)
      .def_readwrite("learning_rate", &koopman::TrainConfig::learning_rate)
      .def_readwrite("lr_decay", &koopman::TrainConfig::lr_decay)
      .def_readwrite("epochs", &koopman::TrainConfig::epochs)
      .def_readwrite("batch_size", &koopman::TrainConfig::batch_size)
      .def_readwrite("seed", &koopman::TrainConfig::seed)
      .def_readwrite("hidden", &koopman::TrainConfig::hidden)
      .def_readwrite("embedding_dim", &koopman::TrainConfig::embedding_dim)
      .def_readwrite("activation", &koopman::TrainConfig::activation);

  py::class_<koopman::KoopmanModel>(m, "KoopmanModel")
      .def_property_readonly("A", [](const koopman::KoopmanModel& k) { return k.op.A; })
      .def_property_readonly("B", [](const koopman::KoopmanModel& k) { return k.op.B; })
      .def_readonly("scales", &koopman::KoopmanModel::scales)
      .def_readonly("n_followers", &koopman::KoopmanModel::n_followers)
      .def_readonly("dt", &koopman::KoopmanModel::dt)
      .def_property_readonly("n_x", &koopman::KoopmanModel::n_x)
      .def_property_readonly("d", &koopman::KoopmanModel::d)
      .def_property_readonly("m", &koopman::KoopmanModel::m)
      .def("encode",
           [](const koopman::KoopmanModel& k, const Eigen::VectorXd& x) {
             return koopman::encode(x, k.encoder);
           })
      .def("rollout",
           [](const koopman::KoopmanModel& k, const Eigen::VectorXd& x0, const Eigen::VectorXd& u) {
             return koopman::rollout_physical(x0, as_span(u), k);
           },
           py::arg("x0"), py::arg("u"),
           "Physical-unit states for steps 1..K from a physical x0 and leader accelerations.");

  py::class_<koopman::TrainResult>(m, "TrainResult")
      .def_readonly("model", &koopman::TrainResult::model)
      .def_readonly("loss_curve", &koopman::TrainResult::loss_curve)
      .def_readonly("final_loss", &koopman::TrainResult::final_loss);

  m.def(
      "train",
      [](const data::Dataset& ds, const koopman::TrainConfig& cfg) {
        py::gil_scoped_release release;
        return koopman::train(ds, cfg);
      },
      py::arg("train_set"), py::arg("config") = koopman::TrainConfig{});

  m.def(
      "save_model",
      [](const koopman::KoopmanModel& k, const std::filesystem::path& p) { io::save_model(k, p); },
      py::arg("model"), py::arg("path"));
  m.def("load_model", &io::load_model, py::arg("path"));

  // --- baselines ---
  py::class_<baselines::DmdcModel>(m, "DmdcModel")
      .def_readonly("A", &baselines::DmdcModel::A)
      .def_readonly("B", &baselines::DmdcModel::B)
      .def_readonly("rank_used", &baselines::DmdcModel::rank_used)
      .def("rollout", [](const baselines::DmdcModel& d, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& u) { return baselines::dmdc_rollout(d, x0, as_span(u)); });
  m.def(
      "dmdc_fit",
      [](const Eigen::MatrixXd& states, const Eigen::VectorXd& controls, std::optional<int> rank) {
        return baselines::dmdc_fit(states, controls, rank);
      },
      py::arg("states"), py::arg("controls"), py::arg("rank") = py::none());

  // --- stability ---
  py::enum_<stability::LocalVerdict>(m, "LocalVerdict")
      .value("asymptotically_stable", stability::LocalVerdict::asymptotically_stable)
      .value("marginally_stable", stability::LocalVerdict::marginally_stable)
      .value("unstable", stability::LocalVerdict::unstable);
  py::enum_<stability::FrequencyUnit>(m, "FrequencyUnit")
      .value("hertz", stability::FrequencyUnit::hertz)
      .value("rad_per_s", stability::FrequencyUnit::rad_per_s);

  py::class_<stability::EigenReport>(m, "EigenReport")
      .def_readonly("eigenvalues", &stability::EigenReport::eigenvalues)
      .def_readonly("magnitudes", &stability::EigenReport::magnitudes)
      .def_readonly("max_magnitude", &stability::EigenReport::max_magnitude)
      .def_readonly("verdict", &stability::EigenReport::verdict);
  m.def("local_stability", &stability::local_stability, py::arg("A"), py::arg("tol") = 1e-9);

  py::class_<stability::ContinuousSystem>(m, "ContinuousSystem")
      .def(py::init<>())
      .def_readwrite("A", &stability::ContinuousSystem::A)
      .def_readwrite("B", &stability::ContinuousSystem::B)
      .def_readwrite("dt_source", &stability::ContinuousSystem::dt_source);
  m.def("d2c_zoh", &stability::d2c_zoh, py::arg("A"), py::arg("B"), py::arg("dt"));
  m.def("c2d_zoh", &stability::c2d_zoh, py::arg("system"), py::arg("dt"));
  m.def("transfer_gain", &stability::transfer_gain, py::arg("system"), py::arg("output_index"),
        py::arg("frequency"), py::arg("unit") = stability::FrequencyUnit::hertz);

  py::class_<stability::FrequencyResponse>(m, "FrequencyResponse")
      .def_readonly("frequencies", &stability::FrequencyResponse::frequencies)
      .def_readonly("gains", &stability::FrequencyResponse::gains)
      .def_readonly("peak_gain", &stability::FrequencyResponse::peak_gain)
      .def_readonly("peak_frequency", &stability::FrequencyResponse::peak_frequency)
      .def_readonly("string_stable", &stability::FrequencyResponse::string_stable)
      .def_readonly("warnings", &stability::FrequencyResponse::warnings);
  m.def(
      "string_stability_sweep",
      [](const stability::ContinuousSystem& sys, int output_index, std::vector<double> grid,
         double tol, stability::FrequencyUnit unit) {
        if (grid.empty()) grid = stability::default_grid();
        return stability::string_stability_sweep(sys, output_index, grid, tol, unit);
      },
      py::arg("system"), py::arg("output_index"), py::arg("grid") = std::vector<double>{},
      py::arg("tol") = 1e-6, py::arg("unit") = stability::FrequencyUnit::hertz);

  // --- evaluation ---
  m.def("reconstruct_positions", &evaluation::reconstruct_positions, py::arg("spacings"),
        py::arg("leader_position"));
  m.def(
      "position_rmse",
      [](const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
        const auto r = evaluation::position_metrics(pred, truth);
        return py::make_tuple(r.rmse, r.mae);
      },
      py::arg("pred"), py::arg("truth"), "Pooled (rmse, mae).");
}
