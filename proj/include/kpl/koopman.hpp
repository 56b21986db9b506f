#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kpl/data.hpp"

namespace kpl::koopman {

enum class Activation { tanh, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

/// Fully connected embedding network psi: R^{n_x} -> R^{d}. Hidden layers use
/// `activation`; the output layer is linear. With d == 0 there are no layers
/// and the lifting is the identity.
class Encoder {
 public:
  Encoder() = default;
  /// Zero-initialized network.
  Encoder(int input_dim, std::vector<int> hidden, int output_dim,
          Activation activation = Activation::tanh);
  /// Uniform fan-in initialization: every weight and bias drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Encoder random(int input_dim, std::vector<int> hidden, int output_dim,
                        std::uint64_t seed, Activation activation = Activation::tanh);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  Activation activation() const { return activation_; }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// psi(x) for a single state.
  Eigen::VectorXd features(const Eigen::VectorXd& x) const;
  /// psi applied column-wise to an n_x x N matrix.
  Eigen::MatrixXd features_batch(const Eigen::MatrixXd& x_cols) const;

  /// Parameter count across all layers.
  Eigen::Index parameter_count() const;

  void validate() const;

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<int> hidden_;
  Activation activation_ = Activation::tanh;
  std::vector<DenseLayer> layers_;
};

struct KoopmanOperator {
  Eigen::MatrixXd A;  // m x m
  Eigen::VectorXd B;  // m

  int dim() const { return static_cast<int>(A.rows()); }
  void validate() const;
};

struct KoopmanModel {
  Encoder encoder;
  KoopmanOperator op;
  data::NormScales scales;
  int n_followers = 0;  // 0 for generic (non-platoon) state layouts
  double dt = 0.1;

  int n_x() const { return encoder.input_dim(); }
  int d() const { return encoder.output_dim(); }
  int m() const { return n_x() + d(); }

  void validate() const;
};

/// Z = [x ; psi(x)].
Eigen::VectorXd encode(const Eigen::VectorXd& x, const Encoder& encoder);
/// First n_x entries of z, i.e. M z with M = [I 0].
Eigen::VectorXd project(const Eigen::VectorXd& z, int n_x);
/// z' = A z + B u.
Eigen::VectorXd step(const Eigen::VectorXd& z, double u, const KoopmanOperator& op);

struct Rollout {
  Eigen::MatrixXd lifted;  // (K+1) x m, row 0 is encode(x0)
  Eigen::MatrixXd states;  // K x n_x, predictions for steps 1..K
};

using EncodeFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Encodes x0 once with `encode_fn`, then evolves linearly. Inputs and outputs
/// are in model (normalized) coordinates.
Rollout rollout(const Eigen::VectorXd& x0, std::span<const double> u, const KoopmanOperator& op,
                int n_x, const EncodeFn& encode_fn);
Rollout rollout(const Eigen::VectorXd& x0, std::span<const double> u, const KoopmanModel& model);

/// Physical-unit rollout: scales x0 and u, returns K x n_x unscaled predictions.
Eigen::MatrixXd rollout_physical(const Eigen::VectorXd& x0_raw, std::span<const double> u_raw,
                                 const KoopmanModel& model);

/// sum_k lambda^{k-1} ||Z_k - Zhat_k||^2 over rows k = 1..K.
double loss(const Eigen::MatrixXd& z_target, const Eigen::MatrixXd& z_pred, double lambda);

/// Training window: K+1 consecutive states and the K controls between them.
struct Window {
  Eigen::MatrixXd states;    // (K+1) x n_x
  Eigen::VectorXd controls;  // K
};

/// Windows of length K+1. The default stride K makes consecutive windows share
/// only their boundary state.
std::vector<Window> make_windows(std::span<const data::Episode> episodes, int horizon,
                                 int stride = 0);

struct Gradients {
  std::vector<DenseLayer> encoder;
  Eigen::MatrixXd A;
  Eigen::VectorXd B;
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients grad;
};

/// Mean window loss over `batch`; targets are re-encoded with the current
/// encoder.
double batch_loss(std::span<const Window> batch, const Encoder& encoder,
                  const KoopmanOperator& op, double lambda);

/// Exact reverse-mode gradients of batch_loss with respect to the encoder
/// parameters, A and B. The gradient flows through both the rollout start
/// encode(x_0) and the targets encode(x_k).
LossAndGradients loss_gradients(std::span<const Window> batch, const Encoder& encoder,
                                const KoopmanOperator& op, double lambda);

struct TrainConfig {
  double lambda = 0.98;
  int window = 50;
  int stride = 0;  // window start spacing; 0 means `window`
  // Seed the physical block of (A, B) with the one-step least-squares fit
  // instead of (I, 0). Embedding rows and columns still start at identity/zero.
  bool warm_start = false;
  double learning_rate = 3e-3;
  double lr_decay = 0.99;  // multiplicative per epoch
  int epochs = 600;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64, 64};
  int embedding_dim = 40;
  Activation activation = Activation::tanh;

  void validate() const;
};

struct TrainResult {
  KoopmanModel model;
  std::vector<double> loss_curve;  // mean batch loss per epoch
  double final_loss = 0.0;         // full training-set loss at the returned parameters
};

/// Per-epoch progress hook (epoch, mean loss).
using TrainObserver = std::function<void(int, double)>;

/// Jointly fits the encoder and (A, B) with Adam on the decayed multi-step
/// loss. `episodes` must already be in model coordinates; `scales`,
/// `n_followers` and `dt` are recorded in the returned model.
TrainResult train(std::span<const data::Episode> episodes, const TrainConfig& cfg,
                  const data::NormScales& scales, int n_followers, double dt,
                  const TrainObserver& observer = {});

/// Normalizes `train_set` (fitting scales when absent) and trains.
TrainResult train(const data::Dataset& train_set, const TrainConfig& cfg,
                  const TrainObserver& observer = {});

}  // namespace kpl::koopman
