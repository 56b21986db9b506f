#include "kpl/koopman.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "kpl/baselines.hpp"
#include "kpl/error.hpp"

namespace kpl::koopman {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& h, Activation a) {
  return a == Activation::tanh ? Eigen::MatrixXd(h.array().tanh()) : h;
}

// Forward pass that keeps every layer input for the backward sweep.
struct ForwardTape {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l
  Eigen::MatrixXd output;
};

ForwardTape forward(const Encoder& enc, const Eigen::MatrixXd& x_cols) {
  ForwardTape tape;
  const auto& layers = enc.layers();
  tape.inputs.reserve(layers.size());
  Eigen::MatrixXd a = x_cols;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd h = layers[l].weights * a;
    h.colwise() += layers[l].bias;
    tape.inputs.push_back(std::move(a));
    a = l + 1 < layers.size() ? activate(h, enc.activation()) : std::move(h);
  }
  tape.output = std::move(a);
  return tape;
}

// Accumulates parameter gradients for an upstream gradient `delta` on the
// encoder output.
void backward(const Encoder& enc, const ForwardTape& tape, Eigen::MatrixXd delta,
              std::vector<DenseLayer>& grads) {
  const auto& layers = enc.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weights.noalias() += delta * tape.inputs[l].transpose();
    grads[l].bias += delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = layers[l].weights.transpose() * delta;
    if (enc.activation() == Activation::tanh) {
      // inputs[l] = tanh(h_{l-1}), so tanh' = 1 - inputs[l]^2.
      back.array() *= 1.0 - tape.inputs[l].array().square();
    }
    delta = std::move(back);
  }
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    out.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                   Eigen::VectorXd::Zero(l.bias.size())});
  }
  return out;
}

// Lays the batch out step-major: column k*B + b holds step k of window b.
struct BatchLayout {
  int horizon = 0;
  int windows = 0;
  int n_x = 0;
  Eigen::MatrixXd x_cols;    // n_x x (K+1)B
  Eigen::MatrixXd controls;  // K x B
};

BatchLayout layout(std::span<const Window> batch) {
  check(!batch.empty(), "empty batch");
  BatchLayout bl;
  bl.horizon = static_cast<int>(batch.front().controls.size());
  bl.windows = static_cast<int>(batch.size());
  bl.n_x = static_cast<int>(batch.front().states.cols());
  check(bl.horizon >= 1, "window horizon must be >= 1");
  bl.x_cols.resize(bl.n_x, static_cast<Eigen::Index>(bl.horizon + 1) * bl.windows);
  bl.controls.resize(bl.horizon, bl.windows);
  for (int b = 0; b < bl.windows; ++b) {
    const auto& w = batch[b];
    check(w.controls.size() == bl.horizon && w.states.rows() == bl.horizon + 1 &&
              w.states.cols() == bl.n_x,
          "inconsistent window shapes in batch");
    for (int k = 0; k <= bl.horizon; ++k) {
      bl.x_cols.col(static_cast<Eigen::Index>(k) * bl.windows + b) = w.states.row(k).transpose();
    }
    bl.controls.col(b) = w.controls;
  }
  return bl;
}

struct BatchForward {
  ForwardTape tape;
  Eigen::MatrixXd targets;             // m x (K+1)B
  std::vector<Eigen::MatrixXd> preds;  // K+1 entries of m x B
  std::vector<Eigen::MatrixXd> errors; // K+1 entries (index 0 unused)
  double loss = 0.0;
};

BatchForward run_batch(const BatchLayout& bl, const Encoder& enc, const KoopmanOperator& op,
                       double lambda) {
  check(enc.input_dim() == bl.n_x, "encoder input width does not match window states");
  const int m = bl.n_x + enc.output_dim();
  check(op.A.rows() == m && op.A.cols() == m && op.B.size() == m,
        "operator shape does not match encoder");
  BatchForward f;
  f.targets.resize(m, bl.x_cols.cols());
  f.targets.topRows(bl.n_x) = bl.x_cols;
  if (enc.output_dim() > 0) {
    f.tape = forward(enc, bl.x_cols);
    f.targets.bottomRows(enc.output_dim()) = f.tape.output;
  }
  const int B = bl.windows;
  f.preds.resize(bl.horizon + 1);
  f.errors.resize(bl.horizon + 1);
  f.preds[0] = f.targets.leftCols(B);
  double total = 0.0;
  double weight = 1.0;
  for (int k = 1; k <= bl.horizon; ++k) {
    f.preds[k].noalias() = op.A * f.preds[k - 1];
    f.preds[k].noalias() += op.B * bl.controls.row(k - 1);
    f.errors[k] = f.preds[k] - f.targets.middleCols(static_cast<Eigen::Index>(k) * B, B);
    total += weight * f.errors[k].squaredNorm();
    weight *= lambda;
  }
  f.loss = total / B;
  return f;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw InputError("unknown activation '" + name + "'");
}

Encoder::Encoder(int input_dim, std::vector<int> hidden, int output_dim, Activation activation)
    : input_dim_(input_dim),
      output_dim_(output_dim),
      hidden_(std::move(hidden)),
      activation_(activation) {
  check(input_dim >= 1, "encoder input width must be >= 1");
  check(output_dim >= 0, "encoder output width must be >= 0");
  for (int h : hidden_) check(h >= 1, "hidden layer widths must be >= 1");
  if (output_dim_ == 0) {
    hidden_.clear();
    return;
  }
  int in = input_dim_;
  for (int h : hidden_) {
    layers_.push_back({Eigen::MatrixXd::Zero(h, in), Eigen::VectorXd::Zero(h)});
    in = h;
  }
  layers_.push_back({Eigen::MatrixXd::Zero(output_dim_, in), Eigen::VectorXd::Zero(output_dim_)});
}

Encoder Encoder::random(int input_dim, std::vector<int> hidden, int output_dim,
                        std::uint64_t seed, Activation activation) {
  Encoder enc(input_dim, std::move(hidden), output_dim, activation);
  std::mt19937_64 rng(seed);
  for (auto& layer : enc.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
    auto draw = [&] {
      // 53-bit uniform in [0, 1), independent of <random> distribution details.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      return bound * (2.0 * u - 1.0);
    };
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = draw();
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = draw();
  }
  return enc;
}

Eigen::VectorXd Encoder::features(const Eigen::VectorXd& x) const {
  return features_batch(x);
}

Eigen::MatrixXd Encoder::features_batch(const Eigen::MatrixXd& x_cols) const {
  check(x_cols.rows() == input_dim_, "encoder input has " + std::to_string(x_cols.rows()) +
                                         " rows, expected " + std::to_string(input_dim_));
  if (output_dim_ == 0) return Eigen::MatrixXd(0, x_cols.cols());
  return forward(*this, x_cols).output;
}

Eigen::Index Encoder::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

void Encoder::validate() const {
  check(input_dim_ >= 1 && output_dim_ >= 0, "invalid encoder dimensions");
  if (output_dim_ == 0) {
    check(layers_.empty(), "encoder with d = 0 must have no layers");
    return;
  }
  check(layers_.size() == hidden_.size() + 1, "encoder layer count mismatch");
  int in = input_dim_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const int out = l < hidden_.size() ? hidden_[l] : output_dim_;
    check(layers_[l].weights.rows() == out && layers_[l].weights.cols() == in &&
              layers_[l].bias.size() == out,
          "encoder layer " + std::to_string(l) + " has inconsistent shape");
    check(layers_[l].weights.allFinite() && layers_[l].bias.allFinite(),
          "encoder layer " + std::to_string(l) + " has non-finite entries");
    in = out;
  }
}

void KoopmanOperator::validate() const {
  check(A.rows() == A.cols(), "A must be square");
  check(B.size() == A.rows(), "B must have as many rows as A");
  check(A.allFinite() && B.allFinite(), "operator has non-finite entries");
}

void KoopmanModel::validate() const {
  encoder.validate();
  op.validate();
  check(op.dim() == m(), "operator dimension " + std::to_string(op.dim()) +
                             " does not match n_x + d = " + std::to_string(m()));
  check(scales.state.size() == n_x(), "normalization width does not match n_x");
  scales.validate();
  check(dt > 0, "model dt must be positive");
  check(n_followers == 0 || 3 * n_followers == n_x(),
        "n_followers inconsistent with state width");
}

Eigen::VectorXd encode(const Eigen::VectorXd& x, const Encoder& encoder) {
  check(x.size() == encoder.input_dim(), "encode: state has " + std::to_string(x.size()) +
                                             " entries, expected " +
                                             std::to_string(encoder.input_dim()));
  Eigen::VectorXd z(x.size() + encoder.output_dim());
  z.head(x.size()) = x;
  if (encoder.output_dim() > 0) z.tail(encoder.output_dim()) = encoder.features(x);
  return z;
}

Eigen::VectorXd project(const Eigen::VectorXd& z, int n_x) {
  check(n_x >= 0 && z.size() >= n_x, "project: lifted state shorter than n_x");
  return z.head(n_x);
}

Eigen::VectorXd step(const Eigen::VectorXd& z, double u, const KoopmanOperator& op) {
  check(z.size() == op.A.cols() && op.B.size() == op.A.rows(), "step: shape mismatch");
  Eigen::VectorXd next = op.A * z;
  next += op.B * u;
  return next;
}

Rollout rollout(const Eigen::VectorXd& x0, std::span<const double> u, const KoopmanOperator& op,
                int n_x, const EncodeFn& encode_fn) {
  const auto K = static_cast<Eigen::Index>(u.size());
  Rollout r;
  Eigen::VectorXd z = encode_fn(x0);
  check(z.size() == op.A.rows(), "rollout: lifted state does not match operator");
  r.lifted.resize(K + 1, z.size());
  r.states.resize(K, n_x);
  r.lifted.row(0) = z.transpose();
  for (Eigen::Index k = 0; k < K; ++k) {
    z = step(z, u[k], op);
    if (!z.allFinite()) {
      throw NumericalError("rollout diverged at step " + std::to_string(k + 1));
    }
    r.lifted.row(k + 1) = z.transpose();
    r.states.row(k) = z.head(n_x).transpose();
  }
  return r;
}

Rollout rollout(const Eigen::VectorXd& x0, std::span<const double> u, const KoopmanModel& model) {
  return rollout(x0, u, model.op, model.n_x(),
                 [&](const Eigen::VectorXd& x) { return encode(x, model.encoder); });
}

Eigen::MatrixXd rollout_physical(const Eigen::VectorXd& x0_raw, std::span<const double> u_raw,
                                 const KoopmanModel& model) {
  std::vector<double> u(u_raw.size());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = model.scales.apply_control(u_raw[k]);
  const auto r = rollout(model.scales.apply_state(x0_raw), u, model);
  return model.scales.invert_states(r.states);
}

double loss(const Eigen::MatrixXd& z_target, const Eigen::MatrixXd& z_pred, double lambda) {
  check(z_target.rows() == z_pred.rows() && z_target.cols() == z_pred.cols(),
        "loss: target and prediction shapes differ");
  check(lambda > 0 && lambda <= 1, "loss: lambda must be in (0, 1]");
  double total = 0.0;
  double weight = 1.0;
  for (Eigen::Index k = 0; k < z_target.rows(); ++k) {
    total += weight * (z_target.row(k) - z_pred.row(k)).squaredNorm();
    weight *= lambda;
  }
  return total;
}

std::vector<Window> make_windows(std::span<const data::Episode> episodes, int horizon,
                                 int stride) {
  check(horizon >= 1, "window horizon must be >= 1");
  check(stride >= 0, "window stride must be >= 0");
  if (stride == 0) stride = horizon;
  std::vector<Window> out;
  for (const auto& ep : episodes) {
    check(ep.controls.size() == ep.states.rows(), "episode controls/states length mismatch");
    for (Eigen::Index start = 0; start + horizon < ep.states.rows(); start += stride) {
      out.push_back({ep.states.middleRows(start, horizon + 1), ep.controls.segment(start, horizon)});
    }
  }
  return out;
}

double batch_loss(std::span<const Window> batch, const Encoder& encoder, const KoopmanOperator& op,
                  double lambda) {
  check(lambda > 0 && lambda <= 1, "lambda must be in (0, 1]");
  return run_batch(layout(batch), encoder, op, lambda).loss;
}

LossAndGradients loss_gradients(std::span<const Window> batch, const Encoder& encoder,
                                const KoopmanOperator& op, double lambda) {
  check(lambda > 0 && lambda <= 1, "lambda must be in (0, 1]");
  const BatchLayout bl = layout(batch);
  BatchForward f = run_batch(bl, encoder, op, lambda);
  const int B = bl.windows;
  const int K = bl.horizon;
  const int m = static_cast<int>(op.A.rows());

  LossAndGradients out;
  out.loss = f.loss;
  out.grad.A = Eigen::MatrixXd::Zero(m, m);
  out.grad.B = Eigen::VectorXd::Zero(m);
  out.grad.encoder = zero_like(encoder.layers());

  // Gradient w.r.t. the targets Z_k (k >= 1) and the rollout start Z_0.
  Eigen::MatrixXd d_targets(m, f.targets.cols());

  std::vector<double> weights(K + 1, 1.0);
  for (int k = 2; k <= K; ++k) weights[k] = weights[k - 1] * lambda;

  // g holds dL/dZhat_k, swept backward through the linear recurrence.
  Eigen::MatrixXd g = (2.0 * weights[K] / B) * f.errors[K];
  for (int k = K; k >= 1; --k) {
    d_targets.middleCols(static_cast<Eigen::Index>(k) * B, B) = (-2.0 * weights[k] / B) * f.errors[k];
    out.grad.A.noalias() += g * f.preds[k - 1].transpose();
    out.grad.B.noalias() += g * bl.controls.row(k - 1).transpose();
    Eigen::MatrixXd prev = op.A.transpose() * g;
    if (k > 1) prev += (2.0 * weights[k - 1] / B) * f.errors[k - 1];
    g = std::move(prev);
  }
  d_targets.leftCols(B) = g;

  if (encoder.output_dim() > 0) {
    backward(encoder, f.tape, d_targets.bottomRows(encoder.output_dim()), out.grad.encoder);
  }
  return out;
}

void TrainConfig::validate() const {
  check(lambda > 0 && lambda <= 1, "lambda must be in (0, 1]");
  check(window >= 1, "window must be >= 1");
  check(stride >= 0, "stride must be >= 0");
  check(learning_rate > 0, "learning rate must be positive");
  check(lr_decay > 0 && lr_decay <= 1, "lr_decay must be in (0, 1]");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch size must be >= 1");
  check(embedding_dim >= 0, "embedding dimension must be >= 0");
  for (int h : hidden) check(h >= 1, "hidden widths must be >= 1");
}

namespace {

// Flat views over every trainable tensor, in a fixed order.
std::vector<std::span<double>> parameter_views(Encoder& enc, KoopmanOperator& op) {
  std::vector<std::span<double>> views;
  for (auto& l : enc.layers()) {
    views.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  views.emplace_back(op.A.data(), static_cast<std::size_t>(op.A.size()));
  views.emplace_back(op.B.data(), static_cast<std::size_t>(op.B.size()));
  return views;
}

std::vector<std::span<const double>> gradient_views(const Gradients& g) {
  std::vector<std::span<const double>> views;
  for (const auto& l : g.encoder) {
    views.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    views.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  views.emplace_back(g.A.data(), static_cast<std::size_t>(g.A.size()));
  views.emplace_back(g.B.data(), static_cast<std::size_t>(g.B.size()));
  return views;
}

class Adam {
 public:
  explicit Adam(const std::vector<std::span<double>>& params) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void update(const std::vector<std::span<double>>& params,
              const std::vector<std::span<const double>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        const double g = grads[i][j];
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
        params[i][j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace

TrainResult train(std::span<const data::Episode> episodes, const TrainConfig& cfg,
                  const data::NormScales& scales, int n_followers, double dt,
                  const TrainObserver& observer) {
  cfg.validate();
  check(!episodes.empty(), "train: no training sequences");
  const int n_x = static_cast<int>(episodes.front().states.cols());
  for (const auto& ep : episodes) {
    check(ep.states.cols() == n_x, "train: inconsistent state widths");
  }
  const auto windows = make_windows(episodes, cfg.window, cfg.stride);
  check(!windows.empty(), "train: sequences are too short for window " +
                              std::to_string(cfg.window));

  TrainResult result;
  auto& model = result.model;
  model.encoder = Encoder::random(n_x, cfg.hidden, cfg.embedding_dim, cfg.seed, cfg.activation);
  const int m = model.m();
  model.op.A = Eigen::MatrixXd::Identity(m, m);
  model.op.B = Eigen::VectorXd::Zero(m);
  if (cfg.warm_start) {
    const auto fit = baselines::dmdc_fit(episodes);
    model.op.A.topLeftCorner(n_x, n_x) = fit.A;
    model.op.B.head(n_x) = fit.B;
  }
  model.scales = scales;
  model.n_followers = n_followers;
  model.dt = dt;
  model.validate();

  const auto params = parameter_views(model.encoder, model.op);
  Adam adam(params);
  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66Dull);
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Window> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));

  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng() % (i + 1)]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(windows[order[i]]);
      const auto lg = loss_gradients(batch, model.encoder, model.op, cfg.lambda);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch));
      }
      epoch_total += lg.loss * static_cast<double>(batch.size());
      adam.update(params, gradient_views(lg.grad), lr);
    }
    const double epoch_loss = epoch_total / static_cast<double>(windows.size());
    result.loss_curve.push_back(epoch_loss);
    if (observer) observer(epoch, epoch_loss);
    lr *= cfg.lr_decay;
  }

  result.final_loss = batch_loss(windows, model.encoder, model.op, cfg.lambda);
  if (!std::isfinite(result.final_loss)) throw NumericalError("training diverged");
  return result;
}

TrainResult train(const data::Dataset& train_set, const TrainConfig& cfg,
                  const TrainObserver& observer) {
  check(!train_set.sequences.empty(), "train: empty dataset");
  const auto scales = train_set.norm ? *train_set.norm : data::fit_normalization(train_set);
  const auto episodes = data::to_episodes(train_set, scales);
  return train(episodes, cfg, scales, train_set.n_followers(), train_set.dt, observer);
}

}  // namespace kpl::koopman
