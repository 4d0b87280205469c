#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ensloss/numerics.hpp"

namespace ensloss {

/// Row-major so that one sample is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
const char* to_string(Activation a) noexcept;

/// Dense feed-forward network producing one score per sample.
///
/// weights[l] has shape (dims[l+1], dims[l]). Hidden layers use `activation`
/// followed by inverted dropout at train time; the output layer is linear.
class MlpModel {
 public:
  MlpModel() = default;
  /// He-uniform weights, zero biases. dims must start with the input width
  /// and end with 1.
  MlpModel(std::vector<int> layer_dims, Activation activation, double dropout_rate, double weight_decay, Rng& rng);

  const std::vector<int>& layer_dims() const noexcept { return dims_; }
  std::size_t num_layers() const noexcept { return weights_.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(dims_.front()); }
  Activation activation() const noexcept { return activation_; }
  double dropout_rate() const noexcept { return dropout_rate_; }
  double weight_decay() const noexcept { return weight_decay_; }

  const Matrix& weight(std::size_t l) const { return weights_.at(l); }
  const Vector& bias(std::size_t l) const { return biases_.at(l); }
  Matrix& weight(std::size_t l);
  Vector& bias(std::size_t l);

  std::size_t num_parameters() const;
  /// Flattened parameters: per layer, weights row-major then biases.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);
  bool all_finite() const;

  /// Bumped on every mutation; forward caches record it.
  std::uint64_t version() const noexcept { return version_; }

  friend bool operator==(const MlpModel& a, const MlpModel& b);

 private:
  friend MlpModel load_checkpoint(std::istream& in);

  std::vector<int> dims_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  Activation activation_ = Activation::relu;
  double dropout_rate_ = 0.0;
  double weight_decay_ = 0.0;
  std::uint64_t version_ = 0;
};

/// Activations kept by forward() for the backward pass.
struct ForwardCache {
  Vector scores;
  /// inputs[l] is the (dropout-applied) input to layer l; inputs[0] is X.
  std::vector<Matrix> inputs;
  /// Pre-activations of each hidden layer.
  std::vector<Matrix> pre_activations;
  /// Inverted-dropout multipliers (0 or 1/(1-rate)); empty when dropout is off.
  std::vector<Matrix> masks;
  std::uint64_t model_version = 0;
  const MlpModel* model = nullptr;
};

/// Per-layer gradients with the same shapes as the model.
struct GradAccumulator {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::vector<double> flatten() const;
  bool all_finite() const;
};

/// Scores f(x_b) for every row of X. Dropout masks are drawn from `rng` only
/// when train_mode is true and dropout_rate > 0. Throws ShapeError on a
/// column-count mismatch.
ForwardCache forward(const MlpModel& model, const Matrix& X, bool train_mode, Rng& rng);

/// Evaluation-mode scores without keeping a cache.
Vector predict(const MlpModel& model, const Matrix& X);

/// Gradient of (1/B) sum_b phi(y_b f(x_b)) given g_b = phi'(y_b f(x_b)):
/// backpropagates the seed y_b g_b / B per sample, then adds weight_decay * W
/// to every weight gradient (biases are not decayed).
/// Throws PreconditionError when the cache does not belong to the model's
/// current parameters.
GradAccumulator backward_with_derivs(const MlpModel& model, const ForwardCache& cache, std::span<const double> y,
                                     std::span<const double> g);

/// theta <- theta - lr * grad. Throws DivergenceError (epoch -1) on a
/// non-finite gradient.
void sgd_step(MlpModel& model, const GradAccumulator& grads, double lr);

/// Text checkpoint; see docs/formats.md.
void save_checkpoint(const MlpModel& model, std::ostream& out);
MlpModel load_checkpoint(std::istream& in);

}  // namespace ensloss
