#include "ensloss/models.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "ensloss/errors.hpp"

namespace ensloss {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "' (expected relu or tanh)");
}

const char* to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "tanh"; }

namespace {

void apply_activation(Activation a, const Matrix& z, Matrix& out) {
  if (a == Activation::relu) {
    out = z.cwiseMax(0.0);
  } else {
    out = z.array().tanh().matrix();
  }
}

// Multiplies `delta` in place by the activation derivative at `z`.
void scale_by_activation_derivative(Activation a, const Matrix& z, Matrix& delta) {
  if (a == Activation::relu) {
    delta.array() *= (z.array() > 0.0).cast<double>();
  } else {
    delta.array() *= 1.0 - z.array().tanh().square();
  }
}

}  // namespace

MlpModel::MlpModel(std::vector<int> layer_dims, Activation activation, double dropout_rate, double weight_decay,
                   Rng& rng)
    : dims_(std::move(layer_dims)), activation_(activation), dropout_rate_(dropout_rate), weight_decay_(weight_decay) {
  if (dims_.size() < 2) throw ConfigError("MlpModel: need at least input and output dimensions");
  if (dims_.back() != 1) throw ConfigError("MlpModel: output dimension must be 1");
  for (int d : dims_) {
    if (d < 1) throw ConfigError("MlpModel: layer widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("MlpModel: dropout rate must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("MlpModel: weight decay must be >= 0");

  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int fan_in = dims_[l];
    const double bound = std::sqrt(6.0 / fan_in);
    Matrix w(dims_[l + 1], fan_in);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Vector::Zero(dims_[l + 1]));
  }
}

Matrix& MlpModel::weight(std::size_t l) {
  ++version_;
  return weights_.at(l);
}

Vector& MlpModel::bias(std::size_t l) {
  ++version_;
  return biases_.at(l);
}

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

std::vector<double> MlpModel::parameters() const {
  std::vector<double> flat;
  flat.reserve(num_parameters());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    flat.insert(flat.end(), weights_[l].data(), weights_[l].data() + weights_[l].size());
    flat.insert(flat.end(), biases_[l].data(), biases_[l].data() + biases_[l].size());
  }
  return flat;
}

void MlpModel::set_parameters(std::span<const double> flat) {
  if (flat.size() != num_parameters()) throw ShapeError("MlpModel::set_parameters: wrong parameter count");
  std::size_t k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::copy_n(flat.data() + k, weights_[l].size(), weights_[l].data());
    k += static_cast<std::size_t>(weights_[l].size());
    std::copy_n(flat.data() + k, biases_[l].size(), biases_[l].data());
    k += static_cast<std::size_t>(biases_[l].size());
  }
  ++version_;
}

bool MlpModel::all_finite() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  }
  return true;
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  return a.dims_ == b.dims_ && a.activation_ == b.activation_ && a.dropout_rate_ == b.dropout_rate_ &&
         a.weight_decay_ == b.weight_decay_ && a.parameters() == b.parameters();
}

std::vector<double> GradAccumulator::flatten() const {
  std::vector<double> flat;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].data(), weights[l].data() + weights[l].size());
    flat.insert(flat.end(), biases[l].data(), biases[l].data() + biases[l].size());
  }
  return flat;
}

bool GradAccumulator::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

ForwardCache forward(const MlpModel& model, const Matrix& X, bool train_mode, Rng& rng) {
  if (static_cast<std::size_t>(X.cols()) != model.input_dim()) {
    std::ostringstream os;
    os << "forward: input has " << X.cols() << " columns, model expects " << model.input_dim();
    throw ShapeError(os.str());
  }
  const std::size_t L = model.num_layers();
  const bool use_dropout = train_mode && model.dropout_rate() > 0.0;
  const double keep_scale = 1.0 / (1.0 - model.dropout_rate());

  ForwardCache cache;
  cache.model = &model;
  cache.model_version = model.version();
  cache.inputs.reserve(L);
  cache.inputs.push_back(X);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix z = cache.inputs.back() * model.weight(l).transpose();
    z.rowwise() += model.bias(l).transpose();
    Matrix a;
    apply_activation(model.activation(), z, a);
    if (use_dropout) {
      Matrix mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.rows(); ++i) {
        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
          mask(i, j) = rng.uniform() < model.dropout_rate() ? 0.0 : keep_scale;
        }
      }
      a.array() *= mask.array();
      cache.masks.push_back(std::move(mask));
    }
    cache.pre_activations.push_back(std::move(z));
    cache.inputs.push_back(std::move(a));
  }
  cache.scores = cache.inputs.back() * model.weight(L - 1).transpose();
  cache.scores.array() += model.bias(L - 1)(0);
  return cache;
}

Vector predict(const MlpModel& model, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != model.input_dim()) throw ShapeError("predict: input width mismatch");
  const std::size_t L = model.num_layers();
  Matrix a = X;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Matrix z = a * model.weight(l).transpose();
    z.rowwise() += model.bias(l).transpose();
    apply_activation(model.activation(), z, a);
  }
  Vector scores = a * model.weight(L - 1).transpose();
  scores.array() += model.bias(L - 1)(0);
  return scores;
}

GradAccumulator backward_with_derivs(const MlpModel& model, const ForwardCache& cache, std::span<const double> y,
                                     std::span<const double> g) {
  if (cache.model != &model || cache.model_version != model.version()) {
    throw PreconditionError("backward_with_derivs: forward cache is stale for this model");
  }
  const auto batch = static_cast<std::size_t>(cache.scores.size());
  if (y.size() != batch || g.size() != batch) throw ShapeError("backward_with_derivs: labels/derivs misaligned");
  const std::size_t L = model.num_layers();

  GradAccumulator grads;
  grads.weights.resize(L);
  grads.biases.resize(L);

  // d(mean loss)/d(score_b) = y_b g_b / B.
  Matrix delta(static_cast<Eigen::Index>(batch), 1);
  for (std::size_t b = 0; b < batch; ++b) delta(static_cast<Eigen::Index>(b), 0) = y[b] * g[b] / static_cast<double>(batch);

  for (std::size_t l = L; l-- > 0;) {
    grads.weights[l].noalias() = delta.transpose() * cache.inputs[l];
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix prev = delta * model.weight(l);
    if (!cache.masks.empty()) prev.array() *= cache.masks[l - 1].array();
    scale_by_activation_derivative(model.activation(), cache.pre_activations[l - 1], prev);
    delta = std::move(prev);
  }
  if (model.weight_decay() > 0.0) {
    for (std::size_t l = 0; l < L; ++l) grads.weights[l] += model.weight_decay() * model.weight(l);
  }
  return grads;
}

void sgd_step(MlpModel& model, const GradAccumulator& grads, double lr) {
  if (grads.weights.size() != model.num_layers() || grads.biases.size() != model.num_layers()) {
    throw ShapeError("sgd_step: gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (grads.weights[l].rows() != model.weight(l).rows() || grads.weights[l].cols() != model.weight(l).cols() ||
        grads.biases[l].size() != model.bias(l).size()) {
      throw ShapeError("sgd_step: gradient shape mismatch");
    }
  }
  if (!grads.all_finite()) throw DivergenceError("sgd_step: non-finite gradient", -1);
  if (lr == 0.0) return;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    model.weight(l) -= lr * grads.weights[l];
    model.bias(l) -= lr * grads.biases[l];
  }
}

void save_checkpoint(const MlpModel& model, std::ostream& out) {
  out << "ensloss-mlp 1\n";
  out << "layer_dims";
  for (int d : model.layer_dims()) out << ' ' << d;
  out << "\nactivation " << to_string(model.activation()) << '\n';
  out << std::setprecision(17);
  out << "dropout " << model.dropout_rate() << "\nweight_decay " << model.weight_decay() << '\n';
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Matrix& w = model.weight(l);
    out << "layer " << l << '\n';
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) out << (j ? " " : "") << w(i, j);
      out << '\n';
    }
    const Vector& b = model.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) out << (i ? " " : "") << b(i);
    out << '\n';
  }
}

MlpModel load_checkpoint(std::istream& in) {
  auto expect = [&](const std::string& key) {
    std::string tok;
    if (!(in >> tok) || tok != key) throw IngestionError("checkpoint: expected '" + key + "'");
  };
  expect("ensloss-mlp");
  int version = 0;
  if (!(in >> version) || version != 1) throw IngestionError("checkpoint: unsupported format version");
  expect("layer_dims");
  std::string line;
  std::getline(in, line);
  std::istringstream dims_in(line);
  MlpModel m;
  for (int d; dims_in >> d;) m.dims_.push_back(d);
  if (m.dims_.size() < 2 || m.dims_.back() != 1) throw IngestionError("checkpoint: bad layer_dims");
  expect("activation");
  std::string act;
  in >> act;
  m.activation_ = parse_activation(act);
  expect("dropout");
  in >> m.dropout_rate_;
  expect("weight_decay");
  in >> m.weight_decay_;
  for (std::size_t l = 0; l + 1 < m.dims_.size(); ++l) {
    expect("layer");
    std::size_t idx = 0;
    in >> idx;
    if (idx != l) throw IngestionError("checkpoint: layers out of order");
    Matrix w(m.dims_[l + 1], m.dims_[l]);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) in >> w(i, j);
    }
    Vector b(m.dims_[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) in >> b(i);
    if (!in) throw IngestionError("checkpoint: truncated parameters");
    m.weights_.push_back(std::move(w));
    m.biases_.push_back(std::move(b));
  }
  return m;
}

}  // namespace ensloss
