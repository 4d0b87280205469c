#include "ensloss/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "ensloss/errors.hpp"

namespace ensloss {

double LrSchedule::rate(double base_lr, int epoch, int total_epochs) const {
  switch (kind) {
    case LrScheduleKind::constant:
      return base_lr;
    case LrScheduleKind::cosine:
      return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / std::max(total_epochs, 1)));
    case LrScheduleKind::step: {
      const auto passed = std::count_if(milestones.begin(), milestones.end(), [&](int m) { return epoch >= m; });
      return base_lr * std::pow(factor, static_cast<double>(passed));
    }
  }
  return base_lr;
}

TrainMode TrainMode::parse(const std::string& text) {
  if (text == "ensloss") return TrainMode{true, {}};
  constexpr std::string_view prefix = "fixed:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string name = text.substr(prefix.size());
    builtin_loss(name);  // throws with the list of valid names
    return TrainMode{false, name};
  }
  std::string valid;
  for (const auto& n : builtin_loss_names()) valid += " fixed:" + n;
  throw ConfigError("unknown mode '" + text + "'; expected ensloss or one of" + valid);
}

std::string TrainMode::to_string() const { return ensloss ? "ensloss" : "fixed:" + loss; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mode.ensloss && batch_size < 2) throw ConfigError("batch_size must be >= 2 in ensloss mode");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (gen.resample_period < 0) throw ConfigError("resample period must be >= 0");
  if (gen.resample_period > 0 && gen.lambda_pool.empty()) throw ConfigError("lambda resampling needs a lambda pool");
  if (early_stop && early_stop->patience < 1) throw ConfigError("early-stop patience must be >= 1");
}

double accuracy_from_scores(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("accuracy: scores and labels differ in length");
  if (scores.empty()) throw PreconditionError("accuracy: empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += (labels[i] * scores[i] > 0.0) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double auc_from_scores(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0.0, rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] > 0) {
        n_pos += 1.0;
        rank_sum_pos += avg_rank;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw DomainError("auc: undefined for a single-class split");
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

EvalMetrics evaluate(const MlpModel& model, const Matrix& X, std::span<const double> y) {
  const Vector scores = predict(model, X);
  std::span<const double> s(scores.data(), static_cast<std::size_t>(scores.size()));
  EvalMetrics m;
  m.accuracy = accuracy_from_scores(s, y);
  const bool has_pos = std::any_of(y.begin(), y.end(), [](double v) { return v > 0; });
  const bool has_neg = std::any_of(y.begin(), y.end(), [](double v) { return v < 0; });
  if (has_pos && has_neg) m.auc = auc_from_scores(s, y);
  return m;
}

EnsLossSource::EnsLossSource(GenConfig cfg, Rng draw_rng, Rng lambda_rng)
    : cfg_(std::move(cfg)), draw_rng_(std::move(draw_rng)), lambda_rng_(std::move(lambda_rng)) {}

void EnsLossSource::begin_epoch(int epoch) { cfg_.lambda = maybe_resample_lambda(cfg_, epoch, lambda_rng_); }

DerivativeBatch EnsLossSource::produce(const MarginBatch& batch) {
  return generate_rc_derivatives(batch, cfg_, draw_rng_);
}

Rng run_stream(std::uint64_t seed, RunStream s) { return Rng(seed).fork(static_cast<std::uint64_t>(s)); }

std::unique_ptr<DerivativeSource> make_source(const TrainConfig& cfg) {
  if (cfg.mode.ensloss) {
    return std::make_unique<EnsLossSource>(cfg.gen, run_stream(cfg.seed, RunStream::derivatives),
                                           run_stream(cfg.seed, RunStream::lambda));
  }
  return std::make_unique<FixedLossSource>(builtin_loss(cfg.mode.loss));
}

TrainResult train(const SplitDataset& data, const ModelSpec& model_spec, const TrainConfig& cfg) {
  cfg.validate();
  auto source = make_source(cfg);
  return train_with_source(data, model_spec, cfg, *source);
}

namespace {

EpochRow epoch_metrics(const MlpModel& model, const SplitDataset& data) {
  EpochRow row;
  const Vector train_scores = predict(model, data.X_train);
  if (!train_scores.allFinite()) throw DivergenceError("non-finite scores on the training split", 0);
  std::span<const double> ts(train_scores.data(), static_cast<std::size_t>(train_scores.size()));
  row.train_acc = accuracy_from_scores(ts, data.y_train);
  row.train_auc = auc_from_scores(ts, data.y_train);
  double margin_sum = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) margin_sum += data.y_train[i] * ts[i];
  row.mean_margin = margin_sum / static_cast<double>(ts.size());

  const Vector test_scores = predict(model, data.X_test);
  if (!test_scores.allFinite()) throw DivergenceError("non-finite scores on the test split", 0);
  std::span<const double> vs(test_scores.data(), static_cast<std::size_t>(test_scores.size()));
  row.test_acc = accuracy_from_scores(vs, data.y_test);
  row.test_auc = auc_from_scores(vs, data.y_test);
  return row;
}

}  // namespace

TrainResult train_with_source(const SplitDataset& data, const ModelSpec& model_spec, const TrainConfig& cfg,
                              DerivativeSource& source) {
  cfg.validate();
  const std::size_t n = data.y_train.size();
  if (n == 0 || data.y_test.empty()) throw PreconditionError("train: empty train or test split");
  const bool has_pos = std::any_of(data.y_train.begin(), data.y_train.end(), [](double v) { return v > 0; });
  const bool has_neg = std::any_of(data.y_train.begin(), data.y_train.end(), [](double v) { return v < 0; });
  if (!has_pos || !has_neg) throw PreconditionError("train: both classes must be present in the train split");

  const auto started = std::chrono::steady_clock::now();
  std::vector<int> dims{static_cast<int>(data.dim())};
  dims.insert(dims.end(), model_spec.hidden.begin(), model_spec.hidden.end());
  dims.push_back(1);
  Rng init_rng = run_stream(cfg.seed, RunStream::init);
  Rng shuffle_rng = run_stream(cfg.seed, RunStream::shuffle);
  Rng dropout_rng = run_stream(cfg.seed, RunStream::dropout);

  TrainResult result{MlpModel(dims, model_spec.activation, cfg.dropout_rate, cfg.weight_decay, init_rng), {}};
  MlpModel& model = result.model;
  RunRecord& rec = result.record;
  rec.mode = cfg.mode.to_string();
  rec.seed = cfg.seed;
  rec.all_batches_certified = true;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const auto d = static_cast<Eigen::Index>(data.dim());
  int streak = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    try {
      source.begin_epoch(epoch);
      const double lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
      shuffle_rng.shuffle(std::span<std::size_t>(order));
      int updates = 0;
      for (std::size_t start = 0; start < n; start += B) {
        const std::size_t len = std::min(B, n - start);
        if (len < source.min_batch()) continue;

        Matrix xb(static_cast<Eigen::Index>(len), d);
        std::vector<double> yb(len);
        MarginBatch mb;
        mb.sample_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(start + len));
        for (std::size_t b = 0; b < len; ++b) {
          xb.row(static_cast<Eigen::Index>(b)) = data.X_train.row(static_cast<Eigen::Index>(mb.sample_ids[b]));
          yb[b] = data.y_train[mb.sample_ids[b]];
        }

        const ForwardCache cache = forward(model, xb, true, dropout_rng);
        if (!cache.scores.allFinite()) throw DivergenceError("non-finite scores during training", epoch + 1);
        mb.margins.resize(len);
        for (std::size_t b = 0; b < len; ++b) mb.margins[b] = yb[b] * cache.scores(static_cast<Eigen::Index>(b));

        const DerivativeBatch g = source.produce(mb);
        rec.all_batches_certified = rec.all_batches_certified && g.certified;
        const GradAccumulator grads = backward_with_derivs(model, cache, yb, g.derivs);
        sgd_step(model, grads, lr);
        ++updates;
      }
      if (!model.all_finite()) throw DivergenceError("non-finite parameters", epoch + 1);

      EpochRow row = epoch_metrics(model, data);
      row.epoch = epoch + 1;
      row.lambda_used = source.current_lambda();
      row.lr = lr;
      row.updates = updates;
      rec.total_updates += static_cast<std::size_t>(updates);
      rec.rows.push_back(row);
      rec.best_test_acc = std::max(rec.best_test_acc, row.test_acc);
      rec.final_test_acc = row.test_acc;

      if (cfg.early_stop) {
        streak = row.train_acc >= cfg.early_stop->train_acc_threshold ? streak + 1 : 0;
        if (streak >= cfg.early_stop->patience) {
          rec.stopped_early = true;
          break;
        }
      }
    } catch (const DivergenceError& e) {
      rec.diverged = true;
      rec.diverged_epoch = epoch + 1;
      rec.divergence_reason = e.what();
      break;
    } catch (const EvaluationError& e) {
      rec.diverged = true;
      rec.diverged_epoch = epoch + 1;
      rec.divergence_reason = e.what();
      break;
    }
  }
  if (rec.rows.empty() || rec.total_updates == 0) rec.all_batches_certified = false;
  rec.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void write_jsonl(const RunRecord& rec, std::ostream& out) {
  for (const auto& r : rec.rows) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["mode"] = rec.mode;
    j["seed"] = rec.seed;
    j["train_acc"] = r.train_acc;
    j["test_acc"] = r.test_acc;
    j["train_auc"] = r.train_auc;
    j["test_auc"] = r.test_auc;
    j["mean_margin"] = r.mean_margin;
    j["lambda_used"] = r.lambda_used ? nlohmann::ordered_json(*r.lambda_used) : nlohmann::ordered_json(nullptr);
    j["lr"] = r.lr;
    j["updates"] = r.updates;
    out << j.dump() << '\n';
  }
}

void write_summary_csv(const RunRecord& rec, std::ostream& out) {
  out << "mode,seed,epochs_run,best_test_acc,final_test_acc,diverged,diverged_epoch,stopped_early,"
         "total_updates\n";
  out << rec.mode << ',' << rec.seed << ',' << rec.rows.size() << ',' << rec.best_test_acc << ','
      << rec.final_test_acc << ',' << (rec.diverged ? 1 : 0) << ',' << rec.diverged_epoch << ','
      << (rec.stopped_early ? 1 : 0) << ',' << rec.total_updates << '\n';
}

}  // namespace ensloss
