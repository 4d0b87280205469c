#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensloss/datasets.hpp"
#include "ensloss/derivgen.hpp"
#include "ensloss/losses.hpp"
#include "ensloss/models.hpp"

namespace ensloss {

enum class LrScheduleKind { constant, cosine, step };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::cosine;
  /// Epochs (0-based) at which a step schedule multiplies the rate by `factor`.
  std::vector<int> milestones;
  double factor = 0.1;

  double rate(double base_lr, int epoch, int total_epochs) const;
};

struct EarlyStop {
  double train_acc_threshold = 1.0;
  int patience = 1;
};

/// Either the random RC generator or a fixed surrogate loss.
struct TrainMode {
  bool ensloss = true;
  std::string loss;  ///< builtin loss name when !ensloss

  static TrainMode parse(const std::string& text);  ///< "ensloss" or "fixed:<loss>"
  std::string to_string() const;
};

struct ModelSpec {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::relu;
};

struct TrainConfig {
  TrainMode mode;
  int epochs = 50;
  int batch_size = 128;
  double lr = 0.1;
  LrSchedule lr_schedule;
  double weight_decay = 0.0;
  double dropout_rate = 0.0;
  GenConfig gen;
  std::uint64_t seed = 0;
  std::optional<EarlyStop> early_stop;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

struct EpochRow {
  int epoch = 0;  ///< 1-based
  double train_acc = 0.0;
  double test_acc = 0.0;
  double train_auc = 0.0;
  double test_auc = 0.0;
  double mean_margin = 0.0;
  std::optional<double> lambda_used;
  double lr = 0.0;
  int updates = 0;
};

struct RunRecord {
  std::string mode;
  std::uint64_t seed = 0;
  std::vector<EpochRow> rows;
  double best_test_acc = 0.0;
  double final_test_acc = 0.0;
  double wallclock_seconds = 0.0;
  bool diverged = false;
  int diverged_epoch = 0;
  std::string divergence_reason;
  bool stopped_early = false;
  /// True iff every derivative batch of the run came out of the RC generator certified.
  bool all_batches_certified = false;
  std::size_t total_updates = 0;
};

/// One JSON object per epoch row, newline-terminated. Deterministic: no
/// wall-clock fields.
void write_jsonl(const RunRecord& rec, std::ostream& out);
/// Single-row CSV summary; like the JSONL it carries no wall-clock time.
void write_summary_csv(const RunRecord& rec, std::ostream& out);

struct EvalMetrics {
  double accuracy = 0.0;
  std::optional<double> auc;  ///< empty when the split has only one class
};

/// Fraction of rows with y f(x) > 0; a zero score counts as an error.
double accuracy_from_scores(std::span<const double> scores, std::span<const double> labels);
/// Mann-Whitney AUC with half credit for tied scores. Throws DomainError when
/// only one class is present.
double auc_from_scores(std::span<const double> scores, std::span<const double> labels);

EvalMetrics evaluate(const MlpModel& model, const Matrix& X, std::span<const double> y);

/// Produces per-batch loss derivatives for the trainer.
class DerivativeSource {
 public:
  virtual ~DerivativeSource() = default;
  /// Smallest batch the source accepts; shorter trailing batches are dropped.
  virtual std::size_t min_batch() const = 0;
  /// Called at the start of every epoch (0-based).
  virtual void begin_epoch(int epoch) { (void)epoch; }
  virtual DerivativeBatch produce(const MarginBatch& batch) = 0;
  /// Lambda reported in epoch rows; empty for fixed losses.
  virtual std::optional<double> current_lambda() const { return std::nullopt; }
};

/// RC generator with its own draw and lambda-resampling streams.
class EnsLossSource final : public DerivativeSource {
 public:
  EnsLossSource(GenConfig cfg, Rng draw_rng, Rng lambda_rng);
  std::size_t min_batch() const override { return 2; }
  void begin_epoch(int epoch) override;
  DerivativeBatch produce(const MarginBatch& batch) override;
  std::optional<double> current_lambda() const override { return cfg_.lambda.lambda(); }

 private:
  GenConfig cfg_;
  Rng draw_rng_;
  Rng lambda_rng_;
};

class FixedLossSource final : public DerivativeSource {
 public:
  explicit FixedLossSource(LossSpec loss, std::size_t min_batch = 1)
      : loss_(std::move(loss)), min_batch_(min_batch) {}
  std::size_t min_batch() const override { return min_batch_; }
  DerivativeBatch produce(const MarginBatch& batch) override { return fixed_loss_derivatives(batch, loss_); }

 private:
  LossSpec loss_;
  std::size_t min_batch_;
};

/// Named sub-streams of the run seed.
enum class RunStream : std::uint64_t { init = 1, shuffle = 2, dropout = 3, derivatives = 4, lambda = 5 };
Rng run_stream(std::uint64_t seed, RunStream s);

/// Builds the derivative source that `cfg.mode` selects.
std::unique_ptr<DerivativeSource> make_source(const TrainConfig& cfg);

struct TrainResult {
  MlpModel model;
  RunRecord record;
};

/// Minibatch SGD driven by loss derivatives: per epoch a fresh shuffle,
/// batches without replacement, derivatives from the configured mode,
/// backward_with_derivs and an SGD step; metrics on both full splits at epoch
/// end in evaluation mode. Divergence ends the run early with
/// record.diverged set instead of throwing.
TrainResult train(const SplitDataset& data, const ModelSpec& model_spec, const TrainConfig& cfg);

/// Same loop with a caller-supplied derivative source. `cfg.mode` is only used
/// for labelling the record.
TrainResult train_with_source(const SplitDataset& data, const ModelSpec& model_spec, const TrainConfig& cfg,
                              DerivativeSource& source);

}  // namespace ensloss
