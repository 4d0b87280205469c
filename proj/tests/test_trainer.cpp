#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ensloss/errors.hpp"
#include "ensloss/trainer.hpp"

using namespace ensloss;

namespace {

double brute_force_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] > 0 && y[j] < 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
  }
  return wins / pairs;
}

SplitDataset small_blobs(std::size_t n, double sep, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = n;
  spec.class_sep = sep;
  return make_gaussian_blobs(spec, seed);
}

class RecordingSource final : public DerivativeSource {
 public:
  std::size_t min_batch() const override { return 1; }
  void begin_epoch(int epoch) override { epochs.push_back(epoch); batches.emplace_back(); }
  DerivativeBatch produce(const MarginBatch& batch) override {
    batches.back().push_back(batch.sample_ids);
    return fixed_loss_derivatives(batch, builtin_loss("logistic"));
  }
  std::vector<int> epochs;
  std::vector<std::vector<std::vector<std::size_t>>> batches;
};

}  // namespace

TEST_CASE("metric examples") {
  CHECK(accuracy_from_scores(std::vector<double>{1.0, -1.0}, std::vector<double>{1.0, -1.0}) == 1.0);
  CHECK(auc_from_scores(std::vector<double>{1.0, -1.0}, std::vector<double>{1.0, -1.0}) == 1.0);
  CHECK(accuracy_from_scores(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, -1.0}) == 0.0);
  const std::vector<double> s{0.9, 0.1, 0.8, 0.3}, y{1.0, -1.0, 1.0, -1.0};
  CHECK(auc_from_scores(s, y) == 1.0);
  CHECK(accuracy_from_scores(s, y) == 0.5);
  CHECK_THROWS_AS(auc_from_scores(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 1.0}), DomainError);
}

TEST_CASE("auc matches the pairwise definition") {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.uniform_index(40);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_index(6));  // many ties
      y[i] = i == 0 ? 1.0 : (i == 1 ? -1.0 : (rng.uniform() < 0.5 ? 1.0 : -1.0));
    }
    CHECK(auc_from_scores(s, y) == doctest::Approx(brute_force_auc(s, y)).epsilon(1e-14));
  }
}

TEST_CASE("train mode parsing") {
  CHECK(TrainMode::parse("ensloss").ensloss);
  const auto f = TrainMode::parse("fixed:hinge");
  CHECK_FALSE(f.ensloss);
  CHECK(f.loss == "hinge");
  CHECK(f.to_string() == "fixed:hinge");
  try {
    TrainMode::parse("fixed:unknownloss");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("logistic") != std::string::npos);
  }
  CHECK_THROWS_AS(TrainMode::parse("adam"), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.gen.resample_period = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // empty pool
}

TEST_CASE("lr schedules") {
  LrSchedule cos;
  CHECK(cos.rate(0.1, 0, 10) == doctest::Approx(0.1));
  CHECK(cos.rate(0.1, 5, 10) == doctest::Approx(0.05));
  LrSchedule k{LrScheduleKind::constant, {}, 0.1};
  CHECK(k.rate(0.3, 7, 10) == 0.3);
  LrSchedule st{LrScheduleKind::step, {2, 4}, 0.5};
  CHECK(st.rate(1.0, 1, 10) == 1.0);
  CHECK(st.rate(1.0, 2, 10) == 0.5);
  CHECK(st.rate(1.0, 5, 10) == 0.25);
}

TEST_CASE("one epoch update counts") {
  const auto data = small_blobs(200, 2.0, 1);  // 150 train rows
  ModelSpec ms{{8}, Activation::relu};
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 32;  // 150 = 4 * 32 + 22
  c.mode = TrainMode::parse("ensloss");
  CHECK(train(data, ms, c).record.total_updates == 5);
  c.batch_size = 149;  // trailing batch of 1 is dropped in ensloss mode
  CHECK(train(data, ms, c).record.total_updates == 1);
  c.mode = TrainMode::parse("fixed:hinge");
  CHECK(train(data, ms, c).record.total_updates == 2);
  c.batch_size = 50;
  CHECK(train(data, ms, c).record.total_updates == 3);
}

TEST_CASE("batches are drawn without replacement") {
  const auto data = small_blobs(200, 2.0, 2);
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 40;
  RecordingSource src;
  train_with_source(data, ModelSpec{{4}, Activation::relu}, c, src);
  CHECK(src.epochs == std::vector<int>{0, 1, 2});
  std::vector<std::size_t> first_epoch_order;
  for (const auto& epoch : src.batches) {
    std::multiset<std::size_t> seen;
    std::vector<std::size_t> flat;
    for (const auto& b : epoch) {
      seen.insert(b.begin(), b.end());
      flat.insert(flat.end(), b.begin(), b.end());
    }
    CHECK(seen.size() == 150);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 150);
    if (first_epoch_order.empty()) {
      first_epoch_order = flat;
    } else {
      CHECK(flat != first_epoch_order);
    }
  }
}

TEST_CASE("runs are reproducible and ensloss batches are certified") {
  const auto data = small_blobs(300, 2.0, 3);
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 32;
  c.seed = 17;
  c.dropout_rate = 0.2;
  c.weight_decay = 1e-4;
  c.gen.resample_period = 2;
  c.gen.lambda_pool = {0.0, 0.5, 1.0};
  const ModelSpec ms{{16, 16}, Activation::relu};
  const auto a = train(data, ms, c);
  const auto b = train(data, ms, c);
  CHECK(a.model == b.model);
  std::ostringstream ja, jb;
  write_jsonl(a.record, ja);
  write_jsonl(b.record, jb);
  CHECK(ja.str() == jb.str());
  CHECK(a.record.all_batches_certified);
  CHECK(a.record.rows.size() == 4);
  CHECK(a.record.rows.front().epoch == 1);
  CHECK(a.record.rows.front().lambda_used.has_value());

  const auto line = ja.str().substr(0, ja.str().find('\n'));
  const auto j = nlohmann::json::parse(line);
  CHECK(j.contains("test_auc"));
  CHECK_FALSE(j.contains("wallclock_seconds"));

  c.seed = 18;
  CHECK_FALSE(train(data, ms, c).model == a.model);

  c.mode = TrainMode::parse("fixed:logistic");
  const auto f = train(data, ms, c);
  CHECK_FALSE(f.record.all_batches_certified);
  CHECK_FALSE(f.record.rows.front().lambda_used.has_value());
}

TEST_CASE("hinge through the ensloss plumbing matches fixed hinge") {
  class HingeSource final : public DerivativeSource {
   public:
    std::size_t min_batch() const override { return 1; }
    DerivativeBatch produce(const MarginBatch& b) override { return fixed_loss_derivatives(b, builtin_loss("hinge")); }
  } src;
  const auto data = small_blobs(200, 2.0, 4);
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.mode = TrainMode::parse("fixed:hinge");
  const ModelSpec ms{{8}, Activation::relu};
  const auto fixed = train(data, ms, c);
  const auto routed = train_with_source(data, ms, c, src);
  CHECK(fixed.model == routed.model);
}

TEST_CASE("separable data is fitted") {
  for (std::uint64_t seed : {1, 2, 3}) {
    SyntheticSpec spec;
    spec.n = 200;
    spec.class_sep = 8.0;
    const auto data = make_gaussian_blobs(spec, seed);
    TrainConfig c;
    c.epochs = 50;
    c.batch_size = 16;
    c.seed = seed;
    c.mode = TrainMode::parse("fixed:hinge");
    const ModelSpec ms{{16}, Activation::relu};
    auto rows = train(data, ms, c).record.rows;
    CHECK(std::any_of(rows.begin(), rows.end(), [](const EpochRow& r) { return r.train_acc == 1.0; }));
    c.mode = TrainMode::parse("ensloss");
    c.epochs = 200;
    rows = train(data, ms, c).record.rows;
    CHECK(std::any_of(rows.begin(), rows.end(), [](const EpochRow& r) { return r.train_acc == 1.0; }));
  }
}

TEST_CASE("early stopping on train accuracy") {
  const auto data = small_blobs(200, 8.0, 5);
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 16;
  c.mode = TrainMode::parse("fixed:logistic");
  c.early_stop = EarlyStop{0.99, 2};
  const auto r = train(data, ModelSpec{{8}, Activation::relu}, c).record;
  CHECK(r.stopped_early);
  CHECK(r.rows.size() < 100);
  CHECK(r.rows.back().train_acc >= 0.99);
}

TEST_CASE("divergence is recorded, not thrown") {
  const auto data = small_blobs(200, 2.0, 6);
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 8;
  c.lr = 1e6;
  c.lr_schedule.kind = LrScheduleKind::constant;
  c.mode = TrainMode::parse("fixed:exponential");
  const auto r = train(data, ModelSpec{{32, 32}, Activation::relu}, c).record;
  CHECK(r.diverged);
  CHECK(r.diverged_epoch >= 1);
  CHECK_FALSE(r.divergence_reason.empty());
}
