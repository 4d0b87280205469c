#include "ensloss/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "ensloss/errors.hpp"
#include "ensloss/evaluation.hpp"
#include "ensloss/losses.hpp"

namespace ensloss::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "': '" + v + "' is not a number");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "': '" + v + "' is not an integer");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "': '" + v + "' is not a non-negative integer");
  }
}

}  // namespace

Settings parse_settings(std::istream& in) {
  Settings s;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    s[key] = trim(line.substr(eq + 1));
  }
  return s;
}

Settings load_settings_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  return parse_settings(in);
}

std::string format_settings(const Settings& s) {
  std::ostringstream os;
  for (const auto& [k, v] : s) os << k << " = " << v << '\n';
  return os.str();
}

const Settings& default_settings() {
  static const Settings defaults = {
      {"mode", "ensloss"},
      {"data", "blobs"},
      {"data-seed", ""},
      {"test-fraction", "0.25"},
      {"epochs", "50"},
      {"batch-size", "128"},
      {"lr", "0.1"},
      {"lr-schedule", "cosine"},
      {"seed", "0"},
      {"weight-decay", "0"},
      {"dropout", "0"},
      {"lambda", "0"},
      {"resample-T", "0"},
      {"lambda-pool", "0,0.5,1"},
      {"tie-eps", "0"},
      {"hidden", "64,64"},
      {"activation", "relu"},
      {"early-stop-acc", ""},
      {"early-stop-patience", "1"},
      {"label-column", "label"},
      {"positive-label", "1"},
      {"delimiter", ","},
  };
  return defaults;
}

namespace {

const Settings& bench_defaults() {
  static const Settings defaults = {
      {"datasets", "blobs=blobs"},
      {"methods", "ensloss,fixed:logistic,fixed:hinge,fixed:exponential"},
      {"seeds", "1..10"},
  };
  return defaults;
}

LrSchedule parse_schedule(const std::string& v) {
  LrSchedule s;
  if (v == "constant") {
    s.kind = LrScheduleKind::constant;
  } else if (v == "cosine") {
    s.kind = LrScheduleKind::cosine;
  } else if (v.rfind("step:", 0) == 0) {
    // step:m1,m2,...@factor
    s.kind = LrScheduleKind::step;
    const std::string body = v.substr(5);
    const auto at = body.find('@');
    for (const auto& m : split(body.substr(0, at), ',')) s.milestones.push_back(static_cast<int>(to_int("lr-schedule", m)));
    if (at != std::string::npos) s.factor = to_double("lr-schedule", body.substr(at + 1));
  } else {
    throw ConfigError("lr-schedule must be constant, cosine or step:m1,m2@factor");
  }
  return s;
}

std::vector<std::uint64_t> parse_seeds(const std::string& v) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : split(v, ',')) {
    if (const auto dots = part.find(".."); dots != std::string::npos) {
      const auto lo = to_u64("seeds", part.substr(0, dots));
      const auto hi = to_u64("seeds", part.substr(dots + 2));
      if (hi < lo) throw ConfigError("seeds: empty range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
      seeds.push_back(to_u64("seeds", part));
    }
  }
  if (seeds.empty()) throw ConfigError("seeds: no seeds given");
  return seeds;
}

}  // namespace

TrainSetup resolve_train_setup(const Settings& s) {
  const auto& defaults = default_settings();
  const auto& bdefaults = bench_defaults();
  for (const auto& [k, v] : s) {
    if (!defaults.count(k) && !bdefaults.count(k) && k != "jobs") throw ConfigError("unknown setting '" + k + "'");
  }
  auto get = [&](const std::string& k) -> std::string {
    if (auto it = s.find(k); it != s.end()) return it->second;
    return defaults.at(k);
  };

  TrainSetup t;
  TrainConfig& c = t.config;
  c.mode = TrainMode::parse(get("mode"));
  c.epochs = static_cast<int>(to_int("epochs", get("epochs")));
  c.batch_size = static_cast<int>(to_int("batch-size", get("batch-size")));
  c.lr = to_double("lr", get("lr"));
  c.lr_schedule = parse_schedule(get("lr-schedule"));
  c.seed = to_u64("seed", get("seed"));
  c.weight_decay = to_double("weight-decay", get("weight-decay"));
  c.dropout_rate = to_double("dropout", get("dropout"));
  c.gen.lambda = BoxCoxParam(to_double("lambda", get("lambda")));
  c.gen.resample_period = static_cast<int>(to_int("resample-T", get("resample-T")));
  for (const auto& l : split(get("lambda-pool"), ',')) {
    c.gen.lambda_pool.push_back(BoxCoxParam(to_double("lambda-pool", l)).lambda());
  }
  c.gen.tie_eps = to_double("tie-eps", get("tie-eps"));
  if (const auto acc = get("early-stop-acc"); !acc.empty()) {
    c.early_stop = EarlyStop{to_double("early-stop-acc", acc),
                             static_cast<int>(to_int("early-stop-patience", get("early-stop-patience")))};
  }
  c.validate();

  t.model.hidden.clear();
  for (const auto& h : split(get("hidden"), ',')) {
    const auto w = to_int("hidden", h);
    if (w < 1) throw ConfigError("hidden: widths must be positive");
    t.model.hidden.push_back(static_cast<int>(w));
  }
  t.model.activation = parse_activation(get("activation"));

  t.data = get("data");
  const auto ds = get("data-seed");
  t.data_seed = ds.empty() ? c.seed : to_u64("data-seed", ds);
  t.test_fraction = to_double("test-fraction", get("test-fraction"));
  t.csv.label_column = get("label-column");
  t.csv.positive_label = get("positive-label");
  const auto delim = get("delimiter");
  if (delim.size() != 1 && delim != "\\t" && delim != "tab") throw ConfigError("delimiter must be one character");
  t.csv.delimiter = (delim == "\\t" || delim == "tab") ? '\t' : delim[0];
  return t;
}

namespace {

SyntheticSpec parse_synthetic(const std::string& ref, std::size_t colon, SyntheticKind kind, double test_fraction) {
  SyntheticSpec spec;
  spec.kind = kind;
  spec.test_fraction = test_fraction;
  if (kind == SyntheticKind::high_dim_sparse) {
    spec.n = 1000;
    spec.d = 2000;
    spec.class_sep = 3.0;
    spec.informative = 10;
  }
  if (colon != std::string::npos) {
    for (const auto& kv : split(ref.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("data: expected key=value in '" + kv + "'");
      const auto k = kv.substr(0, eq), v = kv.substr(eq + 1);
      if (k == "n") {
        spec.n = to_u64("data", v);
      } else if (k == "d") {
        spec.d = to_u64("data", v);
      } else if (k == "sep") {
        spec.class_sep = to_double("data", v);
      } else if (k == "noise") {
        spec.noise = to_double("data", v);
      } else if (k == "k") {
        spec.informative = to_u64("data", v);
      } else {
        throw ConfigError("data: unknown synthetic parameter '" + k + "' (n, d, sep, noise, k)");
      }
    }
  }
  return spec;
}

}  // namespace

SplitDataset load_data(const std::string& ref, std::uint64_t seed, double test_fraction, const CsvOptions& csv) {
  const auto colon = ref.find(':');
  const std::string head = ref.substr(0, colon);
  if (head == "blobs") {
    return make_gaussian_blobs(parse_synthetic(ref, colon, SyntheticKind::gaussian_blobs, test_fraction), seed);
  }
  if (head == "sparse") {
    return make_high_dim_sparse(parse_synthetic(ref, colon, SyntheticKind::high_dim_sparse, test_fraction), seed);
  }
  if (!fs::exists(ref)) {
    throw IngestionError("data '" + ref + "' is neither blobs[:...], sparse[:...] nor an existing file");
  }
  std::ifstream probe(ref, std::ios::binary);
  char magic[6] = {};
  probe.read(magic, sizeof magic);
  if (probe && std::string(magic, 6) == "ENSLDS") {
    probe.seekg(0);
    return load_dataset(probe);
  }
  return split_standardize(load_csv(ref, csv), test_fraction, seed);
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot hash '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

namespace {

Settings training_settings_of(const TrainSetup& t, const Settings& layered) {
  // Resolved values of every training key, so the manifest stands alone.
  Settings m;
  for (const auto& [k, v] : default_settings()) {
    auto it = layered.find(k);
    m[k] = it != layered.end() ? it->second : v;
  }
  m["data-seed"] = std::to_string(t.data_seed);
  return m;
}

struct RunFiles {
  std::string jsonl;
  std::string summary;
  std::string checkpoint;
};

RunFiles render_run(const TrainResult& tr) {
  RunFiles f;
  std::ostringstream j, s, c;
  write_jsonl(tr.record, j);
  write_summary_csv(tr.record, s);
  save_checkpoint(tr.model, c);
  f.jsonl = j.str();
  f.summary = s.str();
  f.checkpoint = c.str();
  return f;
}

void write_run_dir(const fs::path& dir, const RunFiles& files, const Settings& manifest_settings,
                   const std::string& outcome_json) {
  fs::create_directories(dir);
  write_file_atomic(dir / "runrecord.jsonl", files.jsonl);
  write_file_atomic(dir / "summary.csv", files.summary);
  write_file_atomic(dir / "model.ckpt", files.checkpoint);
  if (!outcome_json.empty()) write_file_atomic(dir / "outcome.json", outcome_json);
  std::ostringstream manifest;
  manifest << "# ensloss run manifest; rerun with: ensloss train --config <this file> --out <dir>\n";
  manifest << format_settings(manifest_settings);
  manifest << "# hash runrecord.jsonl " << file_hash(dir / "runrecord.jsonl") << '\n';
  manifest << "# hash model.ckpt " << file_hash(dir / "model.ckpt") << '\n';
  // Written last: its presence marks the directory as complete.
  write_file_atomic(dir / "manifest.txt", manifest.str());
}

/// Adds one string option per settings key; only flags the user passed are layered on top.
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::string& key, const std::string& help) {
    options[key] = app->add_option("--" + key, values[key], help);
  }

  void apply(Settings& s) const {
    for (const auto& [k, opt] : options) {
      if (opt->count() > 0) s[k] = values.at(k);
    }
  }
};

void add_training_flags(CLI::App* app, FlagSet& flags) {
  flags.add(app, "mode", "ensloss or fixed:<loss>");
  flags.add(app, "data", "blobs[:n=,d=,sep=,noise=], sparse[:n=,d=,sep=,k=], a CSV file or a dataset cache");
  flags.add(app, "data-seed", "seed for data generation/splitting (default: --seed)");
  flags.add(app, "test-fraction", "held-out fraction (default 0.25)");
  flags.add(app, "epochs", "training epochs (default 50)");
  flags.add(app, "batch-size", "minibatch size B (default 128)");
  flags.add(app, "lr", "base learning rate (default 0.1)");
  flags.add(app, "lr-schedule", "constant | cosine | step:m1,m2@factor (default cosine)");
  flags.add(app, "seed", "run seed (default 0; ENSLOSS_SEED overrides the config file)");
  flags.add(app, "weight-decay", "L2 weight decay (default 0)");
  flags.add(app, "dropout", "dropout rate on hidden layers (default 0)");
  flags.add(app, "lambda", "Box-Cox lambda >= 0 for derivative draws (default 0)");
  flags.add(app, "resample-T", "redraw lambda from --lambda-pool every T epochs; 0 = fixed (default 0)");
  flags.add(app, "lambda-pool", "comma-separated lambda candidates (default 0,0.5,1)");
  flags.add(app, "tie-eps", "margin tie tolerance (default 0)");
  flags.add(app, "hidden", "comma-separated hidden widths; empty for a linear model (default 64,64)");
  flags.add(app, "activation", "relu | tanh (default relu)");
  flags.add(app, "early-stop-acc", "stop once train accuracy reaches this value");
  flags.add(app, "early-stop-patience", "consecutive epochs above the threshold (default 1)");
  flags.add(app, "label-column", "CSV label column name or index (default label)");
  flags.add(app, "positive-label", "CSV label mapped to +1 (default 1)");
  flags.add(app, "delimiter", "CSV delimiter (default ,)");
}

Settings layered_settings(const std::string& config_path, const FlagSet& flags) {
  Settings s;
  if (!config_path.empty()) s = load_settings_file(config_path);
  if (const char* env = std::getenv("ENSLOSS_SEED"); env != nullptr && *env != '\0') s["seed"] = env;
  flags.apply(s);
  return s;
}

int cmd_train(const std::string& config_path, const FlagSet& flags, const std::string& out_dir, std::ostream& out,
              std::ostream& err) {
  const Settings layered = layered_settings(config_path, flags);
  const TrainSetup setup = resolve_train_setup(layered);
  for (const auto& k : {"datasets", "methods", "seeds", "jobs"}) {
    if (layered.count(k)) throw ConfigError(std::string("setting '") + k + "' only applies to bench");
  }
  const SplitDataset data = load_data(setup.data, setup.data_seed, setup.test_fraction, setup.csv);
  const TrainResult tr = train(data, setup.model, setup.config);

  const fs::path dir =
      out_dir.empty() ? fs::path("runs") / ("run_" + std::to_string(setup.config.seed)) : fs::path(out_dir);
  nlohmann::ordered_json outcome;
  outcome["failed"] = tr.record.diverged;
  outcome["final_test_acc"] = tr.record.final_test_acc;
  outcome["diverged_epoch"] = tr.record.diverged_epoch;
  write_run_dir(dir, render_run(tr), training_settings_of(setup, layered), outcome.dump(2) + "\n");

  const auto& rec = tr.record;
  out << "mode " << rec.mode << ", seed " << rec.seed << ", epochs run " << rec.rows.size() << '\n';
  if (!rec.rows.empty()) {
    const auto& last = rec.rows.back();
    out << std::fixed << std::setprecision(4) << "final train_acc " << last.train_acc << ", test_acc "
        << last.test_acc << ", test_auc " << last.test_auc << '\n';
  }
  out << std::setprecision(2) << "wall clock " << rec.wallclock_seconds << " s\n";
  out << "outputs written to " << dir.string() << '\n';
  if (rec.diverged) {
    err << "error: training diverged at epoch " << rec.diverged_epoch << ": " << rec.divergence_reason << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_check_loss(const std::string& name, double p, double z0, double scan_max, bool json, std::ostream& out) {
  const LossSpec loss = builtin_loss(name);
  const LossReport report = check_loss(loss, p, z0, scan_max);
  if (json) {
    out << to_json(report) << '\n';
  } else {
    out << to_text(report);
  }
  return kExitOk;
}

int cmd_derivs(const std::string& margins_text, std::size_t random_n, std::size_t batches, std::uint64_t seed,
               double lambda, const std::string& out_path, std::ostream& out) {
  GenConfig cfg;
  cfg.lambda = BoxCoxParam(lambda);
  Rng rng(seed);
  Rng margin_rng = rng.fork(99);
  std::ostringstream csv;
  csv << "batch,index,margin,deriv,lambda\n" << std::setprecision(17);
  for (std::size_t b = 0; b < batches; ++b) {
    MarginBatch mb;
    if (!margins_text.empty()) {
      for (const auto& m : split(margins_text, ',')) mb.margins.push_back(to_double("margins", m));
    } else {
      for (std::size_t i = 0; i < random_n; ++i) mb.margins.push_back(3.0 * margin_rng.normal());
    }
    const DerivativeBatch g = generate_rc_derivatives(mb, cfg, rng);
    for (std::size_t i = 0; i < mb.size(); ++i) {
      csv << b << ',' << i << ',' << mb.margins[i] << ',' << g.derivs[i] << ',' << g.lambda_used << '\n';
    }
  }
  if (out_path.empty()) {
    out << csv.str();
  } else {
    write_file_atomic(out_path, csv.str());
  }
  return kExitOk;
}

std::string path_safe(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == '\\' || c == '=' || c == ',') c = '_';
  }
  return s;
}

std::optional<CellOutcome> read_cell(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt") || !fs::exists(dir / "outcome.json")) return std::nullopt;
  std::ifstream oj(dir / "outcome.json");
  const auto j = nlohmann::json::parse(oj);
  CellOutcome c;
  c.failed = j.at("failed").get<bool>();
  c.accuracy = j.at("final_test_acc").get<double>();
  std::ifstream rj(dir / "runrecord.jsonl");
  std::string line;
  while (std::getline(rj, line)) {
    if (line.empty()) continue;
    const auto r = nlohmann::json::parse(line);
    EpochRow row;
    row.epoch = r.at("epoch").get<int>();
    row.train_acc = r.at("train_acc").get<double>();
    row.test_acc = r.at("test_acc").get<double>();
    row.train_auc = r.at("train_auc").get<double>();
    row.test_auc = r.at("test_auc").get<double>();
    row.mean_margin = r.at("mean_margin").get<double>();
    if (!r.at("lambda_used").is_null()) row.lambda_used = r.at("lambda_used").get<double>();
    row.lr = r.at("lr").get<double>();
    row.updates = r.at("updates").get<int>();
    c.record.mode = r.at("mode").get<std::string>();
    c.record.seed = r.at("seed").get<std::uint64_t>();
    c.record.rows.push_back(row);
  }
  c.record.final_test_acc = c.accuracy;
  c.record.diverged = c.failed;
  return c;
}

struct BenchDatasetRef {
  std::string id;
  std::string ref;
};

std::vector<BenchDatasetRef> parse_bench_datasets(const std::string& v) {
  std::vector<BenchDatasetRef> out;
  for (const auto& item : split(v, ';')) {
    const auto eq = item.find('=');
    const auto colon = item.find(':');
    // "id=ref" unless the first '=' belongs to a synthetic parameter list.
    if (eq != std::string::npos && (colon == std::string::npos || eq < colon)) {
      out.push_back({trim(item.substr(0, eq)), trim(item.substr(eq + 1))});
    } else {
      out.push_back({path_safe(item), item});
    }
  }
  if (out.empty()) throw ConfigError("datasets: no datasets given");
  return out;
}

int cmd_bench(const std::string& config_path, const FlagSet& flags, const std::string& out_dir, int jobs,
              bool dry_run, std::ostream& out, std::ostream& err) {
  Settings layered = layered_settings(config_path, flags);
  auto get_bench = [&](const std::string& k) {
    auto it = layered.find(k);
    return it != layered.end() ? it->second : bench_defaults().at(k);
  };
  const auto datasets = parse_bench_datasets(get_bench("datasets"));
  const auto seeds = parse_seeds(get_bench("seeds"));
  std::vector<BenchMethod> methods;
  for (const auto& m : split(get_bench("methods"), ',')) methods.push_back({m, TrainMode::parse(m)});
  if (methods.empty()) throw ConfigError("methods: no methods given");
  if (jobs < 1 && layered.count("jobs")) jobs = static_cast<int>(to_int("jobs", layered.at("jobs")));
  if (jobs < 1) jobs = 1;

  Settings train_only = layered;
  for (const auto& k : {"datasets", "methods", "seeds", "jobs"}) train_only.erase(k);
  const TrainSetup setup = resolve_train_setup(train_only);

  BenchmarkPlan plan;
  plan.base = setup.config;
  plan.model = setup.model;
  plan.jobs = jobs;
  plan.seeds = seeds;
  plan.methods = methods;
  for (const auto& d : datasets) {
    plan.datasets.push_back({d.id, [ref = d.ref, setup](std::uint64_t seed) {
                               return load_data(ref, seed, setup.test_fraction, setup.csv);
                             }});
  }

  const auto keys = enumerate_cells(plan);
  if (dry_run) {
    out << "dataset,method,seed\n";
    for (const auto& k : keys) out << k.dataset << ',' << k.method << ',' << k.seed << '\n';
    out << keys.size() << " cells (" << datasets.size() << " datasets x " << methods.size() << " methods x "
        << seeds.size() << " seeds)\n";
    return kExitOk;
  }

  const fs::path root = out_dir.empty() ? fs::path("bench") : fs::path(out_dir);
  fs::create_directories(root);
  std::map<std::string, std::string> dataset_refs;
  for (const auto& d : datasets) dataset_refs[d.id] = d.ref;
  auto cell_dir = [&](const CellKey& k) {
    return root / "cells" / path_safe(k.dataset) / path_safe(k.method) / ("seed_" + std::to_string(k.seed));
  };
  std::size_t skipped = 0;
  plan.lookup = [&](const CellKey& k) {
    auto c = read_cell(cell_dir(k));
    if (c) ++skipped;
    return c;
  };
  plan.on_cell_done = [&](const CellKey& k, const CellOutcome& o, const MlpModel& model) {
    Settings cell = train_only;
    cell["mode"] = k.method;
    cell["seed"] = std::to_string(k.seed);
    cell["data"] = dataset_refs.at(k.dataset);
    cell["data-seed"] = std::to_string(k.seed);
    TrainResult tr{model, o.record};
    const TrainSetup cs = resolve_train_setup(cell);
    nlohmann::ordered_json outcome;
    outcome["failed"] = o.failed;
    outcome["final_test_acc"] = o.accuracy;
    outcome["diverged_epoch"] = o.record.diverged_epoch;
    write_run_dir(cell_dir(k), render_run(tr), training_settings_of(cs, cell), outcome.dump(2) + "\n");
  };

  const BenchmarkResult r = run_benchmark(plan);

  std::ostringstream cells, tests, summary, curves;
  write_cells_csv(r, cells);
  write_tests_json(r, tests);
  write_summary_text(r, summary);
  write_curves_csv(r, curves);
  write_file_atomic(root / "cells.csv", cells.str());
  write_file_atomic(root / "tests.json", tests.str());
  write_file_atomic(root / "summary.txt", summary.str());
  write_file_atomic(root / "curves.csv", curves.str());
  Settings manifest = training_settings_of(setup, train_only);
  manifest.erase("data");
  manifest.erase("data-seed");
  manifest.erase("mode");
  manifest.erase("seed");
  manifest["datasets"] = get_bench("datasets");
  manifest["methods"] = get_bench("methods");
  manifest["seeds"] = get_bench("seeds");
  write_file_atomic(root / "manifest.txt", "# ensloss bench manifest; rerun with: ensloss bench --config <this file>\n" +
                                               format_settings(manifest));

  out << summary.str();
  if (skipped > 0) out << skipped << " cells reused from existing manifests\n";
  out << "outputs written to " << root.string() << '\n';
  if (r.any_failed) {
    err << "error: some benchmark cells diverged\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ensloss: stochastic calibrated loss ensembles for binary classification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  auto* train_cmd = app.add_subcommand("train", "Train one model and write run records, checkpoint and manifest");
  std::string train_config, train_out;
  FlagSet train_flags;
  train_cmd->add_option("--config", train_config, "flat key = value config file (flags override it)");
  train_cmd->add_option("--out", train_out, "output directory (default runs/run_<seed>)");
  add_training_flags(train_cmd, train_flags);

  auto* check_cmd = app.add_subcommand("check-loss", "Numerically certify a builtin loss");
  std::string loss_name;
  double tail_p = 1.01, tail_z0 = 2.0, scan_max = kDefaultScanMax;
  bool as_json = false;
  check_cmd->add_option("loss", loss_name, "builtin loss name")->required();
  check_cmd->add_option("--p", tail_p, "tail exponent p > 1 (default 1.01)");
  check_cmd->add_option("--z0", tail_z0, "start of the tail check (default 2)");
  check_cmd->add_option("--scan-max", scan_max, "range of the bounded-below scan (default 1e30)");
  check_cmd->add_flag("--json", as_json, "print the certificate as JSON");

  auto* derivs_cmd = app.add_subcommand("derivs", "Dump generated RC loss-derivatives as CSV");
  std::string margins_text, derivs_out;
  std::size_t random_n = 8, batches = 1;
  std::uint64_t derivs_seed = 0;
  double derivs_lambda = 0.0;
  derivs_cmd->add_option("--margins", margins_text, "comma-separated margins (default: random N(0, 9) margins)");
  derivs_cmd->add_option("--random", random_n, "number of random margins per batch (default 8)");
  derivs_cmd->add_option("--batches", batches, "number of batches (default 1)");
  derivs_cmd->add_option("--seed", derivs_seed, "seed (default 0)");
  derivs_cmd->add_option("--lambda", derivs_lambda, "Box-Cox lambda (default 0)");
  derivs_cmd->add_option("--out", derivs_out, "CSV path (default stdout)");

  auto* bench_cmd = app.add_subcommand("bench", "Replicated comparison of methods with paired t-tests");
  std::string bench_config, bench_out;
  int jobs = 0;
  bool dry_run = false;
  FlagSet bench_flags;
  bench_cmd->add_option("--config", bench_config, "flat key = value config file (flags override it)");
  bench_cmd->add_option("--out", bench_out, "output directory (default bench)");
  bench_cmd->add_option("--jobs", jobs, "parallel training cells (default 1)");
  bench_cmd->add_flag("--dry-run", dry_run, "print the cell matrix and exit");
  bench_flags.add(bench_cmd, "datasets", "semicolon-separated id=data entries");
  bench_flags.add(bench_cmd, "methods", "comma-separated modes (default ensloss,fixed:logistic,fixed:hinge,fixed:exponential)");
  bench_flags.add(bench_cmd, "seeds", "seed list, e.g. 1..10 or 1,2,3");
  add_training_flags(bench_cmd, bench_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (train_cmd->parsed()) err << train_cmd->help();
    return kExitUsage;
  }
  // Subcommand --help is handled by CLI11 via CallForHelp above.

  try {
    if (train_cmd->parsed()) return cmd_train(train_config, train_flags, train_out, out, err);
    if (check_cmd->parsed()) return cmd_check_loss(loss_name, tail_p, tail_z0, scan_max, as_json, out);
    if (derivs_cmd->parsed()) {
      return cmd_derivs(margins_text, random_n, batches, derivs_seed, derivs_lambda, derivs_out, out);
    }
    if (bench_cmd->parsed()) return cmd_bench(bench_config, bench_flags, bench_out, jobs, dry_run, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace ensloss::cli
