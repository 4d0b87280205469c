#include "ensloss/datasets.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ensloss/errors.hpp"
#include "ensloss/numerics.hpp"

namespace ensloss {

static_assert(std::endian::native == std::endian::little, "dataset cache assumes a little-endian host");

bool operator==(const SplitDataset& a, const SplitDataset& b) {
  auto same = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
  };
  return same(a.X_train, b.X_train) && same(a.X_test, b.X_test) && a.y_train == b.y_train && a.y_test == b.y_test &&
         a.feature_means == b.feature_means && a.feature_stds == b.feature_stds;
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    const auto first = field.find_first_not_of(' ');
    out.push_back(first == std::string::npos ? std::string() : field.substr(first));
  }
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

RawDataset parse_csv(std::istream& in, const CsvOptions& opts) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  if (opts.has_header) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!is_blank(line)) break;
    }
    if (is_blank(line)) throw IngestionError("csv: file is empty");
    header = split_line(line, opts.delimiter);
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    rows.push_back(split_line(line, opts.delimiter));
    row_lines.push_back(line_no);
  }
  if (rows.empty()) throw IngestionError("csv: no data rows");

  const std::size_t width = opts.has_header ? header.size() : rows.front().size();
  std::size_t label_idx = width;
  if (opts.has_header) {
    const auto it = std::find(header.begin(), header.end(), opts.label_column);
    if (it != header.end()) label_idx = static_cast<std::size_t>(it - header.begin());
  }
  if (label_idx == width) {
    std::size_t idx = 0;
    const auto [ptr, ec] =
        std::from_chars(opts.label_column.data(), opts.label_column.data() + opts.label_column.size(), idx);
    if (ec != std::errc() || ptr != opts.label_column.data() + opts.label_column.size() || idx >= width) {
      throw IngestionError("csv: label column '" + opts.label_column + "' not found");
    }
    label_idx = idx;
  }
  if (width < 2) throw IngestionError("csv: need at least one feature column besides the label");

  RawDataset raw;
  for (std::size_t j = 0; j < width; ++j) {
    if (j == label_idx) continue;
    raw.feature_names.push_back(opts.has_header ? header[j] : "x" + std::to_string(j));
  }
  raw.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  raw.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != width) {
      std::ostringstream os;
      os << "csv: line " << row_lines[i] << " has " << r.size() << " fields, expected " << width;
      throw IngestionError(os.str());
    }
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < width; ++j) {
      if (j == label_idx) continue;
      double v = 0.0;
      if (!parse_double(r[j], v)) {
        std::ostringstream os;
        os << "csv: line " << row_lines[i] << ", column " << (j + 1) << ": '" << r[j] << "' is not numeric";
        throw IngestionError(os.str());
      }
      raw.X(static_cast<Eigen::Index>(i), col++) = v;
    }
    raw.y[i] = r[label_idx] == opts.positive_label ? 1.0 : -1.0;
  }
  return raw;
}

RawDataset load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw IngestionError("csv: cannot open '" + path + "'");
  return parse_csv(in, opts);
}

SplitDataset split_standardize(const RawDataset& raw, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw PreconditionError("split_standardize: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = raw.y.size();
  if (static_cast<std::size_t>(raw.X.rows()) != n) throw ShapeError("split_standardize: X and y row counts differ");

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (raw.y[i] > 0 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw ConfigError("split_standardize: both classes must be present");

  // Largest-remainder allocation of the test rows across the two classes.
  const auto n_test_total = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  const double want_pos = test_fraction * static_cast<double>(pos.size());
  const double want_neg = test_fraction * static_cast<double>(neg.size());
  auto test_pos = static_cast<std::size_t>(std::floor(want_pos));
  auto test_neg = static_cast<std::size_t>(std::floor(want_neg));
  while (test_pos + test_neg < n_test_total) {
    if (want_pos - static_cast<double>(test_pos) >= want_neg - static_cast<double>(test_neg)) {
      ++test_pos;
    } else {
      ++test_neg;
    }
  }
  if (test_pos == 0 || test_neg == 0 || test_pos >= pos.size() || test_neg >= neg.size()) {
    throw ConfigError("split_standardize: a class would be absent from the train or test split");
  }

  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::size_t> test_idx(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(test_pos));
  test_idx.insert(test_idx.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg));
  std::vector<std::size_t> train_idx(pos.begin() + static_cast<std::ptrdiff_t>(test_pos), pos.end());
  train_idx.insert(train_idx.end(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg), neg.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  const auto d = raw.X.cols();
  SplitDataset out;
  out.X_train.resize(static_cast<Eigen::Index>(train_idx.size()), d);
  out.X_test.resize(static_cast<Eigen::Index>(test_idx.size()), d);
  for (std::size_t k = 0; k < train_idx.size(); ++k) {
    out.X_train.row(static_cast<Eigen::Index>(k)) = raw.X.row(static_cast<Eigen::Index>(train_idx[k]));
    out.y_train.push_back(raw.y[train_idx[k]]);
  }
  for (std::size_t k = 0; k < test_idx.size(); ++k) {
    out.X_test.row(static_cast<Eigen::Index>(k)) = raw.X.row(static_cast<Eigen::Index>(test_idx[k]));
    out.y_test.push_back(raw.y[test_idx[k]]);
  }

  out.feature_means.resize(static_cast<std::size_t>(d));
  out.feature_stds.resize(static_cast<std::size_t>(d));
  const double n_train = static_cast<double>(train_idx.size());
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = out.X_train.col(j).sum() / n_train;
    const double var = (out.X_train.col(j).array() - mean).square().sum() / n_train;
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    out.feature_means[static_cast<std::size_t>(j)] = mean;
    out.feature_stds[static_cast<std::size_t>(j)] = sd;
    out.X_train.col(j) = (out.X_train.col(j).array() - mean) / sd;
    out.X_test.col(j) = (out.X_test.col(j).array() - mean) / sd;
  }
  return out;
}

double bayes_accuracy(const SyntheticSpec& spec) {
  const double clean = normal_cdf(spec.class_sep / 2.0);
  return clean * (1.0 - spec.noise) + (1.0 - clean) * spec.noise;
}

namespace {

void validate(const SyntheticSpec& spec) {
  if (spec.n < 4) throw ConfigError("synthetic data: n must be at least 4");
  if (spec.d < 1) throw ConfigError("synthetic data: d must be at least 1");
  if (!(spec.noise >= 0.0 && spec.noise < 0.5)) throw ConfigError("synthetic data: noise must lie in [0, 0.5)");
  const double bayes = bayes_accuracy(spec);
  if (!(bayes > 0.5 && bayes <= 1.0)) {
    throw ConfigError("synthetic data: Bayes accuracy must lie in (0.5, 1]; increase class_sep");
  }
}

template <typename Shift>
SplitDataset make_shifted(const SyntheticSpec& spec, std::uint64_t seed, Shift&& shift) {
  validate(spec);
  Rng rng(seed);
  RawDataset raw;
  raw.X.resize(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(spec.d));
  raw.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double label = rng.uniform() < 0.5 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < spec.d; ++j) {
      raw.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal() + label * shift(j);
    }
    const bool flip = spec.noise > 0.0 && rng.uniform() < spec.noise;
    raw.y[i] = flip ? -label : label;
  }
  return split_standardize(raw, spec.test_fraction, seed ^ 0x5eed5eed5eedULL);
}

}  // namespace

SplitDataset make_gaussian_blobs(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.kind != SyntheticKind::gaussian_blobs) throw ConfigError("make_gaussian_blobs: wrong kind");
  const double half = spec.class_sep / 2.0;
  return make_shifted(spec, seed, [half](std::size_t j) { return j == 0 ? half : 0.0; });
}

SplitDataset make_high_dim_sparse(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.kind != SyntheticKind::high_dim_sparse) throw ConfigError("make_high_dim_sparse: wrong kind");
  if (spec.informative < 1 || spec.informative > spec.d) {
    throw ConfigError("make_high_dim_sparse: informative must lie in [1, d]");
  }
  const double per = spec.class_sep / 2.0 / std::sqrt(static_cast<double>(spec.informative));
  const std::size_t k = spec.informative;
  return make_shifted(spec, seed, [per, k](std::size_t j) { return j < k ? per : 0.0; });
}

SplitDataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  return spec.kind == SyntheticKind::gaussian_blobs ? make_gaussian_blobs(spec, seed)
                                                    : make_high_dim_sparse(spec, seed);
}

namespace {

constexpr char kMagic[6] = {'E', 'N', 'S', 'L', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IngestionError("dataset cache: truncated header");
  return v;
}

void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& in, double* p, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw IngestionError("dataset cache: truncated payload");
  }
}

}  // namespace

void save_dataset(const SplitDataset& ds, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  write_u64(out, static_cast<std::uint64_t>(ds.X_train.rows()));
  write_u64(out, static_cast<std::uint64_t>(ds.X_test.rows()));
  write_u64(out, static_cast<std::uint64_t>(ds.X_train.cols()));
  write_doubles(out, ds.X_train.data(), static_cast<std::size_t>(ds.X_train.size()));
  write_doubles(out, ds.X_test.data(), static_cast<std::size_t>(ds.X_test.size()));
  write_doubles(out, ds.y_train.data(), ds.y_train.size());
  write_doubles(out, ds.y_test.data(), ds.y_test.size());
  write_doubles(out, ds.feature_means.data(), ds.feature_means.size());
  write_doubles(out, ds.feature_stds.data(), ds.feature_stds.size());
  if (!out) throw Error("dataset cache: write failed");
}

SplitDataset load_dataset(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IngestionError("dataset cache: bad magic header");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kFormatVersion) throw IngestionError("dataset cache: unsupported format version");
  const auto n_train = read_u64(in), n_test = read_u64(in), d = read_u64(in);
  if (d == 0 || d > (1u << 24) || n_train > (1ull << 32) || n_test > (1ull << 32)) {
    throw IngestionError("dataset cache: implausible dimensions");
  }
  SplitDataset ds;
  ds.X_train.resize(static_cast<Eigen::Index>(n_train), static_cast<Eigen::Index>(d));
  ds.X_test.resize(static_cast<Eigen::Index>(n_test), static_cast<Eigen::Index>(d));
  ds.y_train.resize(n_train);
  ds.y_test.resize(n_test);
  ds.feature_means.resize(d);
  ds.feature_stds.resize(d);
  read_doubles(in, ds.X_train.data(), static_cast<std::size_t>(ds.X_train.size()));
  read_doubles(in, ds.X_test.data(), static_cast<std::size_t>(ds.X_test.size()));
  read_doubles(in, ds.y_train.data(), n_train);
  read_doubles(in, ds.y_test.data(), n_test);
  read_doubles(in, ds.feature_means.data(), d);
  read_doubles(in, ds.feature_stds.data(), d);
  return ds;
}

}  // namespace ensloss
