#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ensloss/models.hpp"

namespace ensloss {

/// Parsed but unsplit data. Labels are +1 / -1.
struct RawDataset {
  Matrix X;
  std::vector<double> y;
  std::vector<std::string> feature_names;
};

/// Train/test split with features standardized by train-split statistics.
struct SplitDataset {
  Matrix X_train;
  Matrix X_test;
  std::vector<double> y_train;
  std::vector<double> y_test;
  std::vector<double> feature_means;
  std::vector<double> feature_stds;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(X_train.cols()); }
  friend bool operator==(const SplitDataset&, const SplitDataset&);
};

struct CsvOptions {
  /// Column header name, or a 0-based index when the name is not found.
  std::string label_column = "label";
  std::string positive_label = "1";
  char delimiter = ',';
  bool has_header = true;
};

/// Reads a delimited text file. The positive label maps to +1, every other
/// label to -1. Throws IngestionError for missing files or columns, empty
/// data, or non-numeric features (the message names the offending line).
RawDataset load_csv(const std::string& path, const CsvOptions& opts = {});
RawDataset parse_csv(std::istream& in, const CsvOptions& opts = {});

/// Stratified shuffle split, then standardization fitted on the train rows.
/// Constant train columns get std 1. Throws PreconditionError for a
/// test_fraction outside (0, 1) and ConfigError when a class would be missing
/// from either side.
SplitDataset split_standardize(const RawDataset& raw, double test_fraction, std::uint64_t seed);

enum class SyntheticKind { gaussian_blobs, high_dim_sparse };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::gaussian_blobs;
  std::size_t n = 2000;
  std::size_t d = 2;
  /// Distance between the two class means.
  double class_sep = 2.0;
  /// Probability of flipping each label.
  double noise = 0.0;
  /// Number of coordinates carrying the mean shift (high_dim_sparse only).
  std::size_t informative = 10;
  double test_fraction = 0.25;
};

/// Accuracy of the Bayes rule: Phi(sep/2) (1 - noise) + (1 - Phi(sep/2)) noise.
double bayes_accuracy(const SyntheticSpec& spec);

/// Two unit-variance isotropic Gaussians at +-(class_sep/2) e_1, equal priors.
SplitDataset make_gaussian_blobs(const SyntheticSpec& spec, std::uint64_t seed);

/// d standard-normal features; the class mean shift +-(class_sep/2) is spread
/// evenly over the first `informative` coordinates.
SplitDataset make_high_dim_sparse(const SyntheticSpec& spec, std::uint64_t seed);

/// Dispatches on spec.kind.
SplitDataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Binary cache (magic "ENSLDS", format version, little-endian IEEE doubles);
/// see docs/formats.md. Round trips are bit-exact.
void save_dataset(const SplitDataset& ds, std::ostream& out);
SplitDataset load_dataset(std::istream& in);

}  // namespace ensloss
