#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ensloss/datasets.hpp"
#include "ensloss/trainer.hpp"

namespace ensloss::cli {

/// Stable exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Flat key=value settings. Later layers override earlier ones.
using Settings = std::map<std::string, std::string>;

/// Parses "key = value" lines; '#' starts a comment. Throws ConfigError on
/// malformed lines.
Settings parse_settings(std::istream& in);
Settings load_settings_file(const std::filesystem::path& path);
std::string format_settings(const Settings& s);

/// Every key understood by train and bench, with its default.
const Settings& default_settings();

/// Resolved training setup: everything needed to reproduce a run.
struct TrainSetup {
  TrainConfig config;
  ModelSpec model;
  std::string data;
  std::uint64_t data_seed = 0;
  double test_fraction = 0.25;
  CsvOptions csv;
};

/// Converts settings to a TrainSetup; unknown keys or bad values throw ConfigError.
TrainSetup resolve_train_setup(const Settings& s);

/// Builds a dataset from a data reference: "blobs[:k=v,...]", "sparse[:k=v,...]",
/// a delimited text file, or a binary dataset cache.
SplitDataset load_data(const std::string& ref, std::uint64_t seed, double test_fraction, const CsvOptions& csv);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Writes `content` to path via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

/// Entry point shared by the ensloss binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ensloss::cli
