#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kws/mfcc.hpp"
#include "kws/tm.hpp"

namespace kws {

struct ExperimentConfig {
  std::string corpus_root;
  std::vector<std::string> keywords;
  std::uint64_t seed = 42;
  MfccConfig mfcc;
  double clip_seconds = 1.0;
  int n_bins = 2;
  TmParams tm;
  int epochs = 30;
  int threads = 0;  // 0 = one worker per hardware thread
  std::string output_dir = "out";
  std::string dump_mfcc_dir;  // when set, prepare also writes per-clip MFCC dumps here
};

// Named keyword sets used throughout the experiments. Unknown names throw
// ConfigError; parse_keywords_arg also accepts a comma-separated list.
std::vector<std::string> keyword_preset(const std::string& name);
std::vector<std::string> parse_keywords_arg(const std::string& arg);

ExperimentConfig load_config_file(const std::filesystem::path& path);

// Pipeline-relevant fields only (no host paths), so two runs with the same
// settings produce byte-identical metric files from any directory.
nlohmann::json config_echo(const ExperimentConfig& config);

struct PrepareResult {
  bool skipped = false;  // cache was already valid for this config
  std::size_t raw_feature_count = 0;
  std::size_t total_booleans = 0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t validation_rows = 0;
};

// Ingests the corpus, extracts MFCCs, fits the quantile encoder on the
// training split only, and writes the encoded caches plus manifest and
// encoder files into output_dir. Reruns with an unchanged corpus and config
// are no-ops; failures remove whatever partial cache was written.
PrepareResult cmd_prepare(const ExperimentConfig& config);

struct MetricsRecord {
  double train_acc = 0.0;
  double test_acc = 0.0;
  double val_acc = 0.0;
  double overfit_gap = 0.0;  // train_acc - test_acc
  std::vector<EpochStats> epoch_trace;
  OpCounters ops;
  double wall_time_s = 0.0;
  std::size_t feature_count = 0;    // raw features per clip
  std::size_t total_booleans = 0;   // Booleans per clip after encoding
};

struct TrainResult {
  MetricsRecord metrics;
  std::filesystem::path model_path;
  std::filesystem::path metrics_path;
  std::filesystem::path trace_path;
};

// Trains on the cached features and writes model.json, metrics.json and
// epoch_trace.csv. Refuses to run when the cache was produced by a
// different feature configuration.
TrainResult cmd_train(const ExperimentConfig& config);

struct EvalResult {
  std::string split;
  double accuracy = 0.0;
  std::vector<std::string> keywords;
  std::vector<double> precision;  // per class, 0.0 when the class was never predicted
  std::vector<double> recall;     // per class, 0.0 when the class has no clips
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::filesystem::path report_path;
  std::filesystem::path confusion_path;
};

EvalResult cmd_eval(const ExperimentConfig& config, const std::string& split_name,
                    const std::filesystem::path& model_path = {});

// Runs prepare+train per value of one parameter, collects one CSV row per
// point (including failed points, marked in the status column), and writes
// the table sorted by sweep value.
std::filesystem::path cmd_sweep(const ExperimentConfig& base, const std::string& parameter,
                                const std::vector<std::string>& values);

struct FeatureStatsResult {
  std::size_t feature_count = 0;
  std::size_t zero_variance_count = 0;
  std::filesystem::path csv_path;
};

// Per-feature mean/variance over the cached raw training matrix, flagging
// degenerate (zero-variance) features.
FeatureStatsResult cmd_feature_stats(const ExperimentConfig& config);

// Tiny built-in sanity problem: XOR over two Booleans, which no single
// literal can solve. A healthy learner reaches 100% training accuracy.
EncodedDataset make_xor_dataset(int copies_per_pattern);

struct XorSelftestResult {
  bool passed = false;
  int epochs_run = 0;
  double final_train_acc = 0.0;
};

XorSelftestResult xor_selftest(int max_epochs, std::uint64_t seed);

}  // namespace kws
