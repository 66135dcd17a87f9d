#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kws/error.hpp"
#include "kws/harness.hpp"

namespace {

// Flags seen on the command line win over values from --config, which win
// over built-in defaults.
struct Options {
  std::string config_path;
  std::string corpus;
  std::string out;
  std::string keywords;
  std::string dump_mfcc;
  std::uint64_t seed = 0;
  double window_length_s = 0.0;
  double window_step_s = 0.0;
  double s_param = 0.0;
  double clip_seconds = 0.0;
  int n_bins = 0;
  int clauses_per_class = 0;
  int threshold = 0;
  int n_states = 0;
  int epochs = 0;
  int threads = 0;
  int n_ceps = 0;
  int n_filters = 0;
  int fft_size = 0;
  int sample_rate = 0;

  CLI::Option* corpus_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* keywords_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* window_length_opt = nullptr;
  CLI::Option* window_step_opt = nullptr;
  CLI::Option* s_opt = nullptr;
  CLI::Option* clip_seconds_opt = nullptr;
  CLI::Option* n_bins_opt = nullptr;
  CLI::Option* clauses_opt = nullptr;
  CLI::Option* threshold_opt = nullptr;
  CLI::Option* n_states_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* n_ceps_opt = nullptr;
  CLI::Option* n_filters_opt = nullptr;
  CLI::Option* fft_size_opt = nullptr;
  CLI::Option* sample_rate_opt = nullptr;
};

void add_common_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags override its values");
  o.corpus_opt = cmd->add_option("--corpus", o.corpus, "Corpus root (one directory per keyword)");
  o.out_opt = cmd->add_option("--out", o.out, "Output directory for caches, models and reports");
  o.keywords_opt = cmd->add_option(
      "--keywords", o.keywords,
      "Comma-separated keyword list or a preset: baseline3, baseline4, similar4, nine");
  o.seed_opt = cmd->add_option("--seed", o.seed, "Seed for the split hash and training RNG");
  o.window_length_opt =
      cmd->add_option("--window-length-s", o.window_length_s, "Analysis window length, seconds");
  o.window_step_opt =
      cmd->add_option("--window-step-s", o.window_step_s, "Analysis window step, seconds");
  o.clip_seconds_opt =
      cmd->add_option("--clip-seconds", o.clip_seconds, "Clip length every file is padded/cut to");
  o.n_bins_opt = cmd->add_option("--n-bins", o.n_bins, "Quantile bins per feature");
  o.clauses_opt =
      cmd->add_option("--clauses-per-class", o.clauses_per_class, "Clauses per keyword class");
  o.threshold_opt = cmd->add_option("--threshold", o.threshold, "Vote clamp T used in training");
  o.s_opt = cmd->add_option("--s-param", o.s_param, "Specificity s (> 1)");
  o.n_states_opt = cmd->add_option("--n-states", o.n_states, "Automaton states per action");
  o.epochs_opt = cmd->add_option("--epochs", o.epochs, "Training epochs");
  o.threads_opt = cmd->add_option("--threads", o.threads, "Worker threads for ingestion (0 = auto)");
  o.n_ceps_opt = cmd->add_option("--n-ceps", o.n_ceps, "Cepstral coefficients per frame");
  o.n_filters_opt = cmd->add_option("--n-filters", o.n_filters, "Mel filterbank size");
  o.fft_size_opt = cmd->add_option("--fft-size", o.fft_size, "FFT size (0 = auto power of two)");
  o.sample_rate_opt = cmd->add_option("--sample-rate", o.sample_rate, "Expected sample rate, Hz");
}

kws::ExperimentConfig build_config(const Options& o) {
  kws::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = kws::load_config_file(o.config_path);

  if (o.corpus_opt->count()) cfg.corpus_root = o.corpus;
  if (o.out_opt->count()) cfg.output_dir = o.out;
  if (o.keywords_opt->count()) cfg.keywords = kws::parse_keywords_arg(o.keywords);
  if (o.seed_opt->count()) cfg.seed = o.seed;
  if (o.window_length_opt->count()) cfg.mfcc.window_length_s = o.window_length_s;
  if (o.window_step_opt->count()) cfg.mfcc.window_step_s = o.window_step_s;
  if (o.clip_seconds_opt->count()) cfg.clip_seconds = o.clip_seconds;
  if (o.n_bins_opt->count()) cfg.n_bins = o.n_bins;
  if (o.clauses_opt->count()) cfg.tm.clauses_per_class = o.clauses_per_class;
  if (o.threshold_opt->count()) cfg.tm.threshold = o.threshold;
  if (o.s_opt->count()) cfg.tm.s = o.s_param;
  if (o.n_states_opt->count()) cfg.tm.n_states = o.n_states;
  if (o.epochs_opt->count()) cfg.epochs = o.epochs;
  if (o.threads_opt->count()) cfg.threads = o.threads;
  if (o.n_ceps_opt->count()) cfg.mfcc.n_ceps = o.n_ceps;
  if (o.n_filters_opt->count()) cfg.mfcc.n_filters = o.n_filters;
  if (o.fft_size_opt->count()) cfg.mfcc.fft_size = o.fft_size;
  if (o.sample_rate_opt->count()) cfg.mfcc.sample_rate = o.sample_rate;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Keyword spotting with a Tsetlin Machine over Boolean MFCC features"};
  app.require_subcommand(1);

  Options prep_opts, train_opts, eval_opts, sweep_opts, stats_opts;

  CLI::App* prepare = app.add_subcommand(
      "prepare", "Ingest a corpus: split, extract MFCCs, fit the encoder, cache features");
  add_common_options(prepare, prep_opts);
  prepare->add_option("--dump-mfcc", prep_opts.dump_mfcc,
                      "Also write per-clip MFCC matrices (CSV + binary) to this directory");

  CLI::App* train = app.add_subcommand("train", "Train a model on cached features");
  add_common_options(train, train_opts);

  CLI::App* eval = app.add_subcommand("eval", "Score a trained model on one split");
  add_common_options(eval, eval_opts);
  std::string eval_split = "test";
  std::string eval_model;
  eval->add_option("--split", eval_split, "train, test or validation (default test)");
  eval->add_option("--model", eval_model, "Model file (default <out>/model.json)");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "Run prepare+train per value of one parameter and tabulate the results");
  add_common_options(sweep, sweep_opts);
  std::string sweep_param;
  std::string sweep_values;
  sweep->add_option("--sweep-param", sweep_param,
                    "One of: window_length_s, window_step_s, n_bins, keywords, "
                    "clauses_per_class, T, s")
      ->required();
  sweep->add_option("--sweep-values", sweep_values,
                    "Comma-separated values; keyword lists use ; between words")
      ->required();

  CLI::App* stats = app.add_subcommand(
      "feature-stats", "Per-feature mean/variance over the cached training split");
  add_common_options(stats, stats_opts);

  CLI::App* selftest =
      app.add_subcommand("xor-selftest", "Check the learner on XOR, which defeats linear rules");
  int selftest_epochs = 200;
  std::uint64_t selftest_seed = 1;
  selftest->add_option("--epochs", selftest_epochs, "Epoch budget (default 200)");
  selftest->add_option("--seed", selftest_seed, "Training seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Normalize CLI11's many parse-error codes onto the documented usage
    // exit code (help still exits 0).
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (prepare->parsed()) {
    kws::ExperimentConfig cfg = build_config(prep_opts);
    cfg.dump_mfcc_dir = prep_opts.dump_mfcc;
    const auto result = kws::cmd_prepare(cfg);
    if (result.skipped) {
      std::printf("cache up to date in %s\n", cfg.output_dir.c_str());
    } else {
      std::printf("prepared %zu/%zu/%zu train/test/validation clips\n", result.train_rows,
                  result.test_rows, result.validation_rows);
      std::printf("%zu raw features -> %zu Booleans per clip\n", result.raw_feature_count,
                  result.total_booleans);
    }
  } else if (train->parsed()) {
    const kws::ExperimentConfig cfg = build_config(train_opts);
    const auto result = kws::cmd_train(cfg);
    std::printf("train %.2f%%  test %.2f%%  validation %.2f%%  (gap %.2f)\n",
                result.metrics.train_acc, result.metrics.test_acc, result.metrics.val_acc,
                result.metrics.overfit_gap);
    std::printf("model: %s\n", result.model_path.string().c_str());
    std::printf("metrics: %s\n", result.metrics_path.string().c_str());
  } else if (eval->parsed()) {
    const kws::ExperimentConfig cfg = build_config(eval_opts);
    const auto result = kws::cmd_eval(cfg, eval_split, eval_model);
    std::printf("%s accuracy %.2f%%\n", result.split.c_str(), result.accuracy);
    std::printf("report: %s\n", result.report_path.string().c_str());
    std::printf("confusion: %s\n", result.confusion_path.string().c_str());
  } else if (sweep->parsed()) {
    const kws::ExperimentConfig cfg = build_config(sweep_opts);
    std::vector<std::string> values;
    std::size_t start = 0;
    while (start <= sweep_values.size()) {
      const std::size_t comma = sweep_values.find(',', start);
      std::string token = sweep_values.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      // Keyword lists travel with ; separators so they fit in one CSV flag.
      for (char& c : token) {
        if (c == ';') c = ',';
      }
      if (!token.empty()) values.push_back(token);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const auto csv = kws::cmd_sweep(cfg, sweep_param, values);
    std::printf("sweep table: %s\n", csv.string().c_str());
  } else if (stats->parsed()) {
    const kws::ExperimentConfig cfg = build_config(stats_opts);
    const auto result = kws::cmd_feature_stats(cfg);
    std::printf("%zu features, %zu with zero variance\n", result.feature_count,
                result.zero_variance_count);
    std::printf("stats: %s\n", result.csv_path.string().c_str());
  } else if (selftest->parsed()) {
    const auto result = kws::xor_selftest(selftest_epochs, selftest_seed);
    std::printf("XOR selftest: %s after %d epochs (train accuracy %.1f%%)\n",
                result.passed ? "passed" : "FAILED", result.epochs_run, result.final_train_acc);
    if (!result.passed) return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const kws::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const kws::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::UnsupportedFormat& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::MissingClassError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::EmptyClassError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::InsufficientDataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::DimensionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::ModelVersionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::ModelDataMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const kws::StaleCacheError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
}
