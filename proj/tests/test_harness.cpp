#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kws/harness.hpp"
#include "kws/booleanize.hpp"
#include "kws/model_io.hpp"
#include "testutil.hpp"

using namespace kws;
namespace tu = kws::testutil;
namespace fs = std::filesystem;

namespace {

// One synthetic corpus shared by every case in this file; building it takes
// long enough that each case should not repeat the work.
const fs::path& corpus_root() {
  static const fs::path root = [] {
    const fs::path r = tu::fresh_dir("harness_corpus");
    tu::make_synthetic_corpus(r, {"yes", "no", "stop", "go"}, 80, 4000, 11);
    return r;
  }();
  return root;
}

ExperimentConfig small_config(const fs::path& out_dir) {
  ExperimentConfig cfg;
  cfg.corpus_root = corpus_root().string();
  cfg.keywords = {"yes", "no", "stop", "go"};
  cfg.seed = 42;
  cfg.mfcc.sample_rate = 4000;
  cfg.mfcc.window_length_s = 0.025;  // 100 samples
  cfg.mfcc.window_step_s = 0.1;      // 400 samples: 10 frames per second of audio
  cfg.mfcc.n_filters = 12;
  cfg.mfcc.n_ceps = 5;
  cfg.mfcc.fft_size = 0;
  cfg.n_bins = 2;
  cfg.tm.clauses_per_class = 20;
  cfg.tm.threshold = 10;
  cfg.tm.s = 3.9;
  cfg.tm.n_states = 100;
  cfg.epochs = 10;
  cfg.output_dir = out_dir.string();
  return cfg;
}

std::size_t count_lines(const std::string& text) {
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n' ? 1 : 0;
  return lines;
}

}  // namespace

TEST_CASE("prepare builds the feature cache once") {
  const auto dir = tu::fresh_dir("harness_prepare");
  ExperimentConfig cfg = small_config(dir / "out");
  cfg.dump_mfcc_dir = (dir / "dumps").string();

  const PrepareResult first = cmd_prepare(cfg);
  CHECK_FALSE(first.skipped);
  CHECK(first.raw_feature_count == 50);  // 10 frames x 5 coefficients
  CHECK(first.total_booleans == 50);     // two bins need one bit each
  CHECK(first.train_rows > 0);
  CHECK(first.test_rows > 0);
  CHECK(first.validation_rows > 0);
  CHECK(first.train_rows + first.test_rows + first.validation_rows == 320);

  for (const char* name : {"cache_meta.json", "split_manifest.json", "encoder.json",
                           "train_raw.bin", "features_train.bin", "features_test.bin",
                           "features_validation.bin"}) {
    CAPTURE(name);
    CHECK(fs::exists(fs::path(cfg.output_dir) / name));
  }

  // The raw training matrix really is rows x features.
  const Matrix raw = read_matrix_bin(fs::path(cfg.output_dir) / "train_raw.bin");
  CHECK(raw.rows == first.train_rows);
  CHECK(raw.cols == 50);

  // Per-clip dumps were requested: every clip leaves a CSV and a binary.
  std::size_t dumped = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "dumps")) {
    if (!entry.is_regular_file()) continue;
    ++dumped;
    if (entry.path().extension() == ".bin") {
      const Matrix m = read_matrix_bin(entry.path());
      CHECK(m.rows == 10);
      CHECK(m.cols == 5);
    }
  }
  CHECK(dumped == 2 * 320);

  const PrepareResult second = cmd_prepare(cfg);
  CHECK(second.skipped);
  CHECK(second.train_rows == first.train_rows);

  // Any feature-affecting change invalidates the cache.
  ExperimentConfig changed = cfg;
  changed.dump_mfcc_dir.clear();
  changed.n_bins = 4;
  const PrepareResult rebuilt = cmd_prepare(changed);
  CHECK_FALSE(rebuilt.skipped);
  CHECK(rebuilt.total_booleans == 100);
}

TEST_CASE("train learns the synthetic keywords and writes its artifacts") {
  const auto dir = tu::fresh_dir("harness_train");
  const ExperimentConfig cfg = small_config(dir / "out");
  cmd_prepare(cfg);

  const TrainResult result = cmd_train(cfg);
  CHECK(result.metrics.train_acc >= 80.0);
  CHECK(result.metrics.feature_count == 50);
  CHECK(result.metrics.total_booleans == 50);
  CHECK(result.metrics.epoch_trace.size() == 10);
  CHECK(result.metrics.overfit_gap ==
        doctest::Approx(result.metrics.train_acc - result.metrics.test_acc));
  CHECK(result.metrics.ops.clause_evaluations > 0);
  CHECK(result.metrics.ops.ta_updates > 0);
  CHECK(result.metrics.wall_time_s > 0.0);

  REQUIRE(fs::exists(result.model_path));
  REQUIRE(fs::exists(result.metrics_path));
  REQUIRE(fs::exists(result.trace_path));

  const std::string trace = tu::read_file(result.trace_path);
  CHECK(trace.rfind("epoch,train_acc,test_acc,val_acc,clause_evaluations,ta_updates,feedback_events\n", 0) == 0);
  CHECK(count_lines(trace) == 11);  // header plus one row per epoch

  const auto metrics = nlohmann::json::parse(tu::read_file(result.metrics_path));
  CHECK(metrics.at("train_acc").get<double>() == result.metrics.train_acc);
  CHECK(metrics.at("config").at("n_bins").get<int>() == 2);
  CHECK(metrics.at("op_counters").at("ta_updates").get<std::uint64_t>() ==
        result.metrics.ops.ta_updates);

  // The stored model reproduces the run's training accuracy unaided.
  const TrainedModel model = load_model(result.model_path);
  CHECK(model.keywords == cfg.keywords);
  CHECK(model.machine.n_features() == 50);
}

TEST_CASE("eval writes a consistent confusion matrix") {
  const auto dir = tu::fresh_dir("harness_eval");
  const ExperimentConfig cfg = small_config(dir / "out");
  const PrepareResult prepared = cmd_prepare(cfg);
  cmd_train(cfg);

  const EvalResult result = cmd_eval(cfg, "train");
  CHECK(result.split == "train");
  CHECK(result.keywords == cfg.keywords);
  REQUIRE(result.confusion.size() == 4);

  std::size_t total = 0;
  std::size_t diagonal = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    REQUIRE(result.confusion[r].size() == 4);
    for (std::size_t c = 0; c < 4; ++c) total += result.confusion[r][c];
    diagonal += result.confusion[r][r];
  }
  CHECK(total == prepared.train_rows);
  CHECK(result.accuracy ==
        doctest::Approx(100.0 * static_cast<double>(diagonal) / static_cast<double>(total)));
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(result.precision[c] >= 0.0);
    CHECK(result.precision[c] <= 1.0);
    CHECK(result.recall[c] >= 0.0);
    CHECK(result.recall[c] <= 1.0);
  }

  REQUIRE(fs::exists(result.confusion_path));
  const std::string confusion = tu::read_file(result.confusion_path);
  CHECK(confusion.rfind("true_keyword,yes,no,stop,go\n", 0) == 0);
  CHECK(count_lines(confusion) == 5);

  const auto report = nlohmann::json::parse(tu::read_file(result.report_path));
  CHECK(report.at("accuracy").get<double>() == doctest::Approx(result.accuracy));
  CHECK(report.at("per_class").size() == 4);

  CHECK_THROWS_AS(cmd_eval(cfg, "dev"), ConfigError);
}

TEST_CASE("eval rejects a model trained for different data") {
  const auto dir = tu::fresh_dir("harness_mismatch");

  ExperimentConfig three = small_config(dir / "three");
  three.keywords = {"yes", "no", "stop"};
  cmd_prepare(three);
  const TrainResult three_train = cmd_train(three);

  const ExperimentConfig four = small_config(dir / "four");
  cmd_prepare(four);
  cmd_train(four);
  CHECK_THROWS_AS(cmd_eval(four, "test", three_train.model_path), ModelDataMismatch);

  // Same keywords but a different Boolean width also refuses.
  ExperimentConfig wide = small_config(dir / "wide");
  wide.keywords = {"yes", "no", "stop"};
  wide.n_bins = 4;
  cmd_prepare(wide);
  CHECK_THROWS_AS(cmd_eval(wide, "test", three_train.model_path), ModelDataMismatch);
}

TEST_CASE("train refuses stale or missing caches") {
  const auto dir = tu::fresh_dir("harness_stale");
  ExperimentConfig cfg = small_config(dir / "out");

  CHECK_THROWS_AS(cmd_train(cfg), StaleCacheError);

  cmd_prepare(cfg);
  cfg.n_bins = 4;
  CHECK_THROWS_AS(cmd_train(cfg), StaleCacheError);

  cfg.n_bins = 2;
  ExperimentConfig retuned = cfg;
  retuned.tm.threshold = 5;  // hyperparameters do not touch the feature cache
  CHECK_NOTHROW(cmd_train(retuned));
}

TEST_CASE("prepare surfaces bad corpora and rolls back partial caches") {
  const auto dir = tu::fresh_dir("harness_badcorpus");

  ExperimentConfig missing = small_config(dir / "out_a");
  missing.corpus_root = (dir / "nowhere").string();
  CHECK_THROWS_AS(cmd_prepare(missing), MissingClassError);

  ExperimentConfig ghost = small_config(dir / "out_b");
  ghost.keywords = {"yes", "no", "ghost"};
  CHECK_THROWS_AS(cmd_prepare(ghost), MissingClassError);

  // Corpus with one clip at the wrong sample rate.
  const fs::path broken = dir / "broken_corpus";
  tu::make_synthetic_corpus(broken, {"yes", "no"}, 20, 4000, 3);
  tu::write_wav(broken / "yes" / "yes_offrate.wav", std::vector<double>(8000, 0.1), 8000);

  ExperimentConfig bad = small_config(dir / "out_c");
  bad.corpus_root = broken.string();
  bad.keywords = {"yes", "no"};
  CHECK_THROWS_AS(cmd_prepare(bad), UnsupportedFormat);
  CHECK_FALSE(fs::exists(fs::path(bad.output_dir) / "cache_meta.json"));
  CHECK_FALSE(fs::exists(fs::path(bad.output_dir) / "features_train.bin"));
  CHECK_FALSE(fs::exists(fs::path(bad.output_dir) / "encoder.json"));
}

TEST_CASE("identical configs reproduce identical artifacts") {
  const auto dir = tu::fresh_dir("harness_determinism");
  const ExperimentConfig a = small_config(dir / "run_a");
  const ExperimentConfig b = small_config(dir / "run_b");

  cmd_prepare(a);
  const TrainResult ra = cmd_train(a);
  cmd_prepare(b);
  const TrainResult rb = cmd_train(b);

  CHECK(tu::read_file(ra.model_path) == tu::read_file(rb.model_path));
  CHECK(tu::read_file(ra.trace_path) == tu::read_file(rb.trace_path));

  auto ja = nlohmann::json::parse(tu::read_file(ra.metrics_path));
  auto jb = nlohmann::json::parse(tu::read_file(rb.metrics_path));
  ja.erase("wall_time_s");
  jb.erase("wall_time_s");
  CHECK(ja == jb);
}

TEST_CASE("feature stats match a direct two-pass computation") {
  const auto dir = tu::fresh_dir("harness_stats");
  const ExperimentConfig cfg = small_config(dir / "out");
  cmd_prepare(cfg);

  const FeatureStatsResult result = cmd_feature_stats(cfg);
  CHECK(result.feature_count == 50);
  REQUIRE(fs::exists(result.csv_path));

  const Matrix raw = read_matrix_bin(fs::path(cfg.output_dir) / "train_raw.bin");
  std::ifstream in(result.csv_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "feature_index,mean,variance,zero_variance");

  std::size_t flagged = 0;
  for (std::size_t c = 0; c < raw.cols; ++c) {
    std::string line;
    REQUIRE(std::getline(in, line));
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::size_t index = 0;
    double mean = 0.0, variance = 0.0;
    int zero_flag = 0;
    fields >> index >> mean >> variance >> zero_flag;
    CHECK(index == c);

    double sum = 0.0;
    for (std::size_t r = 0; r < raw.rows; ++r) sum += raw.at(r, c);
    const double ref_mean = sum / static_cast<double>(raw.rows);
    double sq = 0.0;
    for (std::size_t r = 0; r < raw.rows; ++r) {
      const double d = raw.at(r, c) - ref_mean;
      sq += d * d;
    }
    const double ref_var = sq / static_cast<double>(raw.rows);
    CHECK(std::abs(mean - ref_mean) < 1e-9);
    CHECK(std::abs(variance - ref_var) < 1e-9);
    flagged += zero_flag;
    CHECK((zero_flag == 1) == (variance == 0.0));
  }
  CHECK(flagged == result.zero_variance_count);
}

TEST_CASE("sweep records every point including failures") {
  const auto dir = tu::fresh_dir("harness_sweep");
  ExperimentConfig cfg = small_config(dir / "out");
  cfg.epochs = 3;

  // 1000 bins cannot be fit from a few hundred training rows, so that point
  // must fail while the others succeed.
  const fs::path csv_path = cmd_sweep(cfg, "n_bins", {"4", "1000", "2"});
  REQUIRE(fs::exists(csv_path));

  std::ifstream in(csv_path);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("parameter,value,status,message,train_acc,test_acc,val_acc,overfit_gap,", 0) == 0);

  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  // Rows come back sorted by numeric value.
  CHECK(rows[0].rfind("n_bins,2,ok,", 0) == 0);
  CHECK(rows[1].rfind("n_bins,4,ok,", 0) == 0);
  CHECK(rows[2].rfind("n_bins,1000,error,", 0) == 0);

  CHECK(fs::exists(dir / "out" / "sweep_n_bins" / "2" / "model.json"));
  CHECK(fs::exists(dir / "out" / "sweep_n_bins" / "4" / "model.json"));
  CHECK_FALSE(fs::exists(dir / "out" / "sweep_n_bins" / "1000" / "model.json"));

  CHECK_THROWS_AS(cmd_sweep(cfg, "n_bins", {"abc"}), ConfigError);
  CHECK_THROWS_AS(cmd_sweep(cfg, "n_bins", {}), ConfigError);
  CHECK_THROWS_AS(cmd_sweep(cfg, "nonsense", {"1"}), ConfigError);
}

TEST_CASE("keyword presets and list parsing") {
  CHECK(keyword_preset("baseline3") == std::vector<std::string>{"yes", "no", "stop"});
  CHECK(keyword_preset("baseline4") == std::vector<std::string>{"yes", "no", "stop", "seven"});
  CHECK(keyword_preset("similar4") == std::vector<std::string>{"yes", "no", "stop", "go"});
  CHECK(keyword_preset("nine").size() == 9);
  CHECK_THROWS_AS(keyword_preset("baseline5"), ConfigError);

  CHECK(parse_keywords_arg("baseline3") == std::vector<std::string>{"yes", "no", "stop"});
  CHECK(parse_keywords_arg("yes") == std::vector<std::string>{"yes"});
  CHECK(parse_keywords_arg("one,two,three") == std::vector<std::string>{"one", "two", "three"});
  CHECK_THROWS_AS(parse_keywords_arg(""), ConfigError);
  CHECK_THROWS_AS(parse_keywords_arg("yes,,no"), ConfigError);
}

TEST_CASE("config files are strict about their keys") {
  const auto dir = tu::fresh_dir("harness_config");
  {
    std::ofstream out(dir / "config.json");
    out << R"({
      "corpus_root": "/data/corpus",
      "preset": "baseline4",
      "seed": 7,
      "clip_seconds": 0.5,
      "n_bins": 8,
      "epochs": 12,
      "threads": 2,
      "output_dir": "results",
      "mfcc": {"sample_rate": 8000, "n_ceps": 11, "window_step_s": 0.05},
      "tm": {"clauses_per_class": 100, "threshold": 15, "s": 5.0}
    })";
  }
  const ExperimentConfig cfg = load_config_file(dir / "config.json");
  CHECK(cfg.corpus_root == "/data/corpus");
  CHECK(cfg.keywords == keyword_preset("baseline4"));
  CHECK(cfg.seed == 7);
  CHECK(cfg.clip_seconds == 0.5);
  CHECK(cfg.n_bins == 8);
  CHECK(cfg.epochs == 12);
  CHECK(cfg.threads == 2);
  CHECK(cfg.output_dir == "results");
  CHECK(cfg.mfcc.sample_rate == 8000);
  CHECK(cfg.mfcc.n_ceps == 11);
  CHECK(cfg.mfcc.window_step_s == 0.05);
  CHECK(cfg.mfcc.window_length_s == 0.025);  // untouched default
  CHECK(cfg.tm.clauses_per_class == 100);
  CHECK(cfg.tm.threshold == 15);
  CHECK(cfg.tm.s == 5.0);
  CHECK(cfg.tm.n_states == 100);

  std::ofstream(dir / "unknown.json") << R"({"n_bin": 4})";
  CHECK_THROWS_AS(load_config_file(dir / "unknown.json"), ConfigError);
  std::ofstream(dir / "unknown_mfcc.json") << R"({"mfcc": {"window": 0.02}})";
  CHECK_THROWS_AS(load_config_file(dir / "unknown_mfcc.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(load_config_file(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config_file(dir / "absent.json"), ConfigError);
}

TEST_CASE("config echo carries settings but no host paths") {
  ExperimentConfig cfg = small_config("/tmp/xyz_private/out");
  cfg.corpus_root = "/home/someone/corpus";
  const std::string echoed = config_echo(cfg).dump();
  CHECK(echoed.find("corpus") == std::string::npos);
  CHECK(echoed.find("xyz_private") == std::string::npos);
  CHECK(echoed.find("\"seed\":42") != std::string::npos);
  CHECK(echoed.find("keywords") != std::string::npos);
}

TEST_CASE("xor dataset and selftest") {
  const EncodedDataset data = make_xor_dataset(3);
  REQUIRE(data.samples.size() == 12);
  REQUIRE(data.labels.size() == 12);
  CHECK(data.n_bits == 2);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const bool a = data.samples[i].get(0);
    const bool b = data.samples[i].get(1);
    CHECK(data.labels[i] == ((a != b) ? 1 : 0));
  }

  const XorSelftestResult result = xor_selftest(200, 7);
  CHECK(result.passed);
  CHECK(result.final_train_acc == 100.0);
  CHECK(result.epochs_run >= 1);
  CHECK(result.epochs_run <= 200);
}
