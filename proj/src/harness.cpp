#include "kws/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "kws/audio.hpp"
#include "kws/booleanize.hpp"
#include "kws/error.hpp"
#include "kws/model_io.hpp"

namespace kws {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kCacheVersion = 1;
constexpr char kFeatureMagic[4] = {'K', 'W', 'S', 'B'};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

struct CachePaths {
  fs::path dir;
  fs::path meta;
  fs::path manifest;
  fs::path encoder;
  fs::path raw_train;

  explicit CachePaths(const fs::path& output_dir)
      : dir(output_dir),
        meta(output_dir / "cache_meta.json"),
        manifest(output_dir / "split_manifest.json"),
        encoder(output_dir / "encoder.json"),
        raw_train(output_dir / "train_raw.bin") {}

  fs::path split_bin(const std::string& split) const {
    return dir / ("features_" + split + ".bin");
  }
};

ExperimentConfig resolve(const ExperimentConfig& config) {
  ExperimentConfig out = config;
  out.mfcc = config.mfcc.resolved();
  out.mfcc.validate();
  out.tm.validate();
  if (out.keywords.empty()) throw ConfigError("no keywords configured");
  if (out.clip_seconds <= 0.0) throw ConfigError("clip_seconds must be positive");
  if (out.epochs < 0) throw ConfigError("epochs must be non-negative");
  bits_for_bins(out.n_bins);
  return out;
}

json mfcc_json(const MfccConfig& m) {
  return {{"sample_rate", m.sample_rate},
          {"window_length_s", m.window_length_s},
          {"window_step_s", m.window_step_s},
          {"pre_emphasis", m.pre_emphasis},
          {"n_filters", m.n_filters},
          {"n_ceps", m.n_ceps},
          {"fft_size", m.fft_size}};
}

// The part of the config that decides what the feature cache contains.
// Training hyperparameters deliberately stay out: retraining with a new T
// or s on the same cache is valid.
json feature_config_json(const ExperimentConfig& cfg) {
  return {{"clip_seconds", cfg.clip_seconds},
          {"keywords", cfg.keywords},
          {"n_bins", cfg.n_bins},
          {"seed", cfg.seed},
          {"mfcc", mfcc_json(cfg.mfcc)}};
}

std::string content_hash(const json& feature_config, const DatasetSplit& split) {
  std::string canon = feature_config.dump();
  canon += '\n';
  const auto add = [&canon](const std::vector<ClipRef>& refs) {
    for (const auto& ref : refs) {
      canon += ref.source_id;
      canon += '|';
      canon += std::to_string(fs::file_size(ref.path));
      canon += '\n';
    }
  };
  add(split.train);
  add(split.test);
  add(split.validation);

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct CacheMeta {
  std::string hash;
  json feature_config;
  std::size_t raw_feature_count = 0;
  int bits_per_feature = 0;
  std::size_t total_booleans = 0;
  std::map<std::string, std::size_t> rows;
};

CacheMeta read_cache_meta(const CachePaths& paths) {
  std::ifstream in(paths.meta);
  if (!in) {
    throw StaleCacheError("no feature cache under " + paths.dir.string() +
                          "; run prepare first");
  }
  try {
    json doc;
    in >> doc;
    if (doc.at("format_version").get<int>() != kCacheVersion) {
      throw StaleCacheError("feature cache has an unknown version; run prepare again");
    }
    CacheMeta meta;
    meta.hash = doc.at("content_hash").get<std::string>();
    meta.feature_config = doc.at("feature_config");
    meta.raw_feature_count = doc.at("raw_feature_count").get<std::size_t>();
    meta.bits_per_feature = doc.at("bits_per_feature").get<int>();
    meta.total_booleans = doc.at("total_booleans").get<std::size_t>();
    for (const auto& [k, v] : doc.at("rows").items()) {
      meta.rows[k] = v.get<std::size_t>();
    }
    return meta;
  } catch (const json::exception& e) {
    throw ParseError("bad cache metadata " + paths.meta.string() + ": " + e.what());
  }
}

void require_fresh_cache(const CacheMeta& meta, const ExperimentConfig& resolved) {
  if (meta.feature_config != feature_config_json(resolved)) {
    throw StaleCacheError(
        "feature cache was built with a different configuration; run prepare again");
  }
}

void write_encoded(const EncodedDataset& data, int bits_per_feature, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature cache: " + path.string());
  const auto put_u32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write(kFeatureMagic, 4);
  put_u32(kCacheVersion);
  put_u32(static_cast<std::uint32_t>(data.n_bits));
  put_u32(static_cast<std::uint32_t>(data.samples.size()));
  put_u32(static_cast<std::uint32_t>(bits_per_feature));

  const std::size_t row_bytes = (data.n_bits + 7) / 8;
  std::vector<unsigned char> packed(row_bytes);
  for (std::size_t r = 0; r < data.samples.size(); ++r) {
    const int label = data.labels[r];
    const unsigned char lab[2] = {static_cast<unsigned char>(label),
                                  static_cast<unsigned char>(label >> 8)};
    out.write(reinterpret_cast<const char*>(lab), 2);
    std::fill(packed.begin(), packed.end(), 0);
    for (std::size_t i = 0; i < data.n_bits; ++i) {
      if (data.samples[r].get(i)) packed[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    }
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(row_bytes));
  }
}

EncodedDataset read_encoded(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StaleCacheError("missing feature cache " + path.string() + "; run prepare first");
  }
  char magic[4];
  unsigned char hdr[16];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw ParseError("feature cache has a bad header: " + path.string());
  }
  if (!in.read(reinterpret_cast<char*>(hdr), sizeof(hdr))) {
    throw ParseError("feature cache truncated: " + path.string());
  }
  const auto get_u32 = [&hdr](int off) {
    return static_cast<std::uint32_t>(hdr[off]) | (static_cast<std::uint32_t>(hdr[off + 1]) << 8) |
           (static_cast<std::uint32_t>(hdr[off + 2]) << 16) |
           (static_cast<std::uint32_t>(hdr[off + 3]) << 24);
  };
  if (get_u32(0) != kCacheVersion) {
    throw ParseError("feature cache has an unknown version: " + path.string());
  }
  EncodedDataset data;
  data.n_bits = get_u32(4);
  const std::uint32_t rows = get_u32(8);

  const std::size_t row_bytes = (data.n_bits + 7) / 8;
  std::vector<unsigned char> packed(row_bytes);
  data.samples.reserve(rows);
  data.labels.reserve(rows);
  for (std::uint32_t r = 0; r < rows; ++r) {
    unsigned char lab[2];
    if (!in.read(reinterpret_cast<char*>(lab), 2) ||
        !in.read(reinterpret_cast<char*>(packed.data()),
                 static_cast<std::streamsize>(row_bytes))) {
      throw ParseError("feature cache truncated: " + path.string());
    }
    data.labels.push_back(lab[0] | (lab[1] << 8));
    BitVector bits(data.n_bits);
    for (std::size_t i = 0; i < data.n_bits; ++i) {
      if ((packed[i / 8] >> (i % 8)) & 1u) bits.set(i, true);
    }
    data.samples.push_back(std::move(bits));
  }
  return data;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load(std::memory_order_relaxed)) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// MFCC matrix for every clip of one split, one flattened row per clip,
// rows in the split's (sorted) order.
Matrix extract_split(const std::vector<ClipRef>& refs, const ExperimentConfig& cfg,
                     const std::map<std::string, int>& class_index, std::vector<int>& labels,
                     const fs::path& dump_dir) {
  const int target_samples =
      static_cast<int>(std::llround(cfg.clip_seconds * cfg.mfcc.sample_rate));
  const int window = cfg.mfcc.window_samples();
  const int step = cfg.mfcc.step_samples();
  const long long frames =
      target_samples >= window ? 1 + (static_cast<long long>(target_samples) - window) / step : 1;
  const std::size_t raw_features =
      static_cast<std::size_t>(frames) * static_cast<std::size_t>(cfg.mfcc.n_ceps);

  Matrix rows(refs.size(), raw_features);
  labels.resize(refs.size());
  parallel_for(refs.size(), cfg.threads, [&](std::size_t i) {
    const ClipRef& ref = refs[i];
    AudioClip clip = read_wav(ref.path);
    if (clip.sample_rate != cfg.mfcc.sample_rate) {
      throw UnsupportedFormat("clip " + ref.source_id + " has sample rate " +
                              std::to_string(clip.sample_rate) + ", configured rate is " +
                              std::to_string(cfg.mfcc.sample_rate));
    }
    clip.source_id = ref.source_id;
    normalize_length(clip, cfg.clip_seconds);
    const Matrix features = extract_mfcc(clip, cfg.mfcc);
    if (features.data.size() != raw_features) {
      throw Error("unexpected feature count for " + ref.source_id);
    }
    std::memcpy(rows.row(i), features.data.data(), raw_features * sizeof(double));
    labels[i] = class_index.at(ref.label);
    if (!dump_dir.empty()) {
      std::string flat_name = ref.source_id;
      for (char& c : flat_name) {
        if (c == '/' || c == '\\') c = '_';
      }
      write_matrix_csv(features, dump_dir / (flat_name + ".csv"));
      write_matrix_bin(features, dump_dir / (flat_name + ".bin"));
    }
  });
  return rows;
}

EncodedDataset encode_split(const Matrix& raw, const std::vector<int>& labels,
                            const QuantileEncoder& encoder) {
  EncodedDataset data;
  data.n_bits = encoder.total_booleans();
  data.samples.reserve(raw.rows);
  data.labels = labels;
  for (std::size_t r = 0; r < raw.rows; ++r) {
    data.samples.push_back(encoder.transform({raw.row(r), raw.cols}));
  }
  return data;
}

json epoch_trace_json(const std::vector<EpochStats>& trace) {
  json arr = json::array();
  for (const auto& e : trace) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_acc", e.train_acc},
                   {"test_acc", e.test_acc},
                   {"val_acc", e.val_acc},
                   {"clause_evaluations", e.ops.clause_evaluations},
                   {"ta_updates", e.ops.ta_updates},
                   {"feedback_events", e.ops.feedback_events}});
  }
  return arr;
}

void write_epoch_trace_csv(const std::vector<EpochStats>& trace, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write epoch trace: " + path.string());
  out << "epoch,train_acc,test_acc,val_acc,clause_evaluations,ta_updates,feedback_events\n";
  for (const auto& e : trace) {
    out << e.epoch << ',' << fmt("%.4f", e.train_acc) << ',' << fmt("%.4f", e.test_acc) << ','
        << fmt("%.4f", e.val_acc) << ',' << e.ops.clause_evaluations << ',' << e.ops.ta_updates
        << ',' << e.ops.feedback_events << '\n';
  }
}

struct SweepRow {
  std::string value_label;
  double numeric_value = 0.0;
  std::size_t keyword_count = 0;
  bool ok = false;
  std::string message;
  int bits_per_feature = 0;
  MetricsRecord metrics;
};

void apply_sweep_value(ExperimentConfig& cfg, const std::string& parameter,
                       const std::string& value, SweepRow& row) {
  const auto as_double = [&value, &parameter]() {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' is not a number for parameter " +
                        parameter);
    }
  };
  const auto as_int = [&]() {
    const double v = as_double();
    if (v != std::floor(v)) {
      throw ConfigError("sweep value '" + value + "' must be an integer for parameter " +
                        parameter);
    }
    return static_cast<int>(v);
  };

  if (parameter == "window_length_s") {
    cfg.mfcc.window_length_s = as_double();
    cfg.mfcc.fft_size = 0;  // re-pick a power of two that fits the new window
    row.numeric_value = cfg.mfcc.window_length_s;
  } else if (parameter == "window_step_s") {
    cfg.mfcc.window_step_s = as_double();
    row.numeric_value = cfg.mfcc.window_step_s;
  } else if (parameter == "n_bins") {
    cfg.n_bins = as_int();
    row.numeric_value = cfg.n_bins;
  } else if (parameter == "clauses_per_class") {
    cfg.tm.clauses_per_class = as_int();
    row.numeric_value = cfg.tm.clauses_per_class;
  } else if (parameter == "T" || parameter == "threshold") {
    cfg.tm.threshold = as_int();
    row.numeric_value = cfg.tm.threshold;
  } else if (parameter == "s") {
    cfg.tm.s = as_double();
    row.numeric_value = cfg.tm.s;
  } else if (parameter == "keywords") {
    cfg.keywords = parse_keywords_arg(value);
    row.keyword_count = cfg.keywords.size();
    row.numeric_value = static_cast<double>(cfg.keywords.size());
  } else {
    throw ConfigError("unknown sweep parameter: " + parameter);
  }
}

std::string sanitize_component(const std::string& value) {
  std::string out;
  for (char c : value) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

}  // namespace

std::vector<std::string> keyword_preset(const std::string& name) {
  if (name == "baseline3") return {"yes", "no", "stop"};
  if (name == "baseline4") return {"yes", "no", "stop", "seven"};
  if (name == "similar4") return {"yes", "no", "stop", "go"};
  if (name == "nine") {
    return {"yes", "no", "stop", "seven", "zero", "nine", "five", "one", "two"};
  }
  throw ConfigError("unknown keyword preset: " + name);
}

std::vector<std::string> parse_keywords_arg(const std::string& arg) {
  if (arg.empty()) throw ConfigError("empty keyword list");
  if (arg.find(',') == std::string::npos) {
    // A single token is either a preset name or a one-keyword list.
    try {
      return keyword_preset(arg);
    } catch (const ConfigError&) {
      return {arg};
    }
  }
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= arg.size()) {
    const std::size_t comma = arg.find(',', start);
    const std::string token =
        arg.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (token.empty()) throw ConfigError("empty keyword in list: " + arg);
    out.push_back(token);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path.string() + ": " + e.what());
  }

  ExperimentConfig cfg;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "corpus_root") cfg.corpus_root = value.get<std::string>();
      else if (key == "keywords") cfg.keywords = value.get<std::vector<std::string>>();
      else if (key == "preset") cfg.keywords = keyword_preset(value.get<std::string>());
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "clip_seconds") cfg.clip_seconds = value.get<double>();
      else if (key == "n_bins") cfg.n_bins = value.get<int>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "threads") cfg.threads = value.get<int>();
      else if (key == "output_dir") cfg.output_dir = value.get<std::string>();
      else if (key == "dump_mfcc_dir") cfg.dump_mfcc_dir = value.get<std::string>();
      else if (key == "mfcc") {
        for (const auto& [mk, mv] : value.items()) {
          if (mk == "sample_rate") cfg.mfcc.sample_rate = mv.get<int>();
          else if (mk == "window_length_s") cfg.mfcc.window_length_s = mv.get<double>();
          else if (mk == "window_step_s") cfg.mfcc.window_step_s = mv.get<double>();
          else if (mk == "pre_emphasis") cfg.mfcc.pre_emphasis = mv.get<double>();
          else if (mk == "n_filters") cfg.mfcc.n_filters = mv.get<int>();
          else if (mk == "n_ceps") cfg.mfcc.n_ceps = mv.get<int>();
          else if (mk == "fft_size") cfg.mfcc.fft_size = mv.get<int>();
          else throw ConfigError("unknown mfcc config key: " + mk);
        }
      } else if (key == "tm") {
        for (const auto& [tk, tv] : value.items()) {
          if (tk == "clauses_per_class") cfg.tm.clauses_per_class = tv.get<int>();
          else if (tk == "threshold") cfg.tm.threshold = tv.get<int>();
          else if (tk == "s") cfg.tm.s = tv.get<double>();
          else if (tk == "n_states") cfg.tm.n_states = tv.get<int>();
          else throw ConfigError("unknown tm config key: " + tk);
        }
      } else {
        throw ConfigError("unknown config key: " + key);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path.string() + ": " + e.what());
  }
  return cfg;
}

json config_echo(const ExperimentConfig& config) {
  return {{"keywords", config.keywords},
          {"seed", config.seed},
          {"clip_seconds", config.clip_seconds},
          {"n_bins", config.n_bins},
          {"epochs", config.epochs},
          {"mfcc", mfcc_json(config.mfcc)},
          {"tm",
           {{"clauses_per_class", config.tm.clauses_per_class},
            {"threshold", config.tm.threshold},
            {"s", config.tm.s},
            {"n_states", config.tm.n_states}}}};
}

PrepareResult cmd_prepare(const ExperimentConfig& config) {
  const ExperimentConfig cfg = resolve(config);
  if (!fs::is_directory(cfg.corpus_root)) {
    throw MissingClassError("corpus root does not exist: " + cfg.corpus_root);
  }
  const DatasetSplit split = build_split(cfg.corpus_root, cfg.keywords, cfg.seed);

  const json fc = feature_config_json(cfg);
  const std::string hash = content_hash(fc, split);
  const CachePaths paths{cfg.output_dir};

  if (fs::exists(paths.meta)) {
    try {
      const CacheMeta meta = read_cache_meta(paths);
      bool complete = meta.hash == hash && fs::exists(paths.manifest) &&
                      fs::exists(paths.encoder) && fs::exists(paths.raw_train);
      for (const char* name : {"train", "test", "validation"}) {
        complete = complete && fs::exists(paths.split_bin(name));
      }
      if (complete) {
        PrepareResult result;
        result.skipped = true;
        result.raw_feature_count = meta.raw_feature_count;
        result.total_booleans = meta.total_booleans;
        result.train_rows = meta.rows.at("train");
        result.test_rows = meta.rows.at("test");
        result.validation_rows = meta.rows.at("validation");
        return result;
      }
    } catch (const Error&) {
      // Unreadable metadata: fall through and rebuild the cache.
    }
  }

  fs::create_directories(paths.dir);
  fs::path dump_dir;
  if (!cfg.dump_mfcc_dir.empty()) {
    dump_dir = cfg.dump_mfcc_dir;
    fs::create_directories(dump_dir);
  }
  std::vector<fs::path> written;
  try {
    std::vector<int> train_labels, test_labels, val_labels;
    const Matrix train_raw =
        extract_split(split.train, cfg, split.class_index, train_labels, dump_dir);
    const Matrix test_raw =
        extract_split(split.test, cfg, split.class_index, test_labels, dump_dir);
    const Matrix val_raw =
        extract_split(split.validation, cfg, split.class_index, val_labels, dump_dir);

    const QuantileEncoder encoder = QuantileEncoder::fit(train_raw, cfg.n_bins);

    written.push_back(paths.raw_train);
    write_matrix_bin(train_raw, paths.raw_train);
    written.push_back(paths.encoder);
    save_encoder(encoder, paths.encoder);
    written.push_back(paths.manifest);
    save_split_manifest(split, paths.manifest);

    const struct {
      const char* name;
      const Matrix* raw;
      const std::vector<int>* labels;
    } splits[] = {{"train", &train_raw, &train_labels},
                  {"test", &test_raw, &test_labels},
                  {"validation", &val_raw, &val_labels}};
    for (const auto& sp : splits) {
      written.push_back(paths.split_bin(sp.name));
      write_encoded(encode_split(*sp.raw, *sp.labels, encoder), encoder.bits_per_feature(),
                    paths.split_bin(sp.name));
    }

    const json meta = {{"format_version", kCacheVersion},
                       {"content_hash", hash},
                       {"feature_config", fc},
                       {"raw_feature_count", train_raw.cols},
                       {"bits_per_feature", encoder.bits_per_feature()},
                       {"total_booleans", encoder.total_booleans()},
                       {"rows",
                        {{"train", train_raw.rows},
                         {"test", test_raw.rows},
                         {"validation", val_raw.rows}}}};
    written.push_back(paths.meta);
    {
      std::ofstream out(paths.meta);
      if (!out) throw Error("cannot write cache metadata: " + paths.meta.string());
      out << meta.dump(2) << '\n';
    }

    PrepareResult result;
    result.raw_feature_count = train_raw.cols;
    result.total_booleans = encoder.total_booleans();
    result.train_rows = train_raw.rows;
    result.test_rows = test_raw.rows;
    result.validation_rows = val_raw.rows;
    return result;
  } catch (...) {
    // Never leave a half-written cache behind.
    for (const auto& p : written) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    throw;
  }
}

TrainResult cmd_train(const ExperimentConfig& config) {
  const ExperimentConfig cfg = resolve(config);
  const CachePaths paths{cfg.output_dir};
  const CacheMeta meta = read_cache_meta(paths);
  require_fresh_cache(meta, cfg);

  const QuantileEncoder encoder = load_encoder(paths.encoder);
  const EncodedDataset train = read_encoded(paths.split_bin("train"));
  const EncodedDataset test = read_encoded(paths.split_bin("test"));
  const EncodedDataset val = read_encoded(paths.split_bin("validation"));

  TsetlinMachine machine(static_cast<int>(cfg.keywords.size()), meta.total_booleans, cfg.tm);
  Rng rng(cfg.seed);

  std::vector<EpochStats> trace;
  trace.reserve(static_cast<std::size_t>(cfg.epochs));
  const auto t0 = std::chrono::steady_clock::now();
  machine.fit(train, &test, &val, cfg.epochs, rng,
              [&trace](const EpochStats& stats) { trace.push_back(stats); });

  MetricsRecord metrics;
  if (!trace.empty()) {
    metrics.train_acc = trace.back().train_acc;
    metrics.test_acc = trace.back().test_acc;
    metrics.val_acc = trace.back().val_acc;
  } else {
    metrics.train_acc = machine.accuracy(train);
    metrics.test_acc = machine.accuracy(test);
    metrics.val_acc = machine.accuracy(val);
  }
  const auto t1 = std::chrono::steady_clock::now();
  metrics.overfit_gap = metrics.train_acc - metrics.test_acc;
  metrics.epoch_trace = trace;
  metrics.ops = machine.ops();
  metrics.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
  metrics.feature_count = meta.raw_feature_count;
  metrics.total_booleans = meta.total_booleans;

  TrainResult result;
  result.model_path = paths.dir / "model.json";
  result.metrics_path = paths.dir / "metrics.json";
  result.trace_path = paths.dir / "epoch_trace.csv";

  save_model(TrainedModel{cfg.keywords, encoder, std::move(machine)}, result.model_path);
  write_epoch_trace_csv(trace, result.trace_path);

  const json doc = {{"config", config_echo(cfg)},
                    {"train_acc", metrics.train_acc},
                    {"test_acc", metrics.test_acc},
                    {"val_acc", metrics.val_acc},
                    {"overfit_gap", metrics.overfit_gap},
                    {"epoch_trace", epoch_trace_json(trace)},
                    {"op_counters",
                     {{"clause_evaluations", metrics.ops.clause_evaluations},
                      {"ta_updates", metrics.ops.ta_updates},
                      {"feedback_events", metrics.ops.feedback_events}}},
                    {"wall_time_s", metrics.wall_time_s},
                    {"feature_count", metrics.feature_count},
                    {"total_booleans", metrics.total_booleans}};
  std::ofstream out(result.metrics_path);
  if (!out) throw Error("cannot write metrics: " + result.metrics_path.string());
  out << doc.dump(2) << '\n';

  result.metrics = std::move(metrics);
  return result;
}

EvalResult cmd_eval(const ExperimentConfig& config, const std::string& split_name,
                    const std::filesystem::path& model_path) {
  if (split_name != "train" && split_name != "test" && split_name != "validation") {
    throw ConfigError("split must be train, test or validation, got: " + split_name);
  }
  const ExperimentConfig cfg = resolve(config);
  const CachePaths paths{cfg.output_dir};
  const CacheMeta meta = read_cache_meta(paths);

  const fs::path mpath = model_path.empty() ? paths.dir / "model.json" : model_path;
  const TrainedModel model = load_model(mpath);

  const auto cache_keywords = meta.feature_config.at("keywords").get<std::vector<std::string>>();
  if (model.keywords != cache_keywords) {
    throw ModelDataMismatch("model keywords do not match the cached dataset");
  }
  const EncodedDataset data = read_encoded(paths.split_bin(split_name));
  if (data.n_bits != model.machine.n_features()) {
    throw ModelDataMismatch("model expects " + std::to_string(model.machine.n_features()) +
                            " Booleans per clip, cache holds " + std::to_string(data.n_bits));
  }

  const auto k = model.keywords.size();
  EvalResult result;
  result.split = split_name;
  result.keywords = model.keywords;
  result.confusion.assign(k, std::vector<std::size_t>(k, 0));

  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const int pred = model.machine.predict(data.samples[i]);
    const int truth = data.labels[i];
    ++result.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    if (pred == truth) ++correct;
  }
  result.accuracy =
      data.samples.empty() ? 0.0
                           : 100.0 * static_cast<double>(correct) /
                                 static_cast<double>(data.samples.size());

  result.precision.assign(k, 0.0);
  result.recall.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t r = 0; r < k; ++r) {
      predicted += result.confusion[r][c];
      actual += result.confusion[c][r];
    }
    if (predicted > 0) {
      result.precision[c] =
          static_cast<double>(result.confusion[c][c]) / static_cast<double>(predicted);
    }
    if (actual > 0) {
      result.recall[c] =
          static_cast<double>(result.confusion[c][c]) / static_cast<double>(actual);
    }
  }

  result.report_path = paths.dir / ("eval_" + split_name + ".json");
  result.confusion_path = paths.dir / ("confusion_" + split_name + ".csv");

  json per_class = json::array();
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t support = 0;
    for (std::size_t p = 0; p < k; ++p) support += result.confusion[c][p];
    per_class.push_back({{"keyword", model.keywords[c]},
                         {"precision", result.precision[c]},
                         {"recall", result.recall[c]},
                         {"support", support}});
  }
  const json doc = {{"split", split_name},
                    {"accuracy", result.accuracy},
                    {"per_class", per_class}};
  std::ofstream rep(result.report_path);
  if (!rep) throw Error("cannot write eval report: " + result.report_path.string());
  rep << doc.dump(2) << '\n';

  std::ofstream conf(result.confusion_path);
  if (!conf) throw Error("cannot write confusion matrix: " + result.confusion_path.string());
  conf << "true_keyword";
  for (const auto& kw : model.keywords) conf << ',' << csv_field(kw);
  conf << '\n';
  for (std::size_t r = 0; r < k; ++r) {
    conf << csv_field(model.keywords[r]);
    for (std::size_t c = 0; c < k; ++c) conf << ',' << result.confusion[r][c];
    conf << '\n';
  }
  return result;
}

std::filesystem::path cmd_sweep(const ExperimentConfig& base, const std::string& parameter,
                                const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");

  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (const auto& value : values) {
    SweepRow row;
    row.value_label = value;
    ExperimentConfig cfg = base;
    // A value that does not parse at all is a usage error and aborts the
    // sweep; a point that fails while running becomes an error row.
    apply_sweep_value(cfg, parameter, value, row);
    cfg.output_dir = (fs::path(base.output_dir) / ("sweep_" + parameter) /
                      sanitize_component(value))
                         .string();
    try {
      cmd_prepare(cfg);
      const TrainResult trained = cmd_train(cfg);
      row.ok = true;
      row.metrics = trained.metrics;
      row.bits_per_feature = bits_for_bins(cfg.n_bins);
    } catch (const Error& e) {
      row.ok = false;
      row.message = e.what();
    }
    rows.push_back(std::move(row));
  }

  const bool by_keywords = parameter == "keywords";
  std::sort(rows.begin(), rows.end(), [by_keywords](const SweepRow& a, const SweepRow& b) {
    if (by_keywords && a.keyword_count != b.keyword_count) {
      return a.keyword_count < b.keyword_count;
    }
    if (a.numeric_value != b.numeric_value) return a.numeric_value < b.numeric_value;
    return a.value_label < b.value_label;
  });

  fs::create_directories(base.output_dir);
  const fs::path csv_path = fs::path(base.output_dir) / ("sweep_" + parameter + ".csv");
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot write sweep table: " + csv_path.string());
  out << "parameter,value,status,message,train_acc,test_acc,val_acc,overfit_gap,"
         "feature_count,total_booleans,bits_per_feature,clause_evaluations,ta_updates,"
         "feedback_events,wall_time_s\n";
  for (const auto& row : rows) {
    out << csv_field(parameter) << ',' << csv_field(row.value_label) << ','
        << (row.ok ? "ok" : "error") << ',' << csv_field(row.message) << ',';
    if (row.ok) {
      const MetricsRecord& m = row.metrics;
      out << fmt("%.4f", m.train_acc) << ',' << fmt("%.4f", m.test_acc) << ','
          << fmt("%.4f", m.val_acc) << ',' << fmt("%.4f", m.overfit_gap) << ','
          << m.feature_count << ',' << m.total_booleans << ',' << row.bits_per_feature << ','
          << m.ops.clause_evaluations << ',' << m.ops.ta_updates << ','
          << m.ops.feedback_events << ',' << fmt("%.3f", m.wall_time_s);
    } else {
      out << ",,,,,,,,,,";
    }
    out << '\n';
  }
  return csv_path;
}

FeatureStatsResult cmd_feature_stats(const ExperimentConfig& config) {
  const ExperimentConfig cfg = resolve(config);
  const CachePaths paths{cfg.output_dir};
  const CacheMeta meta = read_cache_meta(paths);
  require_fresh_cache(meta, cfg);

  const Matrix raw = read_matrix_bin(paths.raw_train);

  // Streaming mean/variance (Welford), one state per feature column.
  std::vector<double> mean(raw.cols, 0.0);
  std::vector<double> m2(raw.cols, 0.0);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    const double* row = raw.row(r);
    const double n = static_cast<double>(r + 1);
    for (std::size_t c = 0; c < raw.cols; ++c) {
      const double delta = row[c] - mean[c];
      mean[c] += delta / n;
      m2[c] += delta * (row[c] - mean[c]);
    }
  }

  FeatureStatsResult result;
  result.feature_count = raw.cols;
  result.csv_path = paths.dir / "feature_stats.csv";
  std::ofstream out(result.csv_path);
  if (!out) throw Error("cannot write feature stats: " + result.csv_path.string());
  out << "feature_index,mean,variance,zero_variance\n";
  for (std::size_t c = 0; c < raw.cols; ++c) {
    const double variance = raw.rows > 0 ? m2[c] / static_cast<double>(raw.rows) : 0.0;
    const bool degenerate = variance == 0.0;
    if (degenerate) ++result.zero_variance_count;
    out << c << ',' << fmt("%.17g", mean[c]) << ',' << fmt("%.17g", variance) << ','
        << (degenerate ? 1 : 0) << '\n';
  }
  return result;
}

EncodedDataset make_xor_dataset(int copies_per_pattern) {
  EncodedDataset data;
  data.n_bits = 2;
  for (int copy = 0; copy < copies_per_pattern; ++copy) {
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        BitVector bits(2);
        bits.set(0, a != 0);
        bits.set(1, b != 0);
        data.samples.push_back(bits);
        data.labels.push_back(a ^ b);
      }
    }
  }
  return data;
}

XorSelftestResult xor_selftest(int max_epochs, std::uint64_t seed) {
  TmParams params;
  params.clauses_per_class = 20;
  params.threshold = 10;
  params.s = 3.9;
  params.n_states = 100;

  const EncodedDataset data = make_xor_dataset(100);
  TsetlinMachine machine(2, 2, params);
  Rng rng(seed);

  XorSelftestResult result;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    machine.fit(data, nullptr, nullptr, 1, rng,
                [&result](const EpochStats& stats) { result.final_train_acc = stats.train_acc; });
    result.epochs_run = epoch;
    if (result.final_train_acc == 100.0) {
      result.passed = true;
      break;
    }
  }
  return result;
}

}  // namespace kws
