#include "kws/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace kws {

namespace {

std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::int16_t read_s16le(const unsigned char* p) {
  return static_cast<std::int16_t>(read_u16le(p));
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw ParseError("not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  std::uint16_t format_tag = 0, channels = 0, bits_per_sample = 0;
  std::uint32_t sample_rate = 0;
  std::size_t data_offset = 0, data_size = 0;
  bool have_data = false;

  // Walk the chunk list, skipping anything that is not fmt or data.
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_size = read_u32le(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_size < 16 || body + 16 > bytes.size()) {
        throw ParseError("truncated fmt chunk: " + path.string());
      }
      format_tag = read_u16le(bytes.data() + body);
      channels = read_u16le(bytes.data() + body + 2);
      sample_rate = read_u32le(bytes.data() + body + 4);
      bits_per_sample = read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_offset = body;
      data_size = chunk_size;
      have_data = true;
    }
    // Chunks are word-aligned; odd sizes carry one pad byte.
    pos = body + chunk_size + (chunk_size & 1);
  }

  if (!have_fmt) throw ParseError("missing fmt chunk: " + path.string());
  if (!have_data) throw ParseError("missing data chunk: " + path.string());
  if (format_tag != 1) {
    throw UnsupportedFormat("only uncompressed PCM is supported (format tag " +
                            std::to_string(format_tag) + "): " + path.string());
  }
  if (channels != 1) {
    throw UnsupportedFormat("only mono audio is supported (" +
                            std::to_string(channels) + " channels): " + path.string());
  }
  if (bits_per_sample != 16) {
    throw UnsupportedFormat("only 16-bit samples are supported (" +
                            std::to_string(bits_per_sample) + " bits): " + path.string());
  }
  if (sample_rate == 0) throw ParseError("zero sample rate: " + path.string());
  if (data_offset + data_size > bytes.size()) {
    throw ParseError("data chunk extends past end of file: " + path.string());
  }
  if (data_size % 2 != 0) {
    throw ParseError("data chunk size is not a whole number of samples: " + path.string());
  }

  AudioClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  clip.source_id = path.filename().string();
  clip.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = read_s16le(bytes.data() + data_offset + 2 * i) / 32768.0;
  }
  return clip;
}

void normalize_length(AudioClip& clip, double seconds) {
  const auto target = static_cast<std::size_t>(
      std::llround(seconds * static_cast<double>(clip.sample_rate)));
  clip.samples.resize(target, 0.0);
}

std::uint64_t stable_hash64(const std::string& source_id, std::uint64_t seed) {
  // FNV-1a 64 over the id bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : source_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer with the seed folded in.
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int split_bucket(const std::string& source_id, std::uint64_t seed) {
  return static_cast<int>(stable_hash64(source_id, seed) % 10);
}

DatasetSplit build_split(const std::filesystem::path& corpus_root,
                         const std::vector<std::string>& keywords,
                         std::uint64_t seed) {
  DatasetSplit split;
  split.keywords = keywords;
  split.seed = seed;
  for (std::size_t i = 0; i < keywords.size(); ++i) {
    split.class_index[keywords[i]] = static_cast<int>(i);
  }

  for (const auto& keyword : keywords) {
    const auto dir = corpus_root / keyword;
    if (!std::filesystem::is_directory(dir)) {
      throw MissingClassError("no directory for keyword '" + keyword +
                              "' under " + corpus_root.string());
    }
    std::vector<ClipRef> refs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
      ClipRef ref;
      ref.source_id = keyword + "/" + entry.path().filename().string();
      ref.path = entry.path();
      ref.label = keyword;
      refs.push_back(std::move(ref));
    }
    if (refs.empty()) {
      throw EmptyClassError("keyword '" + keyword + "' has no WAV files under " +
                            dir.string());
    }
    for (auto& ref : refs) {
      const int bucket = split_bucket(ref.source_id, seed);
      if (bucket <= 7) {
        split.train.push_back(std::move(ref));
      } else if (bucket == 8) {
        split.test.push_back(std::move(ref));
      } else {
        split.validation.push_back(std::move(ref));
      }
    }
  }

  const auto by_id = [](const ClipRef& a, const ClipRef& b) {
    return a.source_id < b.source_id;
  };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  std::sort(split.validation.begin(), split.validation.end(), by_id);
  return split;
}

void save_split_manifest(const DatasetSplit& split, const std::filesystem::path& path) {
  nlohmann::json assignments = nlohmann::json::object();
  for (const auto& ref : split.train) assignments[ref.source_id] = "train";
  for (const auto& ref : split.test) assignments[ref.source_id] = "test";
  for (const auto& ref : split.validation) assignments[ref.source_id] = "validation";
  const nlohmann::json doc = {
      {"seed", split.seed},
      {"keywords", split.keywords},
      {"assignments", assignments},
  };
  std::ofstream out(path);
  if (!out) throw Error("cannot write split manifest: " + path.string());
  out << doc.dump(2) << '\n';
}

SplitManifest load_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open split manifest: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
    SplitManifest manifest;
    manifest.seed = doc.at("seed").get<std::uint64_t>();
    manifest.keywords = doc.at("keywords").get<std::vector<std::string>>();
    for (const auto& [id, name] : doc.at("assignments").items()) {
      manifest.assignments[id] = name.get<std::string>();
    }
    return manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad split manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace kws
