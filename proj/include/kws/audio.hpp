#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kws/error.hpp"

namespace kws {

// One decoded mono clip. Amplitudes are int16 samples scaled by 1/32768,
// so every value lies in [-1.0, 1.0).
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
  std::string source_id;
};

// Reference to a corpus file; audio is loaded lazily by whoever needs it.
struct ClipRef {
  std::string source_id;  // "<keyword>/<filename>", stable across machines
  std::filesystem::path path;
  std::string label;
};

struct DatasetSplit {
  std::vector<ClipRef> train;
  std::vector<ClipRef> test;
  std::vector<ClipRef> validation;
  std::vector<std::string> keywords;        // class index = position here
  std::map<std::string, int> class_index;
  std::uint64_t seed = 0;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> keywords;
  std::map<std::string, std::string> assignments;  // source_id -> split name
};

// Parses a RIFF/WAVE file. Only uncompressed PCM, mono, 16-bit is accepted;
// anything else well-formed raises UnsupportedFormat, structural damage
// raises ParseError.
AudioClip read_wav(const std::filesystem::path& path);

// Forces the clip to exactly round(seconds * sample_rate) samples by
// zero-padding or truncating at the end.
void normalize_length(AudioClip& clip, double seconds = 1.0);

// Stable 64-bit hash used for split bucketing: FNV-1a over the id bytes,
// then a splitmix64 finalizer folding in the seed. Pure function of its
// arguments, identical on every platform.
std::uint64_t stable_hash64(const std::string& source_id, std::uint64_t seed);

// Bucket in [0, 10): 0-7 train, 8 test, 9 validation.
int split_bucket(const std::string& source_id, std::uint64_t seed);

// Scans <corpus_root>/<keyword>/*.wav for each requested keyword and
// assigns every file to train/test/validation by hash bucket. Membership
// depends only on (source_id, seed), never on directory iteration order;
// each split list is sorted by source_id.
DatasetSplit build_split(const std::filesystem::path& corpus_root,
                         const std::vector<std::string>& keywords,
                         std::uint64_t seed);

void save_split_manifest(const DatasetSplit& split,
                         const std::filesystem::path& path);
SplitManifest load_split_manifest(const std::filesystem::path& path);

}  // namespace kws
