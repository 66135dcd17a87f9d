#pragma once

#include <stdexcept>
#include <string>

namespace kws {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flag/config values supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid input (malformed WAV header, corrupt JSON, bad base64).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input the pipeline deliberately does not handle
// (compressed WAV, multichannel audio, non-16-bit samples).
class UnsupportedFormat : public Error {
 public:
  using Error::Error;
};

// A requested keyword directory does not exist in the corpus.
class MissingClassError : public Error {
 public:
  using Error::Error;
};

// A keyword directory exists but contains no WAV files.
class EmptyClassError : public Error {
 public:
  using Error::Error;
};

// Too few rows to fit the requested number of quantile bins.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// A feature vector's length does not match what the encoder was fit on.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Model file declares a format version this build does not read.
class ModelVersionError : public Error {
 public:
  using Error::Error;
};

// Model and dataset disagree (different keyword sets or feature widths).
class ModelDataMismatch : public Error {
 public:
  using Error::Error;
};

// Feature cache on disk was produced by a different configuration.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

}  // namespace kws
