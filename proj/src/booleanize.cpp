#include "kws/booleanize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kws/error.hpp"

namespace kws {

int bits_for_bins(int n_bins) {
  if (n_bins < 2) throw ConfigError("n_bins must be at least 2");
  int bits = 0;
  while ((1 << bits) < n_bins) ++bits;
  return bits;
}

std::vector<double> flatten_mfcc(const Matrix& features) {
  return features.data;
}

QuantileEncoder QuantileEncoder::fit(const Matrix& train_features, int n_bins) {
  const int bits = bits_for_bins(n_bins);
  if (train_features.rows < static_cast<std::size_t>(n_bins)) {
    throw InsufficientDataError("need at least " + std::to_string(n_bins) +
                                " rows to fit " + std::to_string(n_bins) +
                                " bins, got " + std::to_string(train_features.rows));
  }

  QuantileEncoder enc;
  enc.n_bins_ = n_bins;
  enc.bits_per_feature_ = bits;
  enc.boundaries_.resize(train_features.cols);

  const std::size_t rows = train_features.rows;
  std::vector<double> column(rows);
  for (std::size_t c = 0; c < train_features.cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = train_features.at(r, c);
    std::sort(column.begin(), column.end());
    auto& bounds = enc.boundaries_[c];
    bounds.resize(static_cast<std::size_t>(n_bins) - 1);
    for (int j = 1; j < n_bins; ++j) {
      // Nearest-rank quantile: 1-based position ceil(rows * j / n_bins).
      const std::size_t rank =
          (rows * static_cast<std::size_t>(j) + static_cast<std::size_t>(n_bins) - 1) /
          static_cast<std::size_t>(n_bins);
      bounds[static_cast<std::size_t>(j) - 1] = column[rank - 1];
    }
  }
  return enc;
}

int QuantileEncoder::bin_index(std::size_t feature, double value) const {
  const auto& bounds = boundaries_[feature];
  // Boundaries are sorted, so "count strictly less than value" is a
  // lower_bound offset.
  return static_cast<int>(std::lower_bound(bounds.begin(), bounds.end(), value) -
                          bounds.begin());
}

BitVector QuantileEncoder::transform(std::span<const double> features) const {
  if (features.size() != n_features()) {
    throw DimensionError("encoder fit on " + std::to_string(n_features()) +
                         " features, got " + std::to_string(features.size()));
  }
  BitVector bits(n_features() * static_cast<std::size_t>(bits_per_feature_));
  std::size_t pos = 0;
  for (std::size_t f = 0; f < features.size(); ++f) {
    const int bin = bin_index(f, features[f]);
    for (int b = bits_per_feature_ - 1; b >= 0; --b) {
      bits.set(pos++, (bin >> b) & 1);
    }
  }
  return bits;
}

QuantileEncoder QuantileEncoder::from_parts(int n_bins,
                                            std::vector<std::vector<double>> boundaries) {
  const int bits = bits_for_bins(n_bins);
  for (const auto& bounds : boundaries) {
    if (bounds.size() != static_cast<std::size_t>(n_bins) - 1) {
      throw ParseError("boundary list length does not match n_bins");
    }
    if (!std::is_sorted(bounds.begin(), bounds.end())) {
      throw ParseError("boundary list is not sorted");
    }
  }
  QuantileEncoder enc;
  enc.n_bins_ = n_bins;
  enc.bits_per_feature_ = bits;
  enc.boundaries_ = std::move(boundaries);
  return enc;
}

void save_encoder(const QuantileEncoder& encoder, const std::filesystem::path& path) {
  const nlohmann::json doc = {
      {"n_bins", encoder.n_bins()},
      {"n_features", encoder.n_features()},
      {"boundaries", encoder.boundaries()},
  };
  std::ofstream out(path);
  if (!out) throw Error("cannot write encoder file: " + path.string());
  out << doc.dump(2) << '\n';
}

QuantileEncoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open encoder file: " + path.string());
  try {
    nlohmann::json doc;
    in >> doc;
    auto boundaries = doc.at("boundaries").get<std::vector<std::vector<double>>>();
    if (boundaries.size() != doc.at("n_features").get<std::size_t>()) {
      throw ParseError("encoder file feature count mismatch: " + path.string());
    }
    return QuantileEncoder::from_parts(doc.at("n_bins").get<int>(), std::move(boundaries));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad encoder file " + path.string() + ": " + e.what());
  }
}

}  // namespace kws
