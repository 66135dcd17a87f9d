#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "kws/bitvec.hpp"
#include "kws/matrix.hpp"

namespace kws {

// Bits needed to address n_bins bins: ceil(log2(n_bins)).
int bits_for_bins(int n_bins);

// Row-major flattening of a per-clip feature matrix into one vector, so a
// clip with R frames and C coefficients becomes R*C features.
std::vector<double> flatten_mfcc(const Matrix& features);

// Per-feature quantile binning. fit() learns n_bins - 1 boundaries per
// column from training data only; transform() maps a raw vector to a
// bit string of n_features * bits_per_feature Booleans.
class QuantileEncoder {
 public:
  // Boundary j (1-based) of a column is the sorted column value at
  // nearest-rank position ceil(rows * j / n_bins). Throws
  // InsufficientDataError when rows < n_bins.
  static QuantileEncoder fit(const Matrix& train_features, int n_bins);

  // Bin index = number of boundaries strictly below the value, so a value
  // equal to a boundary falls in the lower bin. Each index is emitted
  // big-endian in bits_per_feature bits.
  BitVector transform(std::span<const double> features) const;

  int bin_index(std::size_t feature, double value) const;

  int n_bins() const { return n_bins_; }
  std::size_t n_features() const { return boundaries_.size(); }
  int bits_per_feature() const { return bits_per_feature_; }
  std::size_t total_booleans() const { return n_features() * static_cast<std::size_t>(bits_per_feature_); }
  const std::vector<std::vector<double>>& boundaries() const { return boundaries_; }

  static QuantileEncoder from_parts(int n_bins, std::vector<std::vector<double>> boundaries);

 private:
  QuantileEncoder() = default;

  int n_bins_ = 0;
  int bits_per_feature_ = 0;
  std::vector<std::vector<double>> boundaries_;  // one sorted list per feature
};

void save_encoder(const QuantileEncoder& encoder, const std::filesystem::path& path);
QuantileEncoder load_encoder(const std::filesystem::path& path);

}  // namespace kws
