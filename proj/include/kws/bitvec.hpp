#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kws {

// Fixed-length bit vector packed into 64-bit words, bit i living at
// word i/64, position i%64. Padding bits in the last word stay zero so
// word-level AND/OR scans need no special casing.
class BitVector {
 public:
  static constexpr std::size_t kWordBits = 64;

  BitVector() = default;
  explicit BitVector(std::size_t n_bits)
      : n_bits_(n_bits), words_((n_bits + kWordBits - 1) / kWordBits, 0) {}

  std::size_t size() const { return n_bits_; }
  std::size_t word_count() const { return words_.size(); }

  bool get(std::size_t i) const {
    return (words_[i / kWordBits] >> (i % kWordBits)) & 1u;
  }

  void set(std::size_t i, bool value) {
    const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
    if (value) {
      words_[i / kWordBits] |= mask;
    } else {
      words_[i / kWordBits] &= ~mask;
    }
  }

  std::span<const std::uint64_t> words() const { return words_; }

  std::size_t count() const {
    std::size_t total = 0;
    for (std::uint64_t w : words_) total += static_cast<std::size_t>(__builtin_popcountll(w));
    return total;
  }

  bool operator==(const BitVector&) const = default;

 private:
  std::size_t n_bits_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace kws
