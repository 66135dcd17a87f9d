#pragma once

#include <complex>
#include <filesystem>
#include <vector>

#include "kws/audio.hpp"
#include "kws/matrix.hpp"

namespace kws {

struct MfccConfig {
  int sample_rate = 16000;
  double window_length_s = 0.025;
  double window_step_s = 0.010;
  double pre_emphasis = 0.97;
  int n_filters = 26;
  int n_ceps = 13;
  int fft_size = 512;  // 0 = pick the smallest power of two covering a window

  int window_samples() const;
  int step_samples() const;

  // Returns a copy with fft_size resolved if it was 0.
  MfccConfig resolved() const;

  // Throws ConfigError when any field is out of range, fft_size is not a
  // power of two, or a window does not fit in fft_size.
  void validate() const;
};

// y[0] = x[0]; y[n] = x[n] - alpha * x[n-1]. alpha = 0 is the identity.
std::vector<double> pre_emphasize(const std::vector<double>& samples, double alpha);

std::vector<double> hamming_window(int length);

// Slices samples into Hamming-weighted frames of `length` every `step`
// samples. Covers 1 + floor((N - length) / step) frames when N >= length;
// shorter inputs produce a single zero-padded frame.
Matrix frame_and_window(const std::vector<double>& samples, int length, int step);

// In-place radix-2 Cooley-Tukey FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& values);

// Zero-pads the frame to fft_size and returns |X[k]|^2 / fft_size for
// k = 0 .. fft_size/2 (the one-sided power spectrum).
std::vector<double> power_spectrum(const std::vector<double>& frame, int fft_size);

double mel_from_hz(double hz);
double hz_from_mel(double mel);

// Triangular filter weights, one row per filter, one column per FFT bin
// (fft_size/2 + 1 of them). Filter centers are equally spaced on the mel
// scale between 0 Hz and sample_rate/2.
Matrix mel_filterbank_weights(int n_filters, int sample_rate, int fft_size);

std::vector<double> mel_filterbank(const std::vector<double>& power_spec,
                                   int n_filters, int sample_rate, int fft_size);

// ln(max(e, 1e-10)) per energy, then orthonormal DCT-II, keeping the first
// n_ceps coefficients.
std::vector<double> log_dct(const std::vector<double>& energies, int n_ceps);

// Full pipeline for one clip. Result has one row per frame, n_ceps columns.
// The clip's sample rate must match the config.
Matrix extract_mfcc(const AudioClip& clip, const MfccConfig& config);

// Feature dumps: CSV (one row per frame) and a little-endian binary cache
// with a rows/cols header followed by the f64 payload.
void write_matrix_csv(const Matrix& m, const std::filesystem::path& path);
void write_matrix_bin(const Matrix& m, const std::filesystem::path& path);
Matrix read_matrix_bin(const std::filesystem::path& path);

}  // namespace kws
