#include "kws/mfcc.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "kws/error.hpp"

namespace kws {

namespace {

constexpr double kLogFloor = 1e-10;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

int MfccConfig::window_samples() const {
  return static_cast<int>(std::llround(window_length_s * sample_rate));
}

int MfccConfig::step_samples() const {
  return static_cast<int>(std::llround(window_step_s * sample_rate));
}

MfccConfig MfccConfig::resolved() const {
  MfccConfig out = *this;
  if (out.fft_size == 0) out.fft_size = next_pow2(std::max(16, out.window_samples()));
  return out;
}

void MfccConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (window_length_s <= 0.0) throw ConfigError("window_length_s must be positive");
  if (window_step_s <= 0.0) throw ConfigError("window_step_s must be positive");
  if (window_samples() < 1) throw ConfigError("window shorter than one sample");
  if (step_samples() < 1) throw ConfigError("step shorter than one sample");
  if (pre_emphasis < 0.0 || pre_emphasis >= 1.0) {
    throw ConfigError("pre_emphasis must lie in [0, 1)");
  }
  if (n_filters < 1) throw ConfigError("n_filters must be positive");
  if (n_ceps < 1 || n_ceps > n_filters) {
    throw ConfigError("n_ceps must lie in [1, n_filters]");
  }
  if (!is_pow2(fft_size)) throw ConfigError("fft_size must be a power of two");
  if (fft_size < window_samples()) {
    throw ConfigError("fft_size smaller than the analysis window");
  }
}

std::vector<double> pre_emphasize(const std::vector<double>& samples, double alpha) {
  std::vector<double> out(samples.size());
  if (samples.empty()) return out;
  out[0] = samples[0];
  for (std::size_t n = 1; n < samples.size(); ++n) {
    out[n] = samples[n] - alpha * samples[n - 1];
  }
  return out;
}

std::vector<double> hamming_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (length < 2) return w;
  for (int n = 0; n < length; ++n) {
    w[static_cast<std::size_t>(n)] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
  }
  return w;
}

Matrix frame_and_window(const std::vector<double>& samples, int length, int step) {
  if (length < 1 || step < 1) throw ConfigError("frame length and step must be positive");
  const auto n = static_cast<long long>(samples.size());
  const long long n_frames = n >= length ? 1 + (n - length) / step : 1;

  const auto window = hamming_window(length);
  Matrix frames(static_cast<std::size_t>(n_frames), static_cast<std::size_t>(length));
  for (long long i = 0; i < n_frames; ++i) {
    double* row = frames.row(static_cast<std::size_t>(i));
    const long long start = i * step;
    for (int j = 0; j < length; ++j) {
      const long long src = start + j;
      const double s = src < n ? samples[static_cast<std::size_t>(src)] : 0.0;
      row[j] = s * window[static_cast<std::size_t>(j)];
    }
  }
  return frames;
}

void fft_inplace(std::vector<std::complex<double>>& values) {
  const std::size_t n = values.size();
  if (!is_pow2(static_cast<int>(n))) throw ConfigError("FFT size must be a power of two");
  if (n == 1) return;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(values[i], values[j]);
  }

  // Twiddle factors exp(-2*pi*i*k/n) for k < n/2; every stage strides
  // through this table, so each factor is computed once per call.
  std::vector<std::complex<double>> twiddle(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle[k] = {std::cos(ang), std::sin(ang)};
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t stride = n / len;
    for (std::size_t base = 0; base < n; base += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = twiddle[k * stride];
        const std::complex<double> u = values[base + k];
        const std::complex<double> v = values[base + k + len / 2] * w;
        values[base + k] = u + v;
        values[base + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<double> power_spectrum(const std::vector<double>& frame, int fft_size) {
  if (!is_pow2(fft_size)) throw ConfigError("fft_size must be a power of two");
  if (frame.size() > static_cast<std::size_t>(fft_size)) {
    throw ConfigError("frame longer than fft_size");
  }
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(fft_size));
  for (std::size_t i = 0; i < frame.size(); ++i) spectrum[i] = frame[i];
  fft_inplace(spectrum);

  std::vector<double> power(static_cast<std::size_t>(fft_size / 2 + 1));
  for (std::size_t k = 0; k < power.size(); ++k) {
    power[k] = std::norm(spectrum[k]) / fft_size;
  }
  return power;
}

double mel_from_hz(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double hz_from_mel(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank_weights(int n_filters, int sample_rate, int fft_size) {
  const int n_bins = fft_size / 2 + 1;
  // n_filters + 2 corner frequencies, equally spaced in mel between DC and
  // Nyquist; filter j is the triangle over corners j-1, j, j+1.
  std::vector<double> corners(static_cast<std::size_t>(n_filters) + 2);
  const double mel_max = mel_from_hz(sample_rate / 2.0);
  for (std::size_t j = 0; j < corners.size(); ++j) {
    corners[j] = hz_from_mel(mel_max * static_cast<double>(j) / (n_filters + 1));
  }

  Matrix weights(static_cast<std::size_t>(n_filters), static_cast<std::size_t>(n_bins));
  for (int f = 0; f < n_filters; ++f) {
    const double lo = corners[static_cast<std::size_t>(f)];
    const double mid = corners[static_cast<std::size_t>(f) + 1];
    const double hi = corners[static_cast<std::size_t>(f) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double hz = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (hz >= lo && hz <= mid && mid > lo) {
        w = (hz - lo) / (mid - lo);
      } else if (hz > mid && hz <= hi && hi > mid) {
        w = (hi - hz) / (hi - mid);
      }
      weights.at(static_cast<std::size_t>(f), static_cast<std::size_t>(k)) = w;
    }
  }
  return weights;
}

std::vector<double> mel_filterbank(const std::vector<double>& power_spec,
                                   int n_filters, int sample_rate, int fft_size) {
  if (power_spec.size() != static_cast<std::size_t>(fft_size / 2 + 1)) {
    throw ConfigError("power spectrum length does not match fft_size");
  }
  const Matrix weights = mel_filterbank_weights(n_filters, sample_rate, fft_size);
  std::vector<double> energies(static_cast<std::size_t>(n_filters), 0.0);
  for (std::size_t f = 0; f < energies.size(); ++f) {
    const double* row = weights.row(f);
    double acc = 0.0;
    for (std::size_t k = 0; k < power_spec.size(); ++k) acc += row[k] * power_spec[k];
    energies[f] = acc;
  }
  return energies;
}

std::vector<double> log_dct(const std::vector<double>& energies, int n_ceps) {
  const std::size_t n = energies.size();
  if (n == 0) throw ConfigError("empty energy vector");
  if (n_ceps < 1 || static_cast<std::size_t>(n_ceps) > n) {
    throw ConfigError("n_ceps must lie in [1, n_filters]");
  }
  std::vector<double> logs(n);
  for (std::size_t i = 0; i < n; ++i) logs[i] = std::log(std::max(energies[i], kLogFloor));

  // Orthonormal DCT-II: c[k] = s_k * sum_n logs[n] * cos(pi*k*(2n+1)/(2N)).
  std::vector<double> ceps(static_cast<std::size_t>(n_ceps), 0.0);
  const double s0 = std::sqrt(1.0 / static_cast<double>(n));
  const double sk = std::sqrt(2.0 / static_cast<double>(n));
  for (int k = 0; k < n_ceps; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += logs[i] * std::cos(std::numbers::pi * k * (2.0 * static_cast<double>(i) + 1.0) /
                                (2.0 * static_cast<double>(n)));
    }
    ceps[static_cast<std::size_t>(k)] = (k == 0 ? s0 : sk) * acc;
  }
  return ceps;
}

Matrix extract_mfcc(const AudioClip& clip, const MfccConfig& config) {
  const MfccConfig cfg = config.resolved();
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("clip sample rate " + std::to_string(clip.sample_rate) +
                      " does not match configured " + std::to_string(cfg.sample_rate));
  }

  const auto emphasized = pre_emphasize(clip.samples, cfg.pre_emphasis);
  const Matrix frames = frame_and_window(emphasized, cfg.window_samples(), cfg.step_samples());
  const Matrix weights = mel_filterbank_weights(cfg.n_filters, cfg.sample_rate, cfg.fft_size);

  Matrix features(frames.rows, static_cast<std::size_t>(cfg.n_ceps));
  std::vector<double> frame(frames.cols);
  for (std::size_t i = 0; i < frames.rows; ++i) {
    std::memcpy(frame.data(), frames.row(i), frames.cols * sizeof(double));
    const auto power = power_spectrum(frame, cfg.fft_size);
    std::vector<double> energies(static_cast<std::size_t>(cfg.n_filters), 0.0);
    for (std::size_t f = 0; f < energies.size(); ++f) {
      const double* wrow = weights.row(f);
      double acc = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) acc += wrow[k] * power[k];
      energies[f] = acc;
    }
    const auto ceps = log_dct(energies, cfg.n_ceps);
    std::memcpy(features.row(i), ceps.data(), ceps.size() * sizeof(double));
  }
  return features;
}

void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write CSV: " + path.string());
  char buf[64];
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(r, c));
      out << buf << (c + 1 < m.cols ? "," : "");
    }
    out << '\n';
  }
}

void write_matrix_bin(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write matrix cache: " + path.string());
  const auto rows = static_cast<std::uint32_t>(m.rows);
  const auto cols = static_cast<std::uint32_t>(m.cols);
  unsigned char header[8] = {
      static_cast<unsigned char>(rows), static_cast<unsigned char>(rows >> 8),
      static_cast<unsigned char>(rows >> 16), static_cast<unsigned char>(rows >> 24),
      static_cast<unsigned char>(cols), static_cast<unsigned char>(cols >> 8),
      static_cast<unsigned char>(cols >> 16), static_cast<unsigned char>(cols >> 24)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  static_assert(std::endian::native == std::endian::little,
                "matrix cache assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

Matrix read_matrix_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open matrix cache: " + path.string());
  unsigned char header[8];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) {
    throw ParseError("matrix cache missing header: " + path.string());
  }
  const std::uint32_t rows = header[0] | (header[1] << 8) | (header[2] << 16) |
                             (static_cast<std::uint32_t>(header[3]) << 24);
  const std::uint32_t cols = header[4] | (header[5] << 8) | (header[6] << 16) |
                             (static_cast<std::uint32_t>(header[7]) << 24);
  Matrix m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(m.data.size() * sizeof(double)))) {
    throw ParseError("matrix cache truncated: " + path.string());
  }
  return m;
}

}  // namespace kws
