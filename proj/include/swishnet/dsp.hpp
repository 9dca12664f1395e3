// SPDX-License-Identifier: Apache-2.0
//
// Audio front end: silence trimming, block loudness equalization, framing,
// mel filterbanks, MFCC / log-MFB extraction, regression deltas and the
// on-disk feature cache.
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/error.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace swishnet {

/// Dense row-major rows x cols grid of doubles.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

enum class FeatureKind : std::uint8_t { Mfcc = 0, LogMfb = 1, MfccDeltas = 2 };

inline const char* to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Mfcc: return "mfcc";
    case FeatureKind::LogMfb: return "logmfb";
    case FeatureKind::MfccDeltas: return "mfcc-deltas";
  }
  return "?";
}

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "mfcc") return FeatureKind::Mfcc;
  if (s == "logmfb") return FeatureKind::LogMfb;
  if (s == "mfcc-deltas") return FeatureKind::MfccDeltas;
  throw ConfigError("unknown feature kind '" + s + "'");
}

struct FeatureMatrix {
  Grid values;  // frames x coefficients
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  FeatureKind kind = FeatureKind::Mfcc;

  std::size_t frames() const { return values.rows; }
  std::size_t coeffs() const { return values.cols; }

  /// Rows [begin, begin + count).
  FeatureMatrix slice(std::size_t begin, std::size_t count) const {
    FeatureMatrix out{Grid(count, coeffs()), frame_len_ms, hop_ms, kind};
    std::copy_n(values.data.begin() + static_cast<std::ptrdiff_t>(begin * coeffs()),
                count * coeffs(), out.values.data.begin());
    return out;
  }
};

namespace dsp {

inline constexpr double kLogFloor = 1e-10;
inline constexpr double kLoudnessFloor = 1e-6;

inline std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

namespace detail {

inline double mean_power(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

// Per-block keep mask for remove_silence / silence_portions. The trailing
// partial block is judged on its own length.
inline std::vector<bool> loud_blocks(const AudioClip& clip, std::size_t block, double threshold_db) {
  const std::size_t n_blocks = (clip.size() + block - 1) / block;
  std::vector<double> power(n_blocks);
  double max_power = 0.0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t begin = b * block;
    const std::size_t len = std::min(block, clip.size() - begin);
    power[b] = mean_power(std::span(clip.samples).subspan(begin, len));
    max_power = std::max(max_power, power[b]);
  }
  std::vector<bool> keep(n_blocks, false);
  if (max_power <= 0.0) return keep;
  const double threshold = max_power * std::pow(10.0, threshold_db / 10.0);
  for (std::size_t b = 0; b < n_blocks; ++b) keep[b] = power[b] > 0.0 && power[b] >= threshold;
  return keep;
}

inline AudioClip gather_blocks(const AudioClip& clip, std::size_t block, const std::vector<bool>& mask,
                               bool want) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  for (std::size_t b = 0; b < mask.size(); ++b) {
    if (mask[b] != want) continue;
    const std::size_t begin = b * block;
    const std::size_t end = std::min(begin + block, clip.size());
    out.samples.insert(out.samples.end(), clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

/// Keeps the frame_ms blocks whose mean power is within threshold_db of the
/// loudest block. Zero-power blocks never survive, so all-zero input yields
/// an empty clip.
inline AudioClip remove_silence(const AudioClip& clip, double frame_ms = 25.0, double threshold_db = -40.0) {
  if (frame_ms <= 0) throw ConfigError("frame_ms must be positive");
  if (clip.empty()) return clip;
  const std::size_t block = std::max<std::size_t>(1, ms_to_samples(frame_ms, clip.sample_rate));
  return detail::gather_blocks(clip, block, detail::loud_blocks(clip, block, threshold_db), true);
}

/// Complement of remove_silence: the quiet blocks, concatenated. These are
/// the natural silence portions used when synthesizing segmentation files.
inline AudioClip silence_portions(const AudioClip& clip, double frame_ms = 25.0, double threshold_db = -40.0) {
  if (frame_ms <= 0) throw ConfigError("frame_ms must be positive");
  if (clip.empty()) return clip;
  const std::size_t block = std::max<std::size_t>(1, ms_to_samples(frame_ms, clip.sample_rate));
  return detail::gather_blocks(clip, block, detail::loud_blocks(clip, block, threshold_db), false);
}

/// Scales each non-overlapping window_ms block to target_rms. Blocks quieter
/// than kLoudnessFloor are left alone.
inline AudioClip equalize_loudness(const AudioClip& clip, double window_ms = 250.0, double target_rms = 0.1) {
  if (window_ms <= 0) throw ConfigError("window_ms must be positive");
  if (target_rms <= 0) throw ConfigError("target_rms must be positive");
  AudioClip out = clip;
  const std::size_t block = std::max<std::size_t>(1, ms_to_samples(window_ms, clip.sample_rate));
  for (std::size_t begin = 0; begin < out.size(); begin += block) {
    const std::size_t len = std::min(block, out.size() - begin);
    auto blk = std::span(out.samples).subspan(begin, len);
    const double rms = std::sqrt(detail::mean_power(blk));
    if (rms < kLoudnessFloor) continue;
    const double gain = target_rms / rms;
    for (double& v : blk) v *= gain;
  }
  return out;
}

inline std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop) {
  if (n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Slices the clip into Hann-windowed frames; the trailing partial frame is
/// dropped.
inline Grid frame_signal(const AudioClip& clip, double frame_ms = 25.0, double hop_ms = 10.0) {
  const std::size_t len = ms_to_samples(frame_ms, clip.sample_rate);
  const std::size_t hop = ms_to_samples(hop_ms, clip.sample_rate);
  if (len == 0 || hop == 0) throw ConfigError("frame and hop must be at least one sample");
  if (clip.size() < len) {
    throw TooShortError("clip of " + std::to_string(clip.size()) + " samples is shorter than one frame (" +
                        std::to_string(len) + ")");
  }
  const std::size_t n = frame_count(clip.size(), len, hop);
  const auto window = hann_window(len);
  Grid frames(n, len);
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t i = 0; i < len; ++i) frames(f, i) = clip.samples[f * hop + i] * window[i];
  }
  return frames;
}

/// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

/// |X_k|^2 for k = 0..n_fft/2 of the zero-padded frame.
inline std::vector<double> power_spectrum(std::span<const double> frame, std::size_t n_fft) {
  if (frame.size() > n_fft) throw ConfigError("frame longer than FFT length");
  std::vector<std::complex<double>> buf(n_fft);
  std::copy(frame.begin(), frame.end(), buf.begin());
  fft(buf);
  std::vector<double> p(n_fft / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(buf[k]);
  return p;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterBank {
  std::size_t n_fft = 512;
  std::size_t n_mels = 32;
  int sample_rate = kWorkingRate;
  Grid weights;  // n_mels x (n_fft/2 + 1)

  std::size_t n_bins() const { return n_fft / 2 + 1; }
};

/// Triangular filters with centers equally spaced on the HTK mel scale
/// between 0 Hz and Nyquist.
inline MelFilterBank mel_filterbank(std::size_t n_fft, std::size_t n_mels, int sample_rate) {
  if (n_mels < 1) throw ConfigError("n_mels must be at least 1");
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) throw ConfigError("n_fft must be a power of two");
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");

  MelFilterBank fb{n_fft, n_mels, sample_rate, Grid(n_mels, n_fft / 2 + 1)};
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(mel_max * i / (n_mels + 1));
  edges.front() = 0.0;
  edges.back() = sample_rate / 2.0;  // exact, so the last band closes on the Nyquist bin

  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < fb.n_bins(); ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      fb.weights(m, k) = w;
      any = any || w > 0.0;
    }
    if (!any) {
      throw ConfigError("mel band " + std::to_string(m) + " has no FFT bins; n_mels=" + std::to_string(n_mels) +
                        " is too large for n_fft=" + std::to_string(n_fft));
    }
  }
  return fb;
}

/// Natural log of the mel energies, clamped at kLogFloor.
inline std::vector<double> log_mel_energies(std::span<const double> power, const MelFilterBank& fb) {
  std::vector<double> out(fb.n_mels);
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    double e = 0.0;
    const auto w = fb.weights.row(m);
    for (std::size_t k = 0; k < w.size(); ++k) e += w[k] * power[k];
    out[m] = std::log(std::max(e, kLogFloor));
  }
  return out;
}

/// Orthonormal DCT-II basis, n_out x n_in.
inline Grid dct_matrix(std::size_t n_out, std::size_t n_in) {
  Grid d(n_out, n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_in));
    for (std::size_t n = 0; n < n_in; ++n) {
      d(k, n) = scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_in));
    }
  }
  return d;
}

inline FeatureMatrix log_mfb(const Grid& frames, const MelFilterBank& fb) {
  FeatureMatrix out{Grid(frames.rows, fb.n_mels), 25.0, 10.0, FeatureKind::LogMfb};
  for (std::size_t f = 0; f < frames.rows; ++f) {
    const auto e = log_mel_energies(power_spectrum(frames.row(f), fb.n_fft), fb);
    std::copy(e.begin(), e.end(), out.values.row(f).begin());
  }
  return out;
}

inline FeatureMatrix mfcc(const Grid& frames, const MelFilterBank& fb, std::size_t n_coeffs = 20) {
  if (fb.n_mels < n_coeffs) throw ConfigError("need at least as many mel bands as cepstral coefficients");
  const Grid dct = dct_matrix(n_coeffs, fb.n_mels);
  FeatureMatrix out{Grid(frames.rows, n_coeffs), 25.0, 10.0, FeatureKind::Mfcc};
  for (std::size_t f = 0; f < frames.rows; ++f) {
    const auto e = log_mel_energies(power_spectrum(frames.row(f), fb.n_fft), fb);
    for (std::size_t k = 0; k < n_coeffs; ++k) {
      double acc = 0.0;
      for (std::size_t m = 0; m < fb.n_mels; ++m) acc += dct(k, m) * e[m];
      out.values(f, k) = acc;
    }
  }
  return out;
}

/// Regression deltas with edge replication; returns [c, delta, delta-delta].
inline FeatureMatrix deltas(const FeatureMatrix& features, std::size_t half_width = 2) {
  if (features.frames() < 1) throw TooShortError("deltas need at least one frame");
  const std::size_t T = features.frames(), D = features.coeffs();
  const auto T_signed = static_cast<std::ptrdiff_t>(T);
  double denom = 0.0;
  for (std::size_t n = 1; n <= half_width; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;

  auto regress = [&](const Grid& c) {
    Grid d(T, D);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t n = 1; n <= half_width; ++n) {
        const auto t_signed = static_cast<std::ptrdiff_t>(t);
        const auto n_signed = static_cast<std::ptrdiff_t>(n);
        const auto ahead = static_cast<std::size_t>(std::min(t_signed + n_signed, T_signed - 1));
        const auto behind = static_cast<std::size_t>(std::max<std::ptrdiff_t>(t_signed - n_signed, 0));
        for (std::size_t j = 0; j < D; ++j) d(t, j) += static_cast<double>(n) * (c(ahead, j) - c(behind, j));
      }
      for (std::size_t j = 0; j < D; ++j) d(t, j) /= denom;
    }
    return d;
  };

  const Grid d1 = regress(features.values);
  const Grid d2 = regress(d1);
  FeatureMatrix out{Grid(T, 3 * D), features.frame_len_ms, features.hop_ms, FeatureKind::MfccDeltas};
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < D; ++j) {
      out.values(t, j) = features.values(t, j);
      out.values(t, D + j) = d1(t, j);
      out.values(t, 2 * D + j) = d2(t, j);
    }
  }
  return out;
}

struct PreprocessOptions {
  bool trim_silence = true;
  double silence_frame_ms = 25.0;
  double silence_threshold_db = -40.0;
  bool equalize = true;
  double loudness_window_ms = 250.0;
  double target_rms = 0.1;
};

/// Resample to 16 kHz, trim silence, equalize loudness.
inline AudioClip preprocess(const AudioClip& clip, const PreprocessOptions& opt = {}) {
  AudioClip out = clip.sample_rate == kWorkingRate ? clip : resample(clip, kWorkingRate);
  if (opt.trim_silence) out = remove_silence(out, opt.silence_frame_ms, opt.silence_threshold_db);
  if (opt.equalize && !out.empty()) out = equalize_loudness(out, opt.loudness_window_ms, opt.target_rms);
  return out;
}

/// Filterbanks are built per call; hold one of these when extracting many clips.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureKind kind, int sample_rate = kWorkingRate)
      : kind_(kind),
        bank_(mel_filterbank(512, kind == FeatureKind::LogMfb ? 64 : 32, sample_rate)) {}

  FeatureKind kind() const { return kind_; }
  std::size_t n_coeffs() const {
    switch (kind_) {
      case FeatureKind::Mfcc: return 20;
      case FeatureKind::LogMfb: return 64;
      case FeatureKind::MfccDeltas: return 60;
    }
    return 0;
  }

  FeatureMatrix operator()(const AudioClip& clip) const {
    if (clip.sample_rate != bank_.sample_rate) throw ConfigError("clip rate does not match filterbank rate");
    const Grid frames = frame_signal(clip);
    switch (kind_) {
      case FeatureKind::Mfcc: return mfcc(frames, bank_, 20);
      case FeatureKind::LogMfb: return log_mfb(frames, bank_);
      case FeatureKind::MfccDeltas: return deltas(mfcc(frames, bank_, 20));
    }
    return {};
  }

 private:
  FeatureKind kind_;
  MelFilterBank bank_;
};

// Feature cache: "SWFT", u32 version, u32 frames, u32 n_coeffs, u8 kind,
// then row-major float32, all little-endian.
inline constexpr std::uint32_t kFeatureCacheVersion = 1;

inline std::vector<unsigned char> encode_feature_cache(const FeatureMatrix& f) {
  std::vector<unsigned char> out{'S', 'W', 'F', 'T'};
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  };
  put_u32(kFeatureCacheVersion);
  put_u32(static_cast<std::uint32_t>(f.frames()));
  put_u32(static_cast<std::uint32_t>(f.coeffs()));
  out.push_back(static_cast<unsigned char>(f.kind));
  for (double v : f.values.data) {
    const float x = static_cast<float>(v);
    std::uint32_t raw;
    std::memcpy(&raw, &x, sizeof raw);
    put_u32(raw);
  }
  return out;
}

inline FeatureMatrix decode_feature_cache(std::span<const unsigned char> bytes) {
  using swishnet::detail::read_u32;
  if (bytes.size() < 17 || std::memcmp(bytes.data(), "SWFT", 4) != 0) throw FormatError("bad feature cache magic");
  if (read_u32(bytes.data() + 4) != kFeatureCacheVersion) throw FormatError("unsupported feature cache version");
  const std::size_t frames = read_u32(bytes.data() + 8);
  const std::size_t coeffs = read_u32(bytes.data() + 12);
  const std::uint8_t kind = bytes[16];
  if (kind > 2) throw FormatError("unknown feature kind in cache");
  if (bytes.size() != 17 + frames * coeffs * 4) throw FormatError("feature cache size mismatch");
  FeatureMatrix f{Grid(frames, coeffs), 25.0, 10.0, static_cast<FeatureKind>(kind)};
  for (std::size_t i = 0; i < frames * coeffs; ++i) {
    const std::uint32_t raw = read_u32(bytes.data() + 17 + 4 * i);
    float x;
    std::memcpy(&x, &raw, sizeof x);
    f.values.data[i] = x;
  }
  return f;
}

inline void save_feature_cache(const std::filesystem::path& path, const FeatureMatrix& f) {
  const auto bytes = encode_feature_cache(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline FeatureMatrix load_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_feature_cache(bytes);
}

}  // namespace dsp
}  // namespace swishnet
