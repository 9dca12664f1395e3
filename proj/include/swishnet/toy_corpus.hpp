// SPDX-License-Identifier: Apache-2.0
//
// Synthetic three-class audio for sanity and acceptance runs:
//   noise   band-limited noise (white noise through one or two band-passes)
//   music   sustained harmonic chords
//   speech  harmonic source with drifting pitch, moving formants and a
//           syllable-rate amplitude envelope
// Every file carries a short stretch of very quiet hiss at both ends, which
// the silence trimmer removes and the segmentation generator reuses as
// natural silence.
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/error.hpp>
#include <swishnet/labels.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace swishnet::toy {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

namespace detail {

/// RBJ band-pass biquad (0 dB peak gain), run in place.
inline void bandpass(std::vector<double>& x, double center_hz, double q, int rate) {
  const double w0 = kTwoPi * center_hz / rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0, a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& v : x) {
    const double y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1, x1 = v, y2 = y1, y1 = y;
    v = y;
  }
}

inline void scale_to_rms(std::vector<double>& x, double target) {
  double s = 0.0;
  for (double v : x) s += v * v;
  const double rms = std::sqrt(s / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
  if (rms > 0) {
    for (double& v : x) v *= target / rms;
  }
}

inline double midi_hz(double note) { return 440.0 * std::pow(2.0, (note - 69.0) / 12.0); }

}  // namespace detail

inline std::vector<double> noise_like(std::size_t n, std::mt19937_64& rng, int rate = kWorkingRate) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  const int bands = u(rng) < 0.5 ? 1 : 2;
  for (int b = 0; b < bands; ++b) {
    std::vector<double> w(n);
    for (double& v : w) v = z(rng);
    detail::bandpass(w, 300.0 * std::pow(20.0, u(rng)), 0.6 + 1.5 * u(rng), rate);
    for (std::size_t i = 0; i < n; ++i) out[i] += w[i];
  }
  // Slow level drift, well below syllable rate.
  const double drift_hz = 0.1 + 0.3 * u(rng), phase = kTwoPi * u(rng);
  for (std::size_t i = 0; i < n; ++i) out[i] *= 1.0 + 0.2 * std::sin(kTwoPi * drift_hz * i / rate + phase);
  return out;
}

inline std::vector<double> music_like(std::size_t n, std::mt19937_64& rng, int rate = kWorkingRate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  const double tilt = 0.8 + 0.8 * u(rng);
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = static_cast<std::size_t>((0.4 + 0.8 * u(rng)) * rate);
    const double root = 45.0 + std::floor(24.0 * u(rng));
    const double third = u(rng) < 0.5 ? 3.0 : 4.0;
    const double notes[3] = {root, root + third, root + 7.0};
    const std::size_t end = std::min(n, pos + len);
    const double fade = 0.02 * rate;
    for (double note : notes) {
      const double f0 = detail::midi_hz(note);
      const double phase0 = kTwoPi * u(rng);
      for (int h = 1; h <= 8 && h * f0 < 0.45 * rate; ++h) {
        const double amp = 1.0 / std::pow(h, tilt);
        for (std::size_t i = pos; i < end; ++i) {
          const double t = static_cast<double>(i - pos);
          const double env = std::min({1.0, t / fade, static_cast<double>(end - i) / fade}) * std::exp(-0.4 * t / rate);
          out[i] += amp * env * std::sin(kTwoPi * h * f0 * t / rate + h * phase0);
        }
      }
    }
    pos = end;
  }
  return out;
}

inline std::vector<double> speech_like(std::size_t n, std::mt19937_64& rng, int rate = kWorkingRate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const double f0_base = 100.0 + 140.0 * u(rng);
  const double intonation_hz = 0.3 + 0.5 * u(rng);

  // Syllable plan: each syllable has its own formant set; gaps between them dip
  // the envelope to a tenth.
  struct Syllable {
    std::size_t start, end;
    double f1, f2, f3;
  };
  std::vector<Syllable> syl;
  for (std::size_t pos = 0; pos < n;) {
    const auto len = static_cast<std::size_t>((0.12 + 0.18 * u(rng)) * rate);
    const auto gap = static_cast<std::size_t>((0.03 + 0.09 * u(rng)) * rate);
    syl.push_back({pos, std::min(n, pos + len), 300 + 500 * u(rng), 900 + 1300 * u(rng), 2300 + 700 * u(rng)});
    pos += len + gap;
  }

  std::vector<double> out(n, 0.0), env(n, 0.1);
  std::vector<double> f1(n), f2(n), f3(n);
  std::size_t s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (s + 1 < syl.size() && i >= syl[s + 1].start) ++s;
    const Syllable& y = syl[s];
    f1[i] = y.f1, f2[i] = y.f2, f3[i] = y.f3;
    if (i < y.end) {
      const double x = static_cast<double>(i - y.start) / static_cast<double>(y.end - y.start);
      env[i] = 0.1 + 0.9 * std::sin(std::numbers::pi * x);
    }
  }
  auto formant_gain = [](double f, double a, double b, double c) {
    auto peak = [f](double center, double bw) { return 1.0 / (1.0 + ((f - center) / bw) * ((f - center) / bw)); };
    return peak(a, 90.0) + 0.7 * peak(b, 120.0) + 0.4 * peak(c, 180.0);
  };
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f0 = f0_base * (1.0 + 0.12 * std::sin(kTwoPi * intonation_hz * t));
    phase += kTwoPi * f0 / rate;
    double v = 0.0;
    for (int h = 1; h * f0 < 4000.0; ++h) v += formant_gain(h * f0, f1[i], f2[i], f3[i]) * std::sin(h * phase) / h;
    out[i] = env[i] * (v + 0.03 * z(rng));
  }
  return out;
}

/// `seconds` of class audio at RMS 0.1 with `pad_s` of hiss (70 dB down) at both ends.
inline AudioClip render_class(int label, double seconds, std::mt19937_64& rng, double pad_s = 0.25,
                              int rate = kWorkingRate) {
  const auto n = static_cast<std::size_t>(seconds * rate);
  std::vector<double> body;
  switch (label) {
    case kNoise: body = noise_like(n, rng, rate); break;
    case kMusic: body = music_like(n, rng, rate); break;
    case kSpeech: body = speech_like(n, rng, rate); break;
    default: throw ConfigError("toy corpus has no class " + std::to_string(label));
  }
  detail::scale_to_rms(body, 0.1);
  const auto pad = static_cast<std::size_t>(pad_s * rate);
  std::normal_distribution<double> hiss(0.0, 0.1 * std::pow(10.0, -70.0 / 20.0));
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) clip.samples.push_back(hiss(rng));
  for (double v : body) clip.samples.push_back(std::clamp(v, -1.0, 1.0));
  for (std::size_t i = 0; i < pad; ++i) clip.samples.push_back(hiss(rng));
  return clip;
}

struct CorpusOptions {
  std::size_t files_per_class = 12;
  double min_seconds = 2.0;
  double max_seconds = 4.0;
  std::uint64_t seed = 0;
};

/// Writes <dir>/<class>/<class>_NNN.wav and returns the paths (relative to
/// dir) grouped by class, ready for split_dataset.
inline std::vector<std::vector<std::string>> write_corpus(const std::filesystem::path& dir, const CorpusOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> len(opt.min_seconds, opt.max_seconds);
  std::vector<std::vector<std::string>> files(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    std::filesystem::create_directories(dir / class_name(c));
    for (std::size_t i = 0; i < opt.files_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "%s/%s_%03zu.wav", class_name(c), class_name(c), i);
      save_wav(dir / name, render_class(c, len(rng), rng), WavEncoding::Float32);
      files[static_cast<std::size_t>(c)].push_back(name);
    }
  }
  return files;
}

}  // namespace swishnet::toy
