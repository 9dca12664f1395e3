// SPDX-License-Identifier: Apache-2.0
//
// Artificial segmentation timelines, sliding-window frame prediction, median
// smoothing and frame-level scoring with silence excluded.
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/classifier.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/error.hpp>
#include <swishnet/labels.hpp>
#include <swishnet/trainer.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace swishnet {

inline constexpr std::size_t kFrameLen = 400;  // 25 ms at 16 kHz
inline constexpr std::size_t kFrameHop = 160;  // 10 ms

// ---------------------------------------------------------------------------
// Timelines

struct Segment {
  int label = kNoise;
  std::size_t begin = 0;  // samples, half-open
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Timeline {
  int sample_rate = kWorkingRate;
  std::size_t n_samples = 0;
  std::vector<Segment> segments;  // contiguous, covering [0, n_samples)

  double duration_s() const { return static_cast<double>(n_samples) / sample_rate; }
  std::size_t n_frames() const { return dsp::frame_count(n_samples, kFrameLen, kFrameHop); }

  /// Label of frame i is the segment holding its center sample.
  std::vector<int> frame_labels() const {
    std::vector<int> out(n_frames());
    std::size_t s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t center = i * kFrameHop + kFrameLen / 2;
      while (segments[s].end <= center) ++s;
      out[i] = segments[s].label;
    }
    return out;
  }

  friend bool operator==(const Timeline&, const Timeline&) = default;
};

/// Inverse of frame_labels: each run of equal labels becomes one segment
/// whose boundaries sit halfway between neighbouring frame centers.
inline Timeline labels_to_timeline(const std::vector<int>& labels, std::size_t n_samples, int rate = kWorkingRate) {
  Timeline t{rate, n_samples, {}};
  if (labels.empty()) {
    if (n_samples > 0) t.segments.push_back({kSilence, 0, n_samples});
    return t;
  }
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= labels.size(); ++i) {
    if (i == labels.size() || labels[i] != labels[i - 1]) {
      const std::size_t end = i == labels.size() ? n_samples : i * kFrameHop + (kFrameLen / 2 - kFrameHop / 2);
      t.segments.push_back({labels[i - 1], begin, end});
      begin = end;
    }
  }
  return t;
}

inline void write_timeline(std::ostream& os, const Timeline& t) {
  os.precision(17);
  for (const auto& s : t.segments) {
    os << static_cast<double>(s.begin) / t.sample_rate << '\t' << static_cast<double>(s.end) / t.sample_rate << '\t'
       << class_name(s.label) << '\n';
  }
}

inline Timeline read_timeline(std::istream& is, int rate = kWorkingRate) {
  Timeline t;
  t.sample_rate = rate;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    double a = 0, b = 0;
    std::string cls, extra;
    if (!(f >> a >> b >> cls) || (f >> extra) || b < a) {
      throw DataError("timeline line " + std::to_string(lineno) + ": expected start_s<TAB>end_s<TAB>class");
    }
    const auto begin = static_cast<std::size_t>(std::llround(a * rate));
    const auto end = static_cast<std::size_t>(std::llround(b * rate));
    if (begin != t.n_samples) throw DataError("timeline line " + std::to_string(lineno) + ": segments must be contiguous");
    t.segments.push_back({parse_class(cls), begin, end});
    t.n_samples = end;
  }
  return t;
}

inline void save_timeline(const std::filesystem::path& p, const Timeline& t) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  write_timeline(os, t);
}

inline Timeline load_timeline(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot open timeline " + p.string());
  return read_timeline(is);
}

// ---------------------------------------------------------------------------
// Synthetic segmentation files

struct SynthOptions {
  double min_total_s = 20.0;
  double max_total_s = 120.0;
  // Mean segment length per label (noise, music, speech, silence).
  std::array<double, 4> mean_s = {5.0, 12.0, 10.0, 0.5};
  double min_segment_s = 0.1;
  double max_over_mean = 4.0;   // truncation point as a multiple of the mean
  double silence_ratio = 0.5;   // share of transitions separated by silence
  int sample_rate = kWorkingRate;
};

namespace detail {

/// Mean of an exponential with scale s truncated to [a, b].
inline double truncated_exp_mean(double s, double a, double b) {
  const double w = b - a, e = std::exp(-w / s);
  return a + s - w * e / (1.0 - e);
}

/// Scale whose [a, b]-truncated exponential has the requested mean.
inline double truncated_exp_scale(double mean, double a, double b) {
  if (!(mean > a && mean < 0.5 * (a + b))) throw ConfigError("segment mean must lie in (min, (min + max) / 2)");
  double lo = 1e-9 * mean, hi = 1e6 * mean;
  for (int i = 0; i < 200; ++i) {
    const double mid = std::sqrt(lo * hi);
    (truncated_exp_mean(mid, a, b) < mean ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

}  // namespace detail

/// Draws segment labels and lengths. Content classes never repeat back to
/// back, so every boundary is a real transition; silence only ever sits
/// between two content segments. The last segment is cut to fit the total.
inline Timeline plan_timeline(const SynthOptions& opt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 4> scale{};
  for (std::size_t c = 0; c < 4; ++c) {
    scale[c] = detail::truncated_exp_scale(opt.mean_s[c], opt.min_segment_s, opt.max_over_mean * opt.mean_s[c]);
  }
  auto draw = [&](int c) {
    const auto i = static_cast<std::size_t>(c);
    const double a = opt.min_segment_s, b = opt.max_over_mean * opt.mean_s[i], s = scale[i];
    return a - s * std::log(1.0 - u(rng) * (1.0 - std::exp(-(b - a) / s)));
  };

  Timeline t;
  t.sample_rate = opt.sample_rate;
  t.n_samples = static_cast<std::size_t>(std::llround((opt.min_total_s + (opt.max_total_s - opt.min_total_s) * u(rng)) *
                                                      opt.sample_rate));
  int prev_content = -1;
  bool prev_silence = true;  // no leading silence
  std::size_t pos = 0;
  while (pos < t.n_samples) {
    int label;
    if (!prev_silence && u(rng) < opt.silence_ratio) {
      label = kSilence;
    } else if (prev_content < 0) {
      label = static_cast<int>(u(rng) * kNumClasses) % kNumClasses;
    } else {
      label = (prev_content + 1 + (u(rng) < 0.5 ? 0 : 1)) % kNumClasses;
    }
    const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(draw(label) * opt.sample_rate)));
    const std::size_t end = std::min(t.n_samples, pos + len);
    t.segments.push_back({label, pos, end});
    pos = end;
    prev_silence = label == kSilence;
    if (!prev_silence) prev_content = label;
  }
  return t;
}

/// Audio pools indexed by label; pools[kSilence] holds natural silence.
using SegmentPools = std::array<std::vector<AudioClip>, 4>;

/// Fills each planned segment from its pool: random clip, random offset,
/// continuing with further random clips until the segment is full.
inline AudioClip render_timeline(const Timeline& t, const SegmentPools& pools, std::mt19937_64& rng) {
  for (const auto& s : t.segments) {
    const auto& pool = pools[static_cast<std::size_t>(s.label)];
    if (pool.empty()) throw ConfigError(std::string("empty ") + class_name(s.label) + " pool");
    for (const auto& c : pool) {
      if (c.empty()) throw ConfigError(std::string("empty clip in ") + class_name(s.label) + " pool");
    }
  }
  AudioClip out;
  out.sample_rate = t.sample_rate;
  out.samples.reserve(t.n_samples);
  for (const auto& s : t.segments) {
    const auto& pool = pools[static_cast<std::size_t>(s.label)];
    std::size_t need = s.size();
    while (need > 0) {
      const AudioClip& c = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      const std::size_t off = std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng);
      const std::size_t n = std::min(need, c.size() - off);
      out.samples.insert(out.samples.end(), c.samples.begin() + static_cast<std::ptrdiff_t>(off),
                         c.samples.begin() + static_cast<std::ptrdiff_t>(off + n));
      need -= n;
    }
  }
  return out;
}

struct SynthResult {
  AudioClip audio;
  Timeline truth;
};

inline SynthResult synth_timeline(const SegmentPools& pools, std::uint64_t seed, const SynthOptions& opt = {}) {
  for (std::size_t c = 0; c < 4; ++c) {
    if (pools[c].empty()) throw ConfigError(std::string("empty ") + class_name(static_cast<int>(c)) + " pool");
  }
  std::mt19937_64 rng(seed);
  Timeline t = plan_timeline(opt, rng);
  AudioClip a = render_timeline(t, pools, rng);
  return {std::move(a), std::move(t)};
}

/// Content pools from preprocessed files of one split; silence from the quiet
/// stretches of the same raw files.
inline SegmentPools build_pools(const DatasetManifest& manifest, Split split, const std::filesystem::path& root = {},
                                const dsp::PreprocessOptions& pre = {}) {
  SegmentPools pools;
  for (const auto& r : manifest.select(split)) {
    const std::filesystem::path p = std::filesystem::path(r.path).is_absolute() ? std::filesystem::path(r.path) : root / r.path;
    AudioClip raw = load_wav(p);
    if (raw.sample_rate != kWorkingRate) raw = resample(raw, kWorkingRate);
    AudioClip content = dsp::preprocess(raw, pre);
    if (!content.empty()) pools[static_cast<std::size_t>(r.label)].push_back(std::move(content));
    AudioClip quiet = dsp::silence_portions(raw, pre.silence_frame_ms, pre.silence_threshold_db);
    if (!quiet.empty()) pools[kSilence].push_back(std::move(quiet));
  }
  return pools;
}

// ---------------------------------------------------------------------------
// Prediction

struct SegmentPrediction {
  std::vector<std::array<double, 3>> probs;  // per frame
  std::vector<int> labels;                   // argmax of probs

  std::size_t size() const { return labels.size(); }
};

inline int argmax3(const std::array<double, 3>& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline std::size_t window_frames(double window_s, int rate = kWorkingRate) {
  return dsp::frame_count(static_cast<std::size_t>(std::llround(window_s * rate)), kFrameLen, kFrameHop);
}

/// Classifies a window centered on every stride-th frame (clamped at the file
/// edges) and holds that result for the following stride - 1 frames.
inline SegmentPrediction sliding_predict(const Classifier& clf, const FeatureMatrix& f, double window_s,
                                         std::size_t stride = 1, std::size_t threads = 1) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  std::size_t w = window_frames(window_s);
  if (w < clf.min_frames()) {
    throw ConfigError("window of " + std::to_string(w) + " frames is below the model minimum of " +
                      std::to_string(clf.min_frames()));
  }
  const std::size_t T = f.frames();
  SegmentPrediction out;
  out.probs.resize(T);
  out.labels.resize(T);
  if (T == 0) return out;
  if (T < w) {
    if (T < clf.min_frames()) throw TooShortError("input has fewer frames than the model minimum");
    w = T;
  }
  auto start_of = [&](std::size_t t) {
    const auto s = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(w / 2);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(s, 0, static_cast<std::ptrdiff_t>(T - w)));
  };
  const std::size_t n_anchor = (T + stride - 1) / stride;
  auto work = [&](std::size_t a0, std::size_t a1) {
    std::size_t cached_start = std::numeric_limits<std::size_t>::max();
    std::array<double, 3> cached{};
    for (std::size_t a = a0; a < a1; ++a) {
      const std::size_t t = a * stride, s = start_of(t);
      if (s != cached_start) {
        const auto p = clf.probs(f.slice(s, w));
        std::copy_n(p.begin(), 3, cached.begin());
        cached_start = s;
      }
      for (std::size_t k = t; k < std::min(T, t + stride); ++k) out.probs[k] = cached;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n_anchor));
  if (threads == 1) {
    work(0, n_anchor);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work, n_anchor * i / threads, n_anchor * (i + 1) / threads);
    for (auto& th : pool) th.join();
  }
  for (std::size_t t = 0; t < T; ++t) out.labels[t] = argmax3(out.probs[t]);
  return out;
}

namespace detail {

/// Per-class running median over [t - len/2, t - len/2 + len), shrunk at the
/// edges; the lower median is taken for even counts. Not renormalized.
inline std::vector<std::array<double, 3>> running_median(const SegmentPrediction& pred, std::size_t len) {
  const std::size_t T = pred.size();
  std::vector<std::array<double, 3>> out(T);
  std::vector<double> buf;
  for (std::size_t t = 0; t < T; ++t) {
    const auto lo_s = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(len / 2);
    const auto hi_s = std::min(static_cast<std::ptrdiff_t>(T), lo_s + static_cast<std::ptrdiff_t>(len));
    const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, lo_s));
    const auto hi = static_cast<std::size_t>(hi_s);
    for (std::size_t c = 0; c < 3; ++c) {
      buf.clear();
      for (std::size_t k = lo; k < hi; ++k) buf.push_back(pred.probs[k][c]);
      const auto mid = buf.begin() + static_cast<std::ptrdiff_t>((buf.size() - 1) / 2);
      std::nth_element(buf.begin(), mid, buf.end());
      out[t][c] = *mid;
    }
  }
  return out;
}

}  // namespace detail

/// Running median per class, rows renormalized, labels recomputed.
inline SegmentPrediction median_filter(const SegmentPrediction& pred, std::size_t len = 200) {
  if (len == 0) throw ConfigError("median filter length must be >= 1");
  if (len == 1) return pred;  // exact; renormalizing could move the last bit
  SegmentPrediction out;
  out.probs = detail::running_median(pred, len);
  out.labels.resize(pred.size());
  for (std::size_t t = 0; t < pred.size(); ++t) {
    auto& m = out.probs[t];
    const double s = m[0] + m[1] + m[2];
    if (s > 0.0) {
      for (double& v : m) v /= s;
    } else {
      m = pred.probs[t];  // every channel's median is zero: keep the raw row
    }
    out.labels[t] = argmax3(m);
  }
  return out;
}

struct SegmentOptions {
  double window_s = 1.0;
  std::size_t median_len = 200;  // 1 disables smoothing
  std::size_t stride = 1;
  std::size_t threads = 1;
};

/// Raw and smoothed frame predictions for one recording. The audio is only
/// resampled: trimming would break frame alignment with the truth, and
/// per-window loudness equalization would lift silence to speech level.
struct SegmentRun {
  SegmentPrediction raw;
  SegmentPrediction smoothed;
};

inline SegmentRun segment_audio(const Classifier& clf, const AudioClip& audio, const SegmentOptions& opt = {}) {
  const AudioClip a = audio.sample_rate == kWorkingRate ? audio : resample(audio, kWorkingRate);
  const FeatureMatrix f = dsp::FeatureExtractor(clf.feature_kind())(a);
  SegmentRun r;
  r.raw = sliding_predict(clf, f, opt.window_s, opt.stride, opt.threads);
  r.smoothed = opt.median_len > 1 ? median_filter(r.raw, opt.median_len) : r.raw;
  return r;
}

inline void write_prediction(std::ostream& os, const SegmentPrediction& p) {
  os.precision(10);
  for (std::size_t t = 0; t < p.size(); ++t) {
    os << static_cast<double>(t * kFrameHop) / kWorkingRate;
    for (double v : p.probs[t]) os << '\t' << v;
    os << '\n';
  }
}

inline SegmentPrediction read_prediction(std::istream& is) {
  SegmentPrediction p;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    double t = 0;
    std::array<double, 3> row{};
    std::string extra;
    if (!(f >> t >> row[0] >> row[1] >> row[2]) || (f >> extra)) {
      throw DataError("prediction line " + std::to_string(lineno) + ": expected t<TAB>p_noise<TAB>p_music<TAB>p_speech");
    }
    p.probs.push_back(row);
    p.labels.push_back(argmax3(row));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Scoring

struct SegmentScore {
  std::size_t frames = 0;  // scored (non-silence) frames
  double accuracy = 0.0;
  double sns_accuracy = 0.0;  // speech vs. everything else
  std::array<std::array<std::size_t, 3>, 3> counts{};  // [truth][predicted]
  std::array<std::array<double, 3>, 3> confusion{};    // rows normalized by truth count
  std::array<double, 3> f1{};                          // NaN when a class is absent from both sides
  double mean_f1 = 0.0;                                // over defined classes
};

/// Frame- or clip-level metrics; truth entries equal to kSilence are skipped.
inline SegmentScore score_labels(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw EvaluationError("prediction has " + std::to_string(predicted.size()) + " frames, truth has " +
                          std::to_string(truth.size()));
  }
  SegmentScore s;
  std::size_t correct = 0, sns_correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kSilence) continue;
    if (truth[i] < 0 || truth[i] >= kNumClasses || predicted[i] < 0 || predicted[i] >= kNumClasses) {
      throw EvaluationError("label out of range at frame " + std::to_string(i));
    }
    ++s.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    ++s.frames;
    correct += predicted[i] == truth[i];
    sns_correct += (predicted[i] == kSpeech) == (truth[i] == kSpeech);
  }
  if (s.frames == 0) throw EvaluationError("no non-silence frames to score");
  s.accuracy = static_cast<double>(correct) / static_cast<double>(s.frames);
  s.sns_accuracy = static_cast<double>(sns_correct) / static_cast<double>(s.frames);
  double f1_sum = 0.0;
  std::size_t f1_n = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    std::size_t row = 0, col = 0;
    for (std::size_t c = 0; c < 3; ++c) row += s.counts[r][c], col += s.counts[c][r];
    for (std::size_t c = 0; c < 3; ++c) {
      s.confusion[r][c] = row ? static_cast<double>(s.counts[r][c]) / static_cast<double>(row) : 0.0;
    }
    const double tp = static_cast<double>(s.counts[r][r]);
    const double denom = static_cast<double>(row + col);
    s.f1[r] = denom > 0 ? 2.0 * tp / denom : std::nan("");
    if (denom > 0) f1_sum += s.f1[r], ++f1_n;
  }
  s.mean_f1 = f1_sum / static_cast<double>(f1_n);
  return s;
}

inline SegmentScore score(const SegmentPrediction& pred, const Timeline& truth) {
  return score_labels(pred.labels, truth.frame_labels());
}

}  // namespace swishnet
