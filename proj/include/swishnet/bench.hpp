// SPDX-License-Identifier: Apache-2.0
//
// Batch-1 latency harness: model-only (features precomputed) and end-to-end
// (feature extraction + forward), with the timer's own overhead measured.
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/classifier.hpp>
#include <swishnet/dsp.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace swishnet {

struct LatencyStats {
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

/// Median (mean of the middle pair for even counts), mean and nearest-rank p95.
inline LatencyStats summarize(std::vector<double> ms) {
  if (ms.empty()) return {};
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  LatencyStats s;
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(n);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

struct BenchOptions {
  double clip_len_s = 1.0;
  std::size_t iters = 100;  // measured runs per thread
  std::size_t warmup = 10;  // discarded runs per thread
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string model;
  double clip_len_s = 0.0;
  std::size_t frames = 0;
  std::size_t threads = 1;
  LatencyStats model_only;
  LatencyStats end_to_end;
  double overhead_ms = 0.0;      // median cost of timing an empty call
  double throughput_per_s = 0.0; // model-only inferences per second, all threads
  std::size_t n_params = 0;
  std::size_t weight_bytes = 0;
  std::vector<double> samples_ms;  // model-only, post-warmup, all threads
};

namespace detail {

template <typename F>
std::vector<double> time_calls(F&& f, std::size_t warmup, std::size_t iters) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  ms.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  return ms;
}

/// Runs `body(thread_index)` on n threads (inline when n == 1).
template <typename F>
void on_threads(std::size_t n, F&& body) {
  if (n <= 1) {
    body(std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(body, i);
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline BenchReport bench_latency(const Classifier& clf, const BenchOptions& opt = {}) {
  if (opt.iters == 0) throw ConfigError("bench needs at least one iteration");
  const std::size_t threads = std::max<std::size_t>(1, opt.threads);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> z(0.0, 0.1);
  AudioClip audio{std::vector<double>(static_cast<std::size_t>(std::llround(opt.clip_len_s * kWorkingRate))),
                  kWorkingRate};
  for (double& v : audio.samples) v = z(rng);
  const dsp::FeatureExtractor fx(clf.feature_kind());
  const FeatureMatrix features = fx(audio);
  if (features.frames() < clf.min_frames()) throw TooShortError("bench clip is shorter than the model minimum");

  BenchReport r;
  r.model = clf.name();
  r.clip_len_s = opt.clip_len_s;
  r.frames = features.frames();
  r.threads = threads;
  r.n_params = clf.n_params();
  r.weight_bytes = clf.weight_bytes();

  volatile double sink = 0.0;
  r.overhead_ms = summarize(detail::time_calls([&] { sink = sink + 1.0; }, opt.warmup, opt.iters)).median_ms;

  std::vector<std::vector<double>> per_thread(threads);
  std::vector<double> keep(threads, 0.0);  // consumes results so the calls stay live
  const auto wall0 = std::chrono::steady_clock::now();
  detail::on_threads(threads, [&](std::size_t t) {
    double local = 0.0;
    per_thread[t] = detail::time_calls([&] { local += clf.probs(features)[0]; }, opt.warmup, opt.iters);
    keep[t] = local;
  });
  sink = sink + std::accumulate(keep.begin(), keep.end(), 0.0);
  const double wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  for (const auto& v : per_thread) r.samples_ms.insert(r.samples_ms.end(), v.begin(), v.end());
  r.model_only = summarize(r.samples_ms);
  r.throughput_per_s = static_cast<double>(threads * (opt.iters + opt.warmup)) / wall_s;

  r.end_to_end = summarize(detail::time_calls([&] { sink = sink + clf.probs(fx(audio))[0]; }, opt.warmup, opt.iters));
  return r;
}

inline void write_bench_report(std::ostream& os, const BenchReport& r) {
  os << "model            " << r.model << '\n'
     << "clip length      " << r.clip_len_s << " s (" << r.frames << " frames)\n"
     << "threads          " << r.threads << '\n'
     << "parameters       " << r.n_params << '\n'
     << "weight file      " << r.weight_bytes << " bytes\n"
     << "model-only ms    median " << r.model_only.median_ms << "  mean " << r.model_only.mean_ms << "  p95 "
     << r.model_only.p95_ms << '\n'
     << "end-to-end ms    median " << r.end_to_end.median_ms << "  mean " << r.end_to_end.mean_ms << "  p95 "
     << r.end_to_end.p95_ms << '\n'
     << "timer overhead   " << r.overhead_ms << " ms\n"
     << "throughput       " << r.throughput_per_s << " /s\n"
     << "measurements     " << r.samples_ms.size() << '\n';
}

}  // namespace swishnet
