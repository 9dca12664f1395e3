// SPDX-License-Identifier: Apache-2.0
#include <swishnet/segmenter.hpp>
#include <swishnet/toy_corpus.hpp>

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

using namespace swishnet;
using Catch::Approx;

namespace {

constexpr int N = kNoise, M = kMusic, S = kSpeech, Q = kSilence;

/// Reports column 0 of the first window frame through probs, and records
/// every window start it was asked about.
class ProbeClassifier final : public Classifier {
 public:
  mutable std::vector<double> firsts;
  std::size_t min = 1;

  std::vector<double> probs(const FeatureMatrix& f) const override {
    firsts.push_back(f.values(0, 0));
    const double x = f.values(0, 0);
    const double a = 1.0 / (1.0 + x * x);
    return {a, (1.0 - a) / 2.0, (1.0 - a) / 2.0};
  }
  std::size_t min_frames() const override { return min; }
  FeatureKind feature_kind() const override { return FeatureKind::Mfcc; }
  std::string name() const override { return "probe"; }
  std::size_t n_params() const override { return 0; }
  std::size_t weight_bytes() const override { return 0; }
};

FeatureMatrix ramp(std::size_t frames) {
  FeatureMatrix f{Grid(frames, 20)};
  for (std::size_t t = 0; t < frames; ++t) f.values(t, 0) = static_cast<double>(t);
  return f;
}

SegmentPrediction from_rows(std::vector<std::array<double, 3>> rows) {
  SegmentPrediction p;
  p.probs = std::move(rows);
  for (const auto& r : p.probs) p.labels.push_back(argmax3(r));
  return p;
}

SegmentPrediction one_hot_stream(const std::vector<int>& labels) {
  std::vector<std::array<double, 3>> rows;
  for (int l : labels) {
    std::array<double, 3> r{0.1, 0.1, 0.1};
    r[static_cast<std::size_t>(l)] = 0.8;
    rows.push_back(r);
  }
  return from_rows(rows);
}

/// Independent lower-median oracle: explicit window, full sort.
std::vector<std::array<double, 3>> brute_median(const SegmentPrediction& p, std::size_t len) {
  const auto T = static_cast<long>(p.size());
  std::vector<std::array<double, 3>> out(p.size());
  for (long t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> w;
      for (long k = t - static_cast<long>(len / 2); k < t - static_cast<long>(len / 2) + static_cast<long>(len); ++k) {
        if (k >= 0 && k < T) w.push_back(p.probs[static_cast<std::size_t>(k)][c]);
      }
      std::sort(w.begin(), w.end());
      out[static_cast<std::size_t>(t)][c] = w[(w.size() - 1) / 2];
    }
  }
  return out;
}

/// Pools where every sample of a class has one constant value, so rendered
/// audio can be checked sample by sample against the plan.
SegmentPools constant_pools() {
  SegmentPools p;
  const double level[4] = {0.1, 0.2, 0.3, 0.0};
  const std::size_t lengths[3] = {1000, 3333, 16000};
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t n : lengths) p[c].push_back(AudioClip{std::vector<double>(n, level[c]), kWorkingRate});
  }
  return p;
}

}  // namespace

TEST_CASE("truncated exponential matches its requested mean", "[synth]") {
  for (double m : {0.5, 5.0, 10.0, 12.0}) {
    const double a = 0.1, b = 4.0 * m;
    const double s = detail::truncated_exp_scale(m, a, b);
    // Simpson's rule on x * pdf(x) over [a, b].
    const int n = 20000;
    const double h = (b - a) / n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = a + i * h, wgt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      num += wgt * x * std::exp(-x / s);
      den += wgt * std::exp(-x / s);
    }
    CHECK(num / den == Approx(m).epsilon(1e-8));
  }
  CHECK_THROWS_AS(detail::truncated_exp_scale(5.0, 0.1, 6.0), ConfigError);
}

TEST_CASE("500 planned timelines have the requested segment statistics", "[synth]") {
  std::mt19937_64 rng(2024);
  const SynthOptions opt;
  std::array<double, 4> sum{};
  std::array<std::size_t, 4> count{};
  std::size_t silence_gaps = 0, transitions = 0;
  for (int i = 0; i < 500; ++i) {
    const Timeline t = plan_timeline(opt, rng);
    CHECK(t.n_samples >= 20 * kWorkingRate);
    CHECK(t.n_samples <= 120 * kWorkingRate);
    REQUIRE(!t.segments.empty());
    CHECK(t.segments.front().begin == 0);
    CHECK(t.segments.back().end == t.n_samples);
    CHECK(t.segments.front().label != kSilence);
    for (std::size_t k = 0; k < t.segments.size(); ++k) {
      const Segment& s = t.segments[k];
      CHECK(s.size() > 0);
      if (k > 0) {
        CHECK(s.begin == t.segments[k - 1].end);
        CHECK(s.label != t.segments[k - 1].label);
        if (s.label == kSilence) CHECK(t.segments[k - 1].label != kSilence);
      }
      if (k + 2 < t.segments.size() && s.label != kSilence) {
        ++transitions;
        silence_gaps += t.segments[k + 1].label == kSilence;
        if (t.segments[k + 1].label == kSilence) CHECK(t.segments[k + 2].label != s.label);
      }
      sum[static_cast<std::size_t>(s.label)] += static_cast<double>(s.size()) / kWorkingRate;
      ++count[static_cast<std::size_t>(s.label)];
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    REQUIRE(count[c] > 50);
    const double mean = sum[c] / static_cast<double>(count[c]);
    INFO(class_name(static_cast<int>(c)) << " mean " << mean);
    CHECK(std::abs(mean - opt.mean_s[c]) <= 0.2 * opt.mean_s[c]);
  }
  CHECK(static_cast<double>(silence_gaps) / static_cast<double>(transitions) == Approx(0.5).margin(0.05));
}

TEST_CASE("synth_timeline is deterministic and sample-exact", "[synth]") {
  const SegmentPools pools = constant_pools();
  const auto a = synth_timeline(pools, 11);
  const auto b = synth_timeline(pools, 11);
  CHECK(a.audio.samples == b.audio.samples);
  CHECK(a.truth == b.truth);
  CHECK(!(synth_timeline(pools, 12).truth == a.truth));

  REQUIRE(a.audio.size() == a.truth.n_samples);
  std::size_t total = 0;
  const double level[4] = {0.1, 0.2, 0.3, 0.0};
  for (const auto& s : a.truth.segments) {
    total += s.size();
    for (std::size_t i = s.begin; i < s.end; ++i) REQUIRE(a.audio.samples[i] == level[s.label]);
  }
  CHECK(total == a.audio.size());

  SegmentPools missing = pools;
  missing[kSilence].clear();
  CHECK_THROWS_AS(synth_timeline(missing, 1), ConfigError);
}

TEST_CASE("frame labels follow the plan's runs", "[synth]") {
  const SegmentPools pools = constant_pools();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = synth_timeline(pools, seed);
    const auto labels = r.truth.frame_labels();
    CHECK(labels.size() == dsp::frame_count(r.audio.size(), 400, 160));
    // Every segment long enough to hold a frame center yields exactly the
    // frames whose centers fall inside it.
    std::size_t i = 0;
    for (const auto& s : r.truth.segments) {
      std::size_t expected = 0;
      for (std::size_t c = 0; c < labels.size(); ++c) expected += (c * 160 + 200) >= s.begin && (c * 160 + 200) < s.end;
      for (std::size_t k = 0; k < expected; ++k, ++i) REQUIRE(labels[i] == s.label);
    }
    CHECK(i == labels.size());
    CHECK(labels_to_timeline(labels, r.truth.n_samples).frame_labels() == labels);
  }
}

TEST_CASE("timeline text round-trips", "[synth]") {
  const auto r = synth_timeline(constant_pools(), 5);
  std::stringstream ss;
  write_timeline(ss, r.truth);
  CHECK(read_timeline(ss) == r.truth);
  std::istringstream gap("0\t1\tnoise\n1.5\t2\tmusic\n");
  CHECK_THROWS_AS(read_timeline(gap), DataError);
  std::istringstream bad("0\t1\tjazz\n");
  CHECK_THROWS_AS(read_timeline(bad), DataError);
}

TEST_CASE("build_pools takes content from preprocessed files and silence from raw ends", "[synth]") {
  const auto dir = std::filesystem::temp_directory_path() / "swishnet_pools_test";
  std::filesystem::remove_all(dir);
  toy::CorpusOptions co;
  co.files_per_class = 4;
  co.min_seconds = co.max_seconds = 1.0;
  const auto files = toy::write_corpus(dir, co);
  const auto man = split_dataset(files, 0);
  const SegmentPools pools = build_pools(man, Split::Test, dir);
  for (std::size_t c = 0; c < 3; ++c) {
    REQUIRE(pools[c].size() == 1);
    CHECK(pools[c][0].duration_s() == Approx(1.0).margin(0.03));
  }
  REQUIRE(pools[kSilence].size() == 3);
  for (const auto& q : pools[kSilence]) {
    CHECK(q.duration_s() == Approx(0.5).margin(0.03));
    for (double v : q.samples) CHECK(std::abs(v) < 1e-3);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sliding windows are centered and clamped", "[sliding]") {
  ProbeClassifier probe;
  const FeatureMatrix f = ramp(300);
  const auto p = sliding_predict(probe, f, 1.0);
  REQUIRE(p.size() == 300);
  REQUIRE(probe.firsts.size() == 300 - 98 + 1);  // distinct clamped starts only
  const std::size_t w = 98;
  for (std::size_t t = 0; t < 300; ++t) {
    const long start = std::clamp(static_cast<long>(t) - static_cast<long>(w / 2), 0L, 300L - static_cast<long>(w));
    const double a = 1.0 / (1.0 + static_cast<double>(start * start));
    CHECK(p.probs[t][0] == a);
    CHECK(p.probs[t][0] + p.probs[t][1] + p.probs[t][2] == Approx(1.0).margin(1e-9));
  }
  CHECK(window_frames(0.5) == 48);
  CHECK(window_frames(2.0) == 198);

  SECTION("stride holds labels") {
    ProbeClassifier q;
    const auto s = sliding_predict(q, f, 1.0, 10);
    for (std::size_t t = 0; t < 300; ++t) CHECK(s.probs[t] == p.probs[t / 10 * 10]);
  }
  SECTION("threads do not change the result") {
    const Model m = build(presets::swishnet_slim(), 3);
    const NetClassifier net(m);
    std::mt19937_64 rng(1);
    FeatureMatrix g{Grid(250, 20)};
    std::normal_distribution<double> z;
    for (double& v : g.values.data) v = z(rng);
    const auto one = sliding_predict(net, g, 0.5, 1, 1);
    const auto four = sliding_predict(net, g, 0.5, 1, 4);
    CHECK(one.probs == four.probs);
  }
  SECTION("short inputs") {
    ProbeClassifier q;
    q.min = 16;
    CHECK_THROWS_AS(sliding_predict(q, f, 0.1), ConfigError);  // 8-frame window
    CHECK(sliding_predict(q, ramp(20), 1.0).size() == 20);      // whole file as one window
    CHECK_THROWS_AS(sliding_predict(q, ramp(10), 1.0), TooShortError);
  }
}

TEST_CASE("sliding prediction agrees with the clip classifier", "[sliding]") {
  const Model m = build(presets::swishnet_slim(), 4);
  const NetClassifier net(m);
  std::mt19937_64 rng(2);
  const AudioClip audio{toy::music_like(3 * kWorkingRate, rng), kWorkingRate};
  const FeatureMatrix f = dsp::FeatureExtractor(FeatureKind::Mfcc)(audio);
  const auto p = sliding_predict(net, f, 1.0);
  for (std::size_t t : {std::size_t{0}, std::size_t{49}, std::size_t{150}, f.frames() - 1}) {
    const std::size_t start = std::min<std::size_t>(t >= 49 ? t - 49 : 0, f.frames() - 98);
    const auto direct = net.probs(f.slice(start, 98));
    for (std::size_t c = 0; c < 3; ++c) CHECK(p.probs[t][c] == direct[c]);
  }
}

TEST_CASE("stationary input gives one label everywhere", "[sliding]") {
  // A 100 Hz tone repeats every hop, so every frame and window is identical.
  AudioClip tone{std::vector<double>(30 * kWorkingRate), kWorkingRate};
  for (std::size_t i = 0; i < tone.size(); ++i) {
    tone.samples[i] = 0.1 * std::sin(2.0 * std::numbers::pi * 100.0 * static_cast<double>(i) / kWorkingRate);
  }
  const NetClassifier net(build(presets::swishnet_slim(), 5));
  SegmentOptions opt;
  opt.stride = 10;
  const auto r = segment_audio(net, tone, opt);
  REQUIRE(r.raw.size() == dsp::frame_count(30 * kWorkingRate, 400, 160));
  CHECK(r.raw.size() == 2998);
  for (int l : r.raw.labels) CHECK(l == r.raw.labels.front());
  for (int l : r.smoothed.labels) CHECK(l == r.raw.labels.front());
}

TEST_CASE("median filter", "[median]") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_stream = [&](std::size_t n) {
    std::vector<std::array<double, 3>> rows(n);
    for (auto& r : rows) {
      double s = 0;
      for (double& v : r) s += (v = u(rng));
      for (double& v : r) v /= s;
    }
    return from_rows(rows);
  };

  SECTION("matches a brute-force lower median and keeps values from the window") {
    for (std::size_t len : {1u, 2u, 5u, 200u, 201u}) {
      const auto p = random_stream(450);
      const auto med = detail::running_median(p, len);
      const auto oracle = brute_median(p, len);
      CHECK(med == oracle);
      const auto f = median_filter(p, len);
      for (std::size_t t = 0; t < p.size(); ++t) {
        CHECK(f.probs[t][0] + f.probs[t][1] + f.probs[t][2] == Approx(1.0).margin(1e-9));
        for (std::size_t c = 0; c < 3; ++c) {
          bool member = false;
          for (std::size_t k = 0; k < p.size(); ++k) member = member || p.probs[k][c] == med[t][c];
          CHECK(member);
        }
      }
    }
  }
  SECTION("length 1 is the identity") {
    const auto p = random_stream(50);
    CHECK(median_filter(p, 1).probs == p.probs);
    CHECK(median_filter(p, 1).labels == p.labels);
  }
  SECTION("constant streams are fixed points") {
    const auto p = from_rows(std::vector<std::array<double, 3>>(500, {0.2, 0.5, 0.3}));
    const auto f = median_filter(p, 200);
    for (const auto& r : f.probs) {
      CHECK(r[0] == Approx(0.2).margin(1e-15));
      CHECK(r[1] == Approx(0.5).margin(1e-15));
    }
    CHECK(f.labels == p.labels);
  }
  SECTION("a single glitch is removed") {
    std::vector<int> labels(601, M);
    labels[300] = S;
    CHECK(median_filter(one_hot_stream(labels), 200).labels == std::vector<int>(601, M));
  }
  SECTION("isolated flips at least 200 frames apart are all removed") {
    for (int trial = 0; trial < 30; ++trial) {
      const int base = static_cast<int>(u(rng) * 3) % 3;
      std::vector<int> labels(3000 + static_cast<std::size_t>(u(rng) * 2000), base);
      for (std::size_t pos = static_cast<std::size_t>(u(rng) * 200); pos < labels.size();
           pos += 200 + static_cast<std::size_t>(u(rng) * 300)) {
        labels[pos] = (base + 1 + (u(rng) < 0.5 ? 0 : 1)) % 3;
      }
      CHECK(median_filter(one_hot_stream(labels), 200).labels == std::vector<int>(labels.size(), base));
    }
  }
}

TEST_CASE("scoring", "[score]") {
  SECTION("hand-built 10-frame fixture") {
    const std::vector<int> truth = {N, N, N, M, M, S, S, S, Q, Q};
    const std::vector<int> pred = {N, M, N, M, S, S, S, N, N, M};
    const SegmentScore s = score_labels(pred, truth);
    CHECK(s.frames == 8);
    CHECK(s.accuracy == 5.0 / 8.0);
    CHECK(s.sns_accuracy == 6.0 / 8.0);
    const std::array<std::array<std::size_t, 3>, 3> counts = {{{2, 1, 0}, {0, 1, 1}, {1, 0, 2}}};
    CHECK(s.counts == counts);
    CHECK(s.confusion[0][0] == 2.0 / 3.0);
    CHECK(s.confusion[0][1] == 1.0 / 3.0);
    CHECK(s.confusion[1][1] == 0.5);
    CHECK(s.confusion[1][2] == 0.5);
    CHECK(s.confusion[2][0] == 1.0 / 3.0);
    CHECK(s.confusion[2][2] == 2.0 / 3.0);
    CHECK(s.f1[0] == 2.0 / 3.0);
    CHECK(s.f1[1] == 0.5);
    CHECK(s.f1[2] == 2.0 / 3.0);
    CHECK(s.mean_f1 == Approx(11.0 / 18.0).epsilon(1e-15));
  }
  SECTION("perfect predictions") {
    const std::vector<int> truth = {N, M, S, Q, S, M, N};
    std::vector<int> pred = truth;
    pred[3] = M;  // silence frame: ignored
    const SegmentScore s = score_labels(pred, truth);
    CHECK(s.accuracy == 1.0);
    CHECK(s.sns_accuracy == 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(s.f1[i] == 1.0);
      for (std::size_t j = 0; j < 3; ++j) CHECK(s.confusion[i][j] == (i == j ? 1.0 : 0.0));
    }
  }
  SECTION("degenerate inputs") {
    CHECK_THROWS_AS(score_labels({N, N}, {Q, Q}), EvaluationError);
    CHECK_THROWS_AS(score_labels({N}, {N, N}), EvaluationError);
    SegmentPrediction p = one_hot_stream({N, N, N});
    Timeline t{kWorkingRate, 400 + 160 * 3, {{N, 0, 400 + 160 * 3}}};  // 4 frames
    CHECK_THROWS_AS(score(p, t), EvaluationError);
  }
  SECTION("relabeling classes permutes the confusion matrix; SNS never below accuracy") {
    std::mt19937_64 rng(7);
    const int perm[3] = {2, 0, 1};
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> truth(200), pred(200);
      for (std::size_t i = 0; i < 200; ++i) truth[i] = static_cast<int>(rng() % 4), pred[i] = static_cast<int>(rng() % 3);
      std::vector<int> pt = truth, pp = pred;
      for (auto& v : pt) v = v == Q ? Q : perm[v];
      for (auto& v : pp) v = perm[v];
      const SegmentScore a = score_labels(pred, truth), b = score_labels(pp, pt);
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) CHECK(a.counts[i][j] == b.counts[static_cast<std::size_t>(perm[i])][static_cast<std::size_t>(perm[j])]);
      }
      CHECK(a.accuracy == b.accuracy);
      CHECK(a.sns_accuracy >= a.accuracy);
    }
  }
}

TEST_CASE("prediction dump round-trips", "[score]") {
  const auto p = one_hot_stream({N, M, S, S});
  std::stringstream ss;
  write_prediction(ss, p);
  const auto q = read_prediction(ss);
  CHECK(q.labels == p.labels);
  CHECK(q.probs == p.probs);
  std::istringstream bad("0\t0.5\t0.5\n");
  CHECK_THROWS_AS(read_prediction(bad), DataError);
}
