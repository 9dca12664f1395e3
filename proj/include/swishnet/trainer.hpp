// SPDX-License-Identifier: Apache-2.0
//
// Dataset preparation (manifests, splits, overlapping clips), Adam with
// cosine-annealed warm restarts, the distillation objective, and the
// minibatch training loop for SwishNet (clip-wise) and the SNN (frame-wise).
#pragma once

#include <swishnet/audio.hpp>
#include <swishnet/autodiff.hpp>
#include <swishnet/baselines.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/error.hpp>
#include <swishnet/labels.hpp>
#include <swishnet/model.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace swishnet {

// ---------------------------------------------------------------------------
// Manifests and splits

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + s + "'");
}

struct ManifestRecord {
  std::string path;
  int label = 0;
  Split split = Split::Train;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> select(Split s) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(r);
    }
    return out;
  }

  /// A file may appear in one split only.
  void check_disjoint() const {
    std::map<std::string, Split> seen;
    for (const auto& r : records) {
      auto [it, fresh] = seen.emplace(r.path, r.split);
      if (!fresh && it->second != r.split) {
        throw DataError("manifest leak: " + r.path + " is in both " + to_string(it->second) + " and " +
                        to_string(r.split));
      }
    }
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  for (const auto& r : m.records) os << r.path << '\t' << class_name(r.label) << '\t' << to_string(r.split) << '\n';
}

inline DatasetManifest read_manifest(std::istream& is) {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string path, cls, split, extra;
    if (!std::getline(fields, path, '\t') || !std::getline(fields, cls, '\t') || !std::getline(fields, split, '\t') ||
        std::getline(fields, extra, '\t')) {
      throw DataError("manifest line " + std::to_string(lineno) + ": expected path<TAB>class<TAB>split");
    }
    const int label = parse_class(cls);
    if (label >= kNumClasses) throw DataError("manifest line " + std::to_string(lineno) + ": silence is not a class");
    m.records.push_back({path, label, parse_split(split)});
  }
  m.check_disjoint();
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  write_manifest(os, m);
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  return read_manifest(is);
}

/// Per-class split sizes for fractions 65/10/25: floor each share, hand the
/// leftover files to the largest fractional parts, then make sure no split is
/// empty by borrowing from the largest.
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const double frac[3] = {0.65, 0.10, 0.25};
  std::array<std::size_t, 3> size{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    // Round the exact share first so 0.65 * 100 is 65, not 64.999...
    const double share = std::round(frac[i] * static_cast<double>(n) * 1e9) / 1e9;
    size[i] = static_cast<std::size_t>(std::floor(share));
    rem[i] = share - static_cast<double>(size[i]);
    used += size[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++size[static_cast<std::size_t>(order[i % 3])];
  for (auto& s : size) {
    if (s == 0) {
      ++s;
      --*std::max_element(size.begin(), size.end());
    }
  }
  return size;
}

/// files_per_class[c] lists the files of class c. Shuffled per class with
/// one generator seeded by `seed`, so the manifest is a function of the seed.
inline DatasetManifest split_dataset(const std::vector<std::vector<std::string>>& files_per_class,
                                     std::uint64_t seed) {
  DatasetManifest m;
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < files_per_class.size(); ++c) {
    std::vector<std::string> files = files_per_class[c];
    if (files.size() < 4) {
      throw ConfigError(std::string("class ") + class_name(static_cast<int>(c)) + " has " +
                        std::to_string(files.size()) + " files; at least 4 are needed to split");
    }
    std::sort(files.begin(), files.end());
    std::shuffle(files.begin(), files.end(), rng);
    const auto sizes = split_sizes(files.size());
    std::size_t i = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < sizes[static_cast<std::size_t>(s)]; ++k, ++i) {
        m.records.push_back({files[i], static_cast<int>(c), static_cast<Split>(s)});
      }
    }
  }
  m.check_disjoint();
  return m;
}

/// Overlapping clips starting at multiples of clip_len * (1 - overlap); the
/// trailing partial clip is dropped.
inline std::vector<AudioClip> make_clips(const AudioClip& clip, double clip_len_s, double overlap = 0.5) {
  if (clip_len_s <= 0.0 || overlap < 0.0 || overlap >= 1.0) throw ConfigError("bad clip length or overlap");
  const auto len = static_cast<std::size_t>(std::llround(clip_len_s * clip.sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(clip_len_s * (1.0 - overlap) * clip.sample_rate));
  std::vector<AudioClip> out;
  if (len == 0 || hop == 0) return out;
  for (std::size_t start = 0; start + len <= clip.samples.size(); start += hop) {
    AudioClip c;
    c.sample_rate = clip.sample_rate;
    c.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(start + len));
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

/// Bias-corrected Adam. `names` labels parameters in error messages.
inline void adam_step(AdamState& st, std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr,
                      const std::vector<std::string>& names = {}) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size()) throw ShapeError("adam_step: gradient shape mismatch");
    if (!grads[i].all_finite()) {
      throw TrainingError("non-finite gradient for parameter " + (i < names.size() ? names[i] : std::to_string(i)));
    }
  }
  if (st.m.empty()) {
    for (const Tensor& p : params) st.m.emplace_back(p.size(), 0.0), st.v.emplace_back(p.size(), 0.0);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g;
      v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g * g;
      params[i][j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + st.eps);
    }
  }
}

/// Cosine annealing within one period of length t_i.
inline double sgdr_lr(double t, double t_i, double base_lr, double min_lr) {
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t / t_i));
}

struct SgdrSchedule {
  double base_lr = 1e-3;
  double min_lr = 1e-5;
  double t0 = 10.0;      // first period, epochs
  double t_mult = 2.0;   // period growth at each restart

  /// Learning rate at fractional epoch e (counted from 0).
  double at(double e) const {
    double start = 0.0, period = t0;
    while (e >= start + period) start += period, period *= t_mult;
    return sgdr_lr(e - start, period, base_lr, min_lr);
  }
};

// ---------------------------------------------------------------------------
// Distillation

/// soft_weight * T^2 * CE(softmax(teacher/T), softmax(student/T))
///   + (1 - soft_weight) * CE(student, label), averaged over rows.
inline ad::Var distill_loss(ad::Tape& tape, ad::Var student_logits, const Tensor& teacher_logits,
                            std::span<const int> labels, double temperature, double soft_weight = 0.9) {
  if (temperature <= 0.0) throw ConfigError("distillation temperature must be > 0");
  const Tensor& s = tape.value(student_logits);
  if (teacher_logits.shape() != s.shape()) throw ShapeError("teacher and student logits differ in shape");
  const std::size_t cols = s.shape().back(), rows = s.size() / cols;
  Tensor target(s.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> z(cols);
    for (std::size_t c = 0; c < cols; ++c) z[c] = teacher_logits[r * cols + c] / temperature;
    kernels::softmax(z.data(), cols, target.data().data() + r * cols);
  }
  const ad::Var soft = ad::soft_cross_entropy(tape, ad::scale(tape, student_logits, 1.0 / temperature), target);
  const ad::Var hard = ad::cross_entropy(tape, student_logits, labels);
  return ad::add(tape, ad::scale(tape, soft, soft_weight * temperature * temperature),
                 ad::scale(tape, hard, 1.0 - soft_weight));
}

inline ad::Var distill_loss(ad::Tape& tape, ad::Var student_logits, const Tensor& teacher_logits, int label,
                            double temperature, double soft_weight = 0.9) {
  const int labels[1] = {label};
  return distill_loss(tape, student_logits, teacher_logits, std::span<const int>(labels), temperature, soft_weight);
}

using TeacherLogits = std::map<std::string, std::vector<double>>;

inline TeacherLogits read_teacher_logits(std::istream& is) {
  TeacherLogits out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id, tok;
    std::getline(fields, id, '\t');
    std::vector<double> logits;
    while (std::getline(fields, tok, '\t')) {
      try {
        std::size_t used = 0;
        logits.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError("teacher logits line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (id.empty() || logits.size() != kNumClasses) {
      throw DataError("teacher logits line " + std::to_string(lineno) + ": expected clip_id and 3 logits");
    }
    out[id] = std::move(logits);
  }
  return out;
}

inline TeacherLogits load_teacher_logits(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open teacher logits " + path.string());
  return read_teacher_logits(is);
}

inline void write_teacher_logits(std::ostream& os, const TeacherLogits& t) {
  os.precision(17);
  for (const auto& [id, l] : t) {
    os << id;
    for (double v : l) os << '\t' << v;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training

struct ClipExample {
  std::string id;  // "<path>#<clip index>"
  int label = 0;
  FeatureMatrix features;
};

inline std::string clip_id(const std::string& path, std::size_t index) { return path + "#" + std::to_string(index); }

struct DistillConfig {
  double temperature = 1.0;
  double soft_weight = 0.9;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // at the start of the epoch
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = std::nan("");
  double val_acc = std::nan("");
  double seconds = 0.0;
};

struct TrainConfig {
  double clip_len_s = 1.0;
  double overlap = 0.5;
  std::size_t epochs = 120;
  SgdrSchedule schedule;
  std::size_t base_batch = 32;  // batch size at 1 s clips; scaled by 1 / clip_len_s
  std::optional<DistillConfig> distill;
  bool fit_norm = true;         // fit input standardization on the training set
  double stop_at_train_acc = 2.0;  // > 1 disables early stopping
  std::uint64_t seed = 0;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Minibatch size under the constant-updates-per-epoch rule. For frame-wise
/// (SNN) training the batch is counted in frames and not rescaled.
inline std::size_t batch_size_for(double clip_len_s, std::size_t base_batch) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(base_batch) / clip_len_s)));
}

inline void write_metric_header(std::ostream& os) {
  os << "# epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tseconds\n";
}

inline void write_metric_row(std::ostream& os, const EpochMetrics& e) {
  os << e.epoch << '\t' << e.lr << '\t' << e.train_loss << '\t' << e.train_acc << '\t' << e.val_loss << '\t'
     << e.val_acc << '\t' << e.seconds << '\n';
}

struct TrainResult {
  Model model;  // best-validation checkpoint (last epoch when there is no validation set)
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;
  std::size_t batch_size = 0;
};

/// Mean / inverse standard deviation per channel over every frame.
inline FeatureNorm fit_feature_norm(const std::vector<ClipExample>& clips, std::size_t channels) {
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  std::size_t n = 0;
  for (const auto& c : clips) {
    for (std::size_t t = 0; t < c.features.frames(); ++t) {
      for (std::size_t j = 0; j < channels; ++j) {
        const double v = c.features.values(t, j);
        sum[j] += v, sq[j] += v * v;
      }
      ++n;
    }
  }
  FeatureNorm norm = FeatureNorm::identity(channels);
  if (n == 0) return norm;
  for (std::size_t j = 0; j < channels; ++j) {
    norm.mean[j] = sum[j] / static_cast<double>(n);
    const double var = std::max(sq[j] / static_cast<double>(n) - norm.mean[j] * norm.mean[j], 0.0);
    norm.inv_std[j] = 1.0 / std::sqrt(var + 1e-8);
  }
  return norm;
}

namespace detail {

/// Clip-level probabilities: the pooled softmax for SwishNet, the mean of
/// per-frame softmax rows for the SNN.
inline std::vector<double> clip_probs(const Plan& plan, const std::vector<double>& logits) {
  const std::size_t k = plan.n_classes, rows = logits.size() / k;
  std::vector<double> p(k, 0.0), row(k);
  for (std::size_t r = 0; r < rows; ++r) {
    kernels::softmax(logits.data() + r * k, k, row.data());
    for (std::size_t c = 0; c < k; ++c) p[c] += row[c] / static_cast<double>(rows);
  }
  return p;
}

struct EvalStats {
  double loss = 0.0;
  double acc = 0.0;
};

/// Loss (mean cross-entropy, per clip or per frame) and clip accuracy in eval mode.
inline EvalStats evaluate_clips(const Model& m, const std::vector<ClipExample>& clips) {
  EvalStats s;
  if (clips.empty()) return {std::nan(""), std::nan("")};
  const CompiledModel<double> cm(m);
  const std::size_t k = m.plan.n_classes;
  std::size_t correct = 0, loss_terms = 0;
  for (const auto& c : clips) {
    const auto logits = cm.forward(c.features);
    const std::size_t rows = logits.size() / k;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* z = logits.data() + r * k;
      const double mx = *std::max_element(z, z + k);
      double se = 0.0;
      for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - mx);
      s.loss += mx + std::log(se) - z[c.label];
      ++loss_terms;
    }
    const auto p = clip_probs(m.plan, logits);
    correct += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) ==
               static_cast<std::size_t>(c.label);
  }
  s.loss /= static_cast<double>(loss_terms);
  s.acc = static_cast<double>(correct) / static_cast<double>(clips.size());
  return s;
}

}  // namespace detail

inline double clip_accuracy(const Model& m, const std::vector<ClipExample>& clips) {
  return detail::evaluate_clips(m, clips).acc;
}

/// Trains `init` (a fresh build or a warm start). SwishNet consumes whole
/// clips; the SNN consumes individual frames labelled with their clip's class.
/// Distillation needs a teacher row for every training clip id.
inline TrainResult train(Model init, const std::vector<ClipExample>& train_set, const std::vector<ClipExample>& val_set,
                         const TrainConfig& cfg, const TeacherLogits* teacher = nullptr) {
  if (train_set.empty()) throw DataError("empty training set");
  if (cfg.distill && !teacher) throw DataError("distillation requested without teacher logits");
  const bool framewise = init.plan.arch == Arch::Snn;
  const std::size_t ch = init.plan.input_channels, k = init.plan.n_classes;
  const std::size_t frames = train_set.front().features.frames();
  for (const auto& c : train_set) {
    if (c.features.coeffs() != ch) throw DataError("clip " + c.id + " has the wrong feature width");
    if (!framewise && c.features.frames() != frames) throw DataError("clips in a training set must share one length");
    if (c.label < 0 || c.label >= static_cast<int>(k)) throw DataError("clip " + c.id + " has an invalid label");
  }
  std::vector<const std::vector<double>*> teacher_rows(train_set.size(), nullptr);
  if (cfg.distill) {
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      auto it = teacher->find(train_set[i].id);
      if (it == teacher->end()) throw DataError("no teacher logits for clip " + train_set[i].id);
      teacher_rows[i] = &it->second;
    }
  }

  Model model = std::move(init);
  if (cfg.fit_norm) model.norm = fit_feature_norm(train_set, ch);

  // Samples: (clip, frame) pairs for the SNN, whole clips otherwise.
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const std::size_t n = framewise ? train_set[i].features.frames() : 1;
    for (std::size_t t = 0; t < n; ++t) samples.emplace_back(i, t);
  }
  const std::size_t batch = framewise ? cfg.base_batch : batch_size_for(cfg.clip_len_s, cfg.base_batch);
  const std::size_t n_batches = (samples.size() + batch - 1) / batch;

  std::vector<std::string> names;
  for (const auto& p : model.plan.params) names.push_back(p.name);

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  TrainResult result;
  result.batch_size = batch;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = model.params;
  FeatureNorm best_norm = model.norm;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    std::shuffle(samples.begin(), samples.end(), rng);
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = cfg.schedule.at(static_cast<double>(epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * batch, hi = std::min(samples.size(), lo + batch), n = hi - lo;
      Tensor input = framewise ? Tensor({n, ch}) : Tensor({n, frames, ch});
      Tensor teach({n, k});
      std::vector<int> labels(n);
      for (std::size_t r = 0; r < n; ++r) {
        const auto [ci, t] = samples[lo + r];
        const ClipExample& c = train_set[ci];
        labels[r] = c.label;
        const double* src = c.features.values.data.data() + (framewise ? t * ch : 0);
        const std::size_t len = framewise ? ch : frames * ch;
        std::copy_n(src, len, input.data().data() + r * len);
        if (cfg.distill) std::copy_n(teacher_rows[ci]->data(), k, teach.data().data() + r * k);
      }
      ad::Tape tape;
      std::vector<ad::Var> pv;
      const ad::Var logits = forward_on_tape(model, tape, input, true, &rng, &pv);
      const ad::Var loss = cfg.distill ? distill_loss(tape, logits, teach, labels, cfg.distill->temperature,
                                                      cfg.distill->soft_weight)
                                       : ad::cross_entropy(tape, logits, labels);
      tape.backward(loss);
      loss_sum += tape.value(loss)[0] * static_cast<double>(n);
      std::vector<Tensor> grads;
      grads.reserve(pv.size());
      for (ad::Var v : pv) grads.push_back(tape.grad(v));
      const double lr = cfg.schedule.at(static_cast<double>(epoch) + static_cast<double>(b) / n_batches);
      adam_step(adam, model.params, grads, lr, names);
    }
    em.train_loss = loss_sum / static_cast<double>(samples.size());
    em.train_acc = clip_accuracy(model, train_set);
    if (!val_set.empty()) {
      const auto v = detail::evaluate_clips(model, val_set);
      em.val_loss = v.loss, em.val_acc = v.acc;
    }
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.log.push_back(em);
    if (cfg.on_epoch) cfg.on_epoch(em);

    const double score = val_set.empty() ? -static_cast<double>(epoch) : em.val_loss;
    if (score < best_val) {
      best_val = score;
      best_params = model.params;
      best_norm = model.norm;
      result.best_epoch = em.epoch;
    }
    if (em.train_acc >= cfg.stop_at_train_acc) break;
  }
  model.params = std::move(best_params);
  model.norm = std::move(best_norm);
  model.metadata["best_epoch"] = std::to_string(result.best_epoch);
  model.metadata["epochs_run"] = std::to_string(result.log.size());
  model.metadata["seed"] = std::to_string(cfg.seed);
  model.metadata["clip_len_s"] = detail::format_double(cfg.clip_len_s);
  if (cfg.distill) model.metadata["distill_temperature"] = detail::format_double(cfg.distill->temperature);
  model.round_to_storage();
  result.model = std::move(model);
  return result;
}

/// One GMM per class, fitted on every frame of that class's clips.
inline std::vector<GmmModel> fit_class_gmms(const std::vector<ClipExample>& clips, GmmFitOptions opt = {}) {
  std::vector<GmmModel> out;
  for (int c = 0; c < kNumClasses; ++c) {
    Grid frames;
    for (const auto& e : clips) {
      if (e.label != c) continue;
      if (frames.cols == 0) frames.cols = e.features.coeffs();
      if (e.features.coeffs() != frames.cols) throw DataError("clip " + e.id + " has the wrong feature width");
      frames.data.insert(frames.data.end(), e.features.values.data.begin(), e.features.values.data.end());
      frames.rows += e.features.frames();
    }
    if (frames.rows == 0) throw DataError(std::string("no training frames for class ") + class_name(c));
    opt.seed += 1;  // distinct but reproducible initialization per class
    out.push_back(gmm_fit(frames, opt).model);
  }
  return out;
}

/// Preprocesses every file of one split, slices clips and extracts features.
/// Relative manifest paths resolve against `root`.
inline std::vector<ClipExample> build_clip_set(const DatasetManifest& manifest, Split split, double clip_len_s,
                                               FeatureKind kind, const std::filesystem::path& root = {},
                                               const dsp::PreprocessOptions& pre = {}, double overlap = 0.5) {
  const dsp::FeatureExtractor fx(kind);
  std::vector<ClipExample> out;
  for (const auto& r : manifest.select(split)) {
    const std::filesystem::path p = std::filesystem::path(r.path).is_absolute() ? std::filesystem::path(r.path) : root / r.path;
    const AudioClip audio = dsp::preprocess(load_wav(p), pre);
    const auto clips = make_clips(audio, clip_len_s, overlap);
    for (std::size_t i = 0; i < clips.size(); ++i) out.push_back({clip_id(r.path, i), r.label, fx(clips[i])});
  }
  return out;
}

}  // namespace swishnet
