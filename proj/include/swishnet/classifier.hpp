// SPDX-License-Identifier: Apache-2.0
//
// One probability-vector interface over the three model families, so the
// segmenter, CLI and benchmark don't care which one they hold.
#pragma once

#include <swishnet/baselines.hpp>
#include <swishnet/container.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/kernels.hpp>
#include <swishnet/labels.hpp>
#include <swishnet/model.hpp>

#include <algorithm>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace swishnet {

class Classifier {
 public:
  virtual ~Classifier() = default;
  /// Class probabilities (noise, music, speech) for one clip's features.
  virtual std::vector<double> probs(const FeatureMatrix& f) const = 0;
  virtual std::size_t min_frames() const = 0;
  virtual FeatureKind feature_kind() const = 0;
  virtual std::string name() const = 0;
  virtual std::size_t n_params() const = 0;
  /// Serialized size, equal to the file save() would write.
  virtual std::size_t weight_bytes() const = 0;

  virtual int predict(const FeatureMatrix& f) const {
    const auto p = probs(f);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
};

/// SwishNet or SNN on the float32 inference path.
class NetClassifier final : public Classifier {
 public:
  explicit NetClassifier(Model m) : model_(std::move(m)), compiled_(model_) {}

  std::vector<double> probs(const FeatureMatrix& f) const override {
    const auto logits = compiled_.forward(f);
    const std::size_t k = model_.plan.n_classes, rows = logits.size() / k;
    std::vector<double> p(k, 0.0);
    std::vector<float> row(k);
    // SNN: average of the per-frame distributions.
    for (std::size_t r = 0; r < rows; ++r) {
      kernels::softmax(logits.data() + r * k, k, row.data());
      for (std::size_t c = 0; c < k; ++c) p[c] += static_cast<double>(row[c]);
    }
    double s = 0.0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
    return p;
  }

  /// Raw logits in double precision (teacher files are written from these).
  std::vector<double> clip_logits(const FeatureMatrix& f) const {
    const CompiledModel<double> cm(model_);
    const auto l = cm.forward(f);
    if (model_.plan.arch == Arch::SwishNet) return l;
    const std::size_t k = model_.plan.n_classes, rows = l.size() / k;
    std::vector<double> mean(k, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < k; ++c) mean[c] += l[r * k + c] / static_cast<double>(rows);
    }
    return mean;
  }

  std::size_t min_frames() const override { return model_.plan.min_frames; }
  FeatureKind feature_kind() const override {
    return model_.plan.arch == Arch::Snn ? FeatureKind::MfccDeltas : FeatureKind::Mfcc;
  }
  std::string name() const override { return model_.config.name; }
  std::size_t n_params() const override { return model_.n_params(); }
  std::size_t weight_bytes() const override { return encode_model(model_).size(); }
  const Model& model() const { return model_; }

 private:
  Model model_;
  CompiledModel<float> compiled_;
};

/// Per-class GMMs. Probabilities are the frame-vote shares; predict() keeps
/// gmm_classify's log-likelihood tie-break.
class GmmClassifier final : public Classifier {
 public:
  explicit GmmClassifier(std::vector<GmmModel> models) : models_(std::move(models)) {
    if (models_.size() != static_cast<std::size_t>(kNumClasses)) throw ConfigError("need one GMM per class");
    for (const auto& g : models_) {
      if (g.dim() != models_.front().dim()) throw ConfigError("class GMMs differ in feature width");
    }
  }

  std::vector<double> probs(const FeatureMatrix& f) const override {
    const GmmDecision d = gmm_classify(models_, f.values);
    std::vector<double> p(d.votes.size());
    double n = 0.0;
    for (auto v : d.votes) n += static_cast<double>(v);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = static_cast<double>(d.votes[c]) / n;
    return p;
  }

  int predict(const FeatureMatrix& f) const override { return gmm_classify(models_, f.values).label; }
  std::size_t min_frames() const override { return 1; }
  // 60-dim models read MFCC + deltas; 20-dim ones plain MFCC.
  FeatureKind feature_kind() const override {
    return models_.front().dim() == 60 ? FeatureKind::MfccDeltas : FeatureKind::Mfcc;
  }
  std::string name() const override { return "gmm"; }
  std::size_t n_params() const override {
    std::size_t n = 0;
    for (const auto& g : models_) n += g.components() * (1 + 2 * g.dim());
    return n;
  }
  std::size_t weight_bytes() const override { return encode_gmms(models_).size(); }
  const std::vector<GmmModel>& models() const { return models_; }

 private:
  std::vector<GmmModel> models_;
};

/// Opens a SwishNet/SNN weight file or a GMM file by its magic.
inline std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  const std::string magic = peek_magic(path);
  if (magic == "SWGM") return std::make_unique<GmmClassifier>(load_gmms(path));
  return std::make_unique<NetClassifier>(load(path));
}

}  // namespace swishnet
