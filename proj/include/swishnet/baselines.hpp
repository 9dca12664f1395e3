// SPDX-License-Identifier: Apache-2.0
//
// Frame-wise baselines: per-class diagonal-covariance GMMs trained by EM and
// the SELU feed-forward network (an Arch::Snn model).
#pragma once

#include <swishnet/container.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/error.hpp>
#include <swishnet/model.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace swishnet {

inline constexpr double kGmmVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian mixture; means/variances are K x D.
struct GmmModel {
  std::vector<double> weights;
  Grid means;
  Grid variances;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.cols; }

  /// log N(x | mu_k, diag(var_k)) + log pi_k for every component.
  void component_log_densities(std::span<const double> x, std::span<double> out) const {
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < components(); ++k) {
      double s = std::log(weights[k]) - 0.5 * static_cast<double>(dim()) * log_2pi;
      for (std::size_t d = 0; d < dim(); ++d) {
        const double v = variances(k, d);
        const double diff = x[d] - means(k, d);
        s -= 0.5 * (std::log(v) + diff * diff / v);
      }
      out[k] = s;
    }
  }

  double log_density(std::span<const double> x) const {
    if (x.size() != dim()) throw ShapeError("gmm: frame has " + std::to_string(x.size()) + " dims, model " +
                                            std::to_string(dim()));
    std::vector<double> lp(components());
    component_log_densities(x, lp);
    const double m = *std::max_element(lp.begin(), lp.end());
    double s = 0.0;
    for (double v : lp) s += std::exp(v - m);
    return m + std::log(s);
  }
};

struct GmmFitOptions {
  std::size_t components = 8;
  std::size_t max_iters = 200;
  double tolerance = 1e-6;  // per-frame log-likelihood gain
  double variance_floor = kGmmVarianceFloor;
  std::size_t kmeans_iters = 10;
  std::uint64_t seed = 0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return s;
}

/// k-means++ seeding (random frames, later picks weighted by squared distance
/// to the nearest chosen one) followed by a few Lloyd iterations.
inline Grid kmeans_init(const Grid& frames, std::size_t k_count, std::size_t iters, std::mt19937_64& rng) {
  const std::size_t n = frames.rows, dim = frames.cols;
  Grid c(k_count, dim);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t k = 0; k < k_count; ++k) {
    std::copy_n(frames.row(pick).begin(), dim, c.row(k).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += nearest[i] = std::min(nearest[i], sq_dist(frames.row(i), c.row(k)));
    if (k + 1 == k_count) break;
    if (total <= 0.0) {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      continue;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if ((r -= nearest[i]) < 0.0) {
        pick = i;
        break;
      }
    }
  }
  std::vector<std::size_t> assign(n), count(k_count);
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < k_count; ++k) {
        const double dk = sq_dist(frames.row(i), c.row(k));
        if (dk < best_d) best_d = dk, best = k;
      }
      assign[i] = best;
    }
    Grid sum(k_count, dim);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sum(assign[i], d) += frames(i, d);
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      if (count[k] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) c(k, d) = sum(k, d) / static_cast<double>(count[k]);
    }
  }
  return c;
}

}  // namespace detail

struct GmmFitResult {
  GmmModel model;
  std::vector<double> log_likelihood;  // mean per-frame log-likelihood before each M-step
  bool converged = false;
};

/// EM from k-means means, global variance and uniform weights. The
/// history entry i is the data log-likelihood under the parameters after i
/// M-steps; the returned model is the one after the final M-step.
inline GmmFitResult gmm_fit(const Grid& frames, const GmmFitOptions& opt = {}) {
  const std::size_t n = frames.rows, dim = frames.cols, k_count = opt.components;
  if (k_count < 1) throw ConfigError("gmm: need at least one component");
  if (n < k_count) {
    throw ConfigError("gmm: " + std::to_string(k_count) + " components but only " + std::to_string(n) + " frames");
  }

  GmmModel g;
  g.weights.assign(k_count, 1.0 / static_cast<double>(k_count));
  g.means = Grid(k_count, dim);
  g.variances = Grid(k_count, dim);
  std::mt19937_64 rng(opt.seed);
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += frames(i, d);
  }
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) var[d] += (frames(i, d) - mean[d]) * (frames(i, d) - mean[d]);
  }
  const Grid centers = detail::kmeans_init(frames, k_count, opt.kmeans_iters, rng);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t d = 0; d < dim; ++d) {
      g.means(k, d) = centers(k, d);
      g.variances(k, d) = std::max(var[d] / static_cast<double>(n), opt.variance_floor);
    }
  }

  GmmFitResult res;
  std::vector<double> lp(k_count), nk(k_count);
  Grid resp(n, k_count), sum_x(k_count, dim), sum_xx(k_count, dim);
  for (std::size_t iter = 0;; ++iter) {
    // E-step.
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g.component_log_densities(frames.row(i), lp);
      const double m = *std::max_element(lp.begin(), lp.end());
      double s = 0.0;
      for (double v : lp) s += std::exp(v - m);
      const double lse = m + std::log(s);
      total += lse;
      for (std::size_t k = 0; k < k_count; ++k) resp(i, k) = std::exp(lp[k] - lse);
    }
    const double ll = total / static_cast<double>(n);
    if (!res.log_likelihood.empty() && ll - res.log_likelihood.back() < opt.tolerance) {
      res.log_likelihood.push_back(ll);
      res.converged = true;
      break;
    }
    res.log_likelihood.push_back(ll);
    if (iter >= opt.max_iters) break;

    // M-step.
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(sum_x.data.begin(), sum_x.data.end(), 0.0);
    std::fill(sum_xx.data.begin(), sum_xx.data.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < k_count; ++k) {
        const double r = resp(i, k);
        nk[k] += r;
        for (std::size_t d = 0; d < dim; ++d) sum_x(k, d) += r * frames(i, d);
      }
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      // A component that lost all its mass keeps its previous parameters.
      if (nk[k] < 1e-10) continue;
      for (std::size_t d = 0; d < dim; ++d) g.means(k, d) = sum_x(k, d) / nk[k];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < k_count; ++k) {
        const double r = resp(i, k);
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = frames(i, d) - g.means(k, d);
          sum_xx(k, d) += r * diff * diff;
        }
      }
    }
    double mass = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (nk[k] >= 1e-10) {
        for (std::size_t d = 0; d < dim; ++d) g.variances(k, d) = std::max(sum_xx(k, d) / nk[k], opt.variance_floor);
      }
      g.weights[k] = std::max(nk[k], 1e-300) / static_cast<double>(n);
      mass += g.weights[k];
    }
    for (double& w : g.weights) w /= mass;
  }
  res.model = std::move(g);
  return res;
}

struct GmmDecision {
  int label = 0;
  std::vector<std::size_t> votes;        // per class
  std::vector<double> total_log_lik;     // per class, summed over frames
  Grid frame_log_lik;                    // frames x classes
};

/// One model per class. Each frame votes for its most likely class; the
/// plurality wins and ties go to the larger summed log-likelihood.
inline GmmDecision gmm_classify(const std::vector<GmmModel>& models, const Grid& frames) {
  if (models.empty()) throw ConfigError("gmm_classify: no class models");
  const std::size_t c = models.size();
  GmmDecision out;
  out.votes.assign(c, 0);
  out.total_log_lik.assign(c, 0.0);
  out.frame_log_lik = Grid(frames.rows, c);
  for (std::size_t i = 0; i < frames.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < c; ++k) {
      const double ll = models[k].log_density(frames.row(i));
      out.frame_log_lik(i, k) = ll;
      out.total_log_lik[k] += ll;
      if (ll > out.frame_log_lik(i, best)) best = k;
    }
    ++out.votes[best];
  }
  std::size_t win = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (out.votes[k] > out.votes[win] ||
        (out.votes[k] == out.votes[win] && out.total_log_lik[k] > out.total_log_lik[win])) {
      win = k;
    }
  }
  out.label = static_cast<int>(win);
  return out;
}

inline std::vector<unsigned char> encode_gmms(const std::vector<GmmModel>& models) {
  Container c;
  c.magic = {'S', 'W', 'G', 'M'};
  c.config = "classes = " + std::to_string(models.size()) + "\n";
  for (std::size_t i = 0; i < models.size(); ++i) {
    const GmmModel& g = models[i];
    const std::string pre = "class" + std::to_string(i) + ".";
    const Shape kd{g.components(), g.dim()};
    c.records.emplace_back(pre + "weights", Tensor({g.components()}, g.weights));
    c.records.emplace_back(pre + "means", Tensor(kd, g.means.data));
    c.records.emplace_back(pre + "variances", Tensor(kd, g.variances.data));
  }
  return encode_container(c);
}

inline std::vector<GmmModel> decode_gmms(const std::vector<unsigned char>& bytes) {
  const Container c = decode_container(bytes, "SWGM");
  std::vector<GmmModel> out;
  for (std::size_t i = 0;; ++i) {
    const std::string pre = "class" + std::to_string(i) + ".";
    const Tensor* w = c.find(pre + "weights");
    if (!w) break;
    const Tensor* mu = c.find(pre + "means");
    const Tensor* var = c.find(pre + "variances");
    if (!mu || !var || mu->rank() != 2 || mu->shape() != var->shape() || mu->dim(0) != w->size()) {
      throw FormatError("gmm record set for class " + std::to_string(i) + " is incomplete or inconsistent");
    }
    GmmModel g;
    g.weights = w->vec();
    const double mass = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    for (double& v : g.weights) v /= mass;  // undo float32 rounding of the simplex
    g.means = Grid(mu->dim(0), mu->dim(1));
    g.means.data = mu->vec();
    g.variances = Grid(var->dim(0), var->dim(1));
    g.variances.data = var->vec();
    out.push_back(std::move(g));
  }
  if (out.empty()) throw FormatError("gmm file holds no class models");
  return out;
}

inline void save_gmms(const std::vector<GmmModel>& models, const std::filesystem::path& path) {
  write_bytes(path, encode_gmms(models));
}

inline std::vector<GmmModel> load_gmms(const std::filesystem::path& path) { return decode_gmms(read_bytes(path)); }

/// Four-hidden-layer SELU network over 60-d MFCC + deltas frames.
inline Model build_snn(std::vector<std::size_t> widths, std::uint64_t seed, std::size_t input_dim = 60) {
  if (widths.size() != 4) throw ConfigError("snn takes exactly four hidden widths");
  return build(presets::snn(std::move(widths), input_dim), seed);
}

}  // namespace swishnet
