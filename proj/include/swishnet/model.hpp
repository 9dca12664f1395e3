// SPDX-License-Identifier: Apache-2.0
//
// Declarative layer stacks for SwishNet and the SNN baseline, their parameter
// sets, and one graph walker (run_plan) shared by the float64 training tape
// and the compiled inference path.
//
// SwishNet layer semantics, in stack order:
//   gated_conv / strided_gated_conv  causal conv C_in -> 2W, gated to W; optional
//                                    residual add of the layer input; optional skip
//   separable_branch                 causal separable conv over the *input* of the
//                                    preceding conv, gated to W, concatenated on
//   pointwise                        plain 1x1 conv
//   head                             1x1 conv to n_classes over the summed skips
//                                    (or the last activation), global average pool
// Each skip is aligned to the final time resolution and the last skip width by
// a strided 1x1 causal conv before summation.
//
// SNN: dense -> SELU -> alpha dropout per hidden layer, dense head, applied per frame.
#pragma once

#include <swishnet/autodiff.hpp>
#include <swishnet/container.hpp>
#include <swishnet/dsp.hpp>
#include <swishnet/error.hpp>
#include <swishnet/kernels.hpp>
#include <swishnet/tensor.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace swishnet {

enum class LayerKind { GatedConvBlock, GatedSeparableBranch, StridedGatedConv, PointwiseConv, Dense, Head };
enum class Arch { SwishNet, Snn };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::GatedConvBlock: return "gated_conv";
    case LayerKind::GatedSeparableBranch: return "separable_branch";
    case LayerKind::StridedGatedConv: return "strided_gated_conv";
    case LayerKind::PointwiseConv: return "pointwise";
    case LayerKind::Dense: return "dense";
    case LayerKind::Head: return "head";
  }
  return "?";
}

inline const char* to_string(Arch a) { return a == Arch::SwishNet ? "swishnet" : "snn"; }

struct LayerSpec {
  LayerKind kind = LayerKind::GatedConvBlock;
  std::size_t width = 0;  // output channels (before the width multiplier); unused by head
  std::size_t kernel = 1;
  std::size_t stride = 1;
  bool residual = false;
  bool skip = false;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelConfig {
  std::string name;
  Arch arch = Arch::SwishNet;
  std::size_t input_channels = 20;
  std::size_t n_classes = 3;
  std::size_t width_multiplier = 1;
  double dropout_rate = 0.0;  // dropout between conv layers; alpha dropout for the SNN
  std::vector<LayerSpec> layers;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& v, const std::string& what) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer for " + what + ", got '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& v, const std::string& what) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a number for " + what + ", got '" + v + "'");
  }
  return out;
}

inline bool parse_flag(const std::string& v, const std::string& what) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("expected 0/1 for " + what + ", got '" + v + "'");
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::GatedConvBlock, LayerKind::GatedSeparableBranch, LayerKind::StridedGatedConv,
                      LayerKind::PointwiseConv, LayerKind::Dense, LayerKind::Head}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

inline LayerSpec parse_layer(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  LayerSpec l;
  l.kind = parse_layer_kind(kind);
  std::string kv;
  while (in >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("layer option '" + kv + "' is not key=value");
    const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    if (k == "width") l.width = parse_size(v, k);
    else if (k == "kernel") l.kernel = parse_size(v, k);
    else if (k == "stride") l.stride = parse_size(v, k);
    else if (k == "residual") l.residual = parse_flag(v, k);
    else if (k == "skip") l.skip = parse_flag(v, k);
    else throw ConfigError("unknown layer option '" + k + "'");
  }
  return l;
}

}  // namespace detail

/// Plain-text form: `key = value` lines, one `layer = kind opt=val ...` per
/// layer, '#' comments. Lines starting with `meta.` are model metadata and
/// are skipped here.
inline ModelConfig parse_config(const std::string& text) {
  ModelConfig c;
  c.layers.clear();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.rfind("meta.", 0) == 0) continue;
    if (key == "name") c.name = val;
    else if (key == "arch") {
      if (val == "swishnet") c.arch = Arch::SwishNet;
      else if (val == "snn") c.arch = Arch::Snn;
      else throw ConfigError("unknown arch '" + val + "'");
    } else if (key == "input_channels") c.input_channels = detail::parse_size(val, key);
    else if (key == "n_classes") c.n_classes = detail::parse_size(val, key);
    else if (key == "width_multiplier") c.width_multiplier = detail::parse_size(val, key);
    else if (key == "dropout_rate") c.dropout_rate = detail::parse_double(val, key);
    else if (key == "layer") c.layers.push_back(detail::parse_layer(val));
    else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return c;
}

inline std::string serialize_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "name = " << c.name << '\n'
     << "arch = " << to_string(c.arch) << '\n'
     << "input_channels = " << c.input_channels << '\n'
     << "n_classes = " << c.n_classes << '\n'
     << "width_multiplier = " << c.width_multiplier << '\n'
     << "dropout_rate = " << detail::format_double(c.dropout_rate) << '\n';
  for (const LayerSpec& l : c.layers) {
    os << "layer = " << to_string(l.kind);
    if (l.kind != LayerKind::Head) os << " width=" << l.width;
    if (l.kind != LayerKind::Head && l.kind != LayerKind::Dense) os << " kernel=" << l.kernel;
    if (l.stride != 1) os << " stride=" << l.stride;
    if (l.residual) os << " residual=1";
    if (l.skip) os << " skip=1";
    os << '\n';
  }
  return os.str();
}

inline ModelConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

namespace presets {

inline ModelConfig swishnet_slim() {
  ModelConfig c;
  c.name = "swishnet-slim";
  using K = LayerKind;
  c.layers = {
      {K::GatedConvBlock, 8, 3, 1, false, false},     {K::GatedSeparableBranch, 8, 6, 1, false, false},
      {K::GatedConvBlock, 8, 3, 1, false, false},     {K::GatedSeparableBranch, 8, 6, 1, false, false},
      {K::GatedConvBlock, 8, 3, 1, false, false},     {K::GatedConvBlock, 8, 3, 1, true, false},
      {K::GatedConvBlock, 8, 3, 1, true, false},      {K::StridedGatedConv, 8, 3, 2, false, true},
      {K::StridedGatedConv, 8, 3, 2, false, true},    {K::StridedGatedConv, 8, 3, 2, false, true},
      {K::Head, 0, 1, 1, false, false},
  };
  return c;
}

inline ModelConfig swishnet_wide() {
  ModelConfig c = swishnet_slim();
  c.name = "swishnet-wide";
  c.width_multiplier = 2;
  return c;
}

/// Four hidden widths whose total comes to 179,203 parameters on 60-d input.
inline constexpr std::size_t kSnnWidths[4] = {233, 230, 235, 238};

inline ModelConfig snn(std::vector<std::size_t> widths = {kSnnWidths, kSnnWidths + 4}, std::size_t input_dim = 60) {
  ModelConfig c;
  c.name = "snn";
  c.arch = Arch::Snn;
  c.input_channels = input_dim;
  c.dropout_rate = 0.05;
  for (std::size_t w : widths) c.layers.push_back({LayerKind::Dense, w, 1, 1, false, false});
  c.layers.push_back({LayerKind::Head, 0, 1, 1, false, false});
  return c;
}

inline ModelConfig by_name(const std::string& name) {
  if (name == "slim" || name == "swishnet-slim") return swishnet_slim();
  if (name == "wide" || name == "swishnet-wide") return swishnet_wide();
  if (name == "snn") return snn();
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace presets

// ---------------------------------------------------------------------------
// Resolution: channel/stride bookkeeping and parameter layout.

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1, fan_out = 1;
  bool bias = false;
};

inline constexpr std::size_t kNone = static_cast<std::size_t>(-1);

struct PlanLayer {
  LayerSpec spec;
  std::size_t width = 0;        // effective output width of this layer's own op
  std::size_t in_channels = 0;  // channels feeding the op
  std::size_t out_channels = 0; // channels of the activation after this layer
  std::size_t stride_total = 1; // input frames per output step after this layer
  std::size_t w = kNone, b = kNone, wd = kNone;
  std::size_t skip_w = kNone, skip_b = kNone, skip_stride = 1;
};

struct Plan {
  Arch arch = Arch::SwishNet;
  std::size_t input_channels = 0;
  std::size_t n_classes = 0;
  std::size_t min_frames = 1;
  double dropout_rate = 0.0;
  std::vector<PlanLayer> layers;
  std::vector<ParamSpec> params;
};

/// Validates the config and lays out its parameters.
inline Plan resolve(const ModelConfig& c) {
  auto fail = [](std::size_t i, const std::string& msg) {
    throw ConfigError("layer " + std::to_string(i) + ": " + msg);
  };
  if (c.input_channels < 1) throw ConfigError("input_channels must be >= 1");
  if (c.n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (c.width_multiplier < 1) throw ConfigError("width_multiplier must be >= 1");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (c.layers.empty() || c.layers.back().kind != LayerKind::Head) throw ConfigError("last layer must be head");

  Plan p;
  p.arch = c.arch;
  p.input_channels = c.input_channels;
  p.n_classes = c.n_classes;
  p.dropout_rate = c.dropout_rate;

  auto add_param = [&](std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, bool bias) {
    p.params.push_back({std::move(name), std::move(shape), fan_in, fan_out, bias});
    return p.params.size() - 1;
  };

  std::size_t ch = c.input_channels, stride_total = 1;
  std::size_t prev_conv_in = 0, prev_conv_stride = 0;
  bool prev_is_conv = false;
  for (std::size_t i = 0; i < c.layers.size(); ++i) {
    const LayerSpec& s = c.layers[i];
    const std::string pre = "l" + std::to_string(i) + ".";
    PlanLayer L;
    L.spec = s;
    L.in_channels = ch;
    if (s.kind == LayerKind::Head) {
      if (i + 1 != c.layers.size()) fail(i, "head must be the last layer");
    } else {
      if (s.width < 1) fail(i, "width must be >= 1");
      if (s.kernel < 1) fail(i, "kernel must be >= 1");
      if (s.stride < 1) fail(i, "stride must be >= 1");
      L.width = s.width * c.width_multiplier;
    }
    const bool conv_kind = s.kind == LayerKind::GatedConvBlock || s.kind == LayerKind::StridedGatedConv;
    if (c.arch == Arch::Snn && s.kind != LayerKind::Dense && s.kind != LayerKind::Head) {
      fail(i, std::string("snn stacks take dense layers only, got ") + to_string(s.kind));
    }
    if (c.arch == Arch::SwishNet && s.kind == LayerKind::Dense) fail(i, "dense layers belong to the snn arch");
    if ((s.residual || s.skip) && !conv_kind) fail(i, "residual/skip only apply to gated conv layers");
    if (c.arch == Arch::Snn && s.kind == LayerKind::Dense && (s.stride != 1 || s.kernel != 1)) {
      fail(i, "dense layers have no kernel or stride");
    }

    switch (s.kind) {
      case LayerKind::GatedConvBlock:
      case LayerKind::StridedGatedConv: {
        if (s.residual && (ch != L.width || s.stride != 1)) {
          fail(i, "residual needs matching widths and stride 1 (in " + std::to_string(ch) + ", out " +
                      std::to_string(L.width) + ", stride " + std::to_string(s.stride) + ")");
        }
        L.w = add_param(pre + "w", {s.kernel, ch, 2 * L.width}, s.kernel * ch, s.kernel * 2 * L.width, false);
        L.b = add_param(pre + "b", {2 * L.width}, 0, 0, true);
        prev_conv_in = ch;
        prev_conv_stride = s.stride;
        ch = L.width;
        stride_total *= s.stride;
        break;
      }
      case LayerKind::GatedSeparableBranch: {
        if (!prev_is_conv) fail(i, "separable branch must follow a gated conv layer");
        if (s.stride != prev_conv_stride) fail(i, "separable branch stride must match its conv");
        L.in_channels = prev_conv_in;
        L.wd = add_param(pre + "wd", {s.kernel, prev_conv_in}, s.kernel, s.kernel, false);
        L.w = add_param(pre + "wp", {prev_conv_in, 2 * L.width}, prev_conv_in, 2 * L.width, false);
        L.b = add_param(pre + "b", {2 * L.width}, 0, 0, true);
        ch += L.width;
        break;
      }
      case LayerKind::PointwiseConv: {
        L.w = add_param(pre + "w", {ch, L.width}, ch, L.width, false);
        L.b = add_param(pre + "b", {L.width}, 0, 0, true);
        ch = L.width;
        break;
      }
      case LayerKind::Dense: {
        L.w = add_param(pre + "w", {ch, L.width}, ch, L.width, false);
        L.b = add_param(pre + "b", {L.width}, 0, 0, true);
        ch = L.width;
        break;
      }
      case LayerKind::Head: break;
    }
    L.out_channels = ch;
    L.stride_total = stride_total;
    // Several branches may hang off one conv; anything else ends the block.
    prev_is_conv = conv_kind || (s.kind == LayerKind::GatedSeparableBranch && prev_is_conv);
    p.layers.push_back(L);
  }

  // Skip alignment convs, then the head, once the final resolution is known.
  std::size_t skip_width = 0;
  for (const PlanLayer& L : p.layers) {
    if (L.spec.skip) skip_width = L.width;
  }
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    PlanLayer& L = p.layers[i];
    if (!L.spec.skip) continue;
    L.skip_stride = stride_total / L.stride_total;
    const std::string pre = "l" + std::to_string(i) + ".skip.";
    L.skip_w = add_param(pre + "w", {L.width, skip_width}, L.width, skip_width, false);
    L.skip_b = add_param(pre + "b", {skip_width}, 0, 0, true);
  }
  PlanLayer& head = p.layers.back();
  const std::size_t head_in = skip_width ? skip_width : ch;
  const std::string pre = "l" + std::to_string(p.layers.size() - 1) + ".";
  head.in_channels = head_in;
  head.width = head.out_channels = c.n_classes;
  head.w = add_param(pre + "w", {head_in, c.n_classes}, head_in, c.n_classes, false);
  head.b = add_param(pre + "b", {c.n_classes}, 0, 0, true);
  head.stride_total = stride_total;

  // Two output steps at the coarsest resolution; shorter inputs are rejected.
  p.min_frames = c.arch == Arch::SwishNet ? 2 * stride_total : 1;
  return p;
}

/// Closed-form parameter count, summed layer by layer from the config alone.
inline std::size_t param_count(const ModelConfig& c) {
  resolve(c);  // validation only
  std::size_t total = 0, ch = c.input_channels, conv_in = 0, last_skip_width = 0, n_skips = 0;
  std::vector<std::size_t> skip_widths;
  for (const LayerSpec& s : c.layers) {
    const std::size_t w = s.width * c.width_multiplier;
    switch (s.kind) {
      case LayerKind::GatedConvBlock:
      case LayerKind::StridedGatedConv:
        total += s.kernel * ch * 2 * w + 2 * w;
        conv_in = ch;
        ch = w;
        if (s.skip) skip_widths.push_back(w), last_skip_width = w, ++n_skips;
        break;
      case LayerKind::GatedSeparableBranch:
        total += s.kernel * conv_in + conv_in * 2 * w + 2 * w;
        ch += w;
        break;
      case LayerKind::PointwiseConv:
      case LayerKind::Dense:
        total += (ch + 1) * w;
        ch = w;
        break;
      case LayerKind::Head:
        break;
    }
  }
  for (std::size_t w : skip_widths) total += (w + 1) * last_skip_width;
  const std::size_t head_in = n_skips ? last_skip_width : ch;
  return total + (head_in + 1) * c.n_classes;
}

// ---------------------------------------------------------------------------
// Model

/// Per-channel input standardization, fitted on training features.
struct FeatureNorm {
  std::vector<double> mean;
  std::vector<double> inv_std;

  bool empty() const { return mean.empty(); }
  static FeatureNorm identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
  friend bool operator==(const FeatureNorm&, const FeatureNorm&) = default;
};

struct Model {
  ModelConfig config;
  Plan plan;
  std::vector<Tensor> params;  // aligned with plan.params
  FeatureNorm norm;
  std::map<std::string, std::string> metadata;

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const Tensor& t : params) n += t.size();
    return n;
  }

  const Tensor& param(const std::string& name) const {
    for (std::size_t i = 0; i < plan.params.size(); ++i) {
      if (plan.params[i].name == name) return params[i];
    }
    throw ConfigError("no parameter named " + name);
  }

  /// Rounds every stored value to float32, the on-disk precision.
  void round_to_storage() {
    for (Tensor& t : params) {
      for (double& v : t.data()) v = static_cast<float>(v);
    }
    for (double& v : norm.mean) v = static_cast<float>(v);
    for (double& v : norm.inv_std) v = static_cast<float>(v);
  }
};

/// Glorot-uniform weights (LeCun-normal for SNN dense layers, which SELU
/// relies on), zero biases; values are float32-representable.
inline Model build(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.config = config;
  m.plan = resolve(config);
  m.norm = FeatureNorm::identity(config.input_channels);
  std::mt19937_64 rng(seed);
  for (const ParamSpec& ps : m.plan.params) {
    Tensor t(ps.shape, 0.0);
    if (!ps.bias) {
      if (config.arch == Arch::Snn) {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(ps.fan_in)));
        for (double& v : t.data()) v = dist(rng);
      } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(ps.fan_in + ps.fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& v : t.data()) v = dist(rng);
      }
    }
    m.params.push_back(std::move(t));
  }
  m.round_to_storage();
  return m;
}

// ---------------------------------------------------------------------------
// Graph walker

struct GraphHooks {
  std::vector<std::size_t> drop_residual;  // layer indices whose residual add is skipped
  std::vector<std::size_t> drop_skip;      // layer indices whose skip path is left out of the sum
  /// Called with a point name ("l3", "l8.skip"), its input-frame stride and value.
  std::function<void(const std::string&, std::size_t, const Tensor&)> observe;

  bool residual_off(std::size_t i) const {
    return std::find(drop_residual.begin(), drop_residual.end(), i) != drop_residual.end();
  }
  bool skip_off(std::size_t i) const { return std::find(drop_skip.begin(), drop_skip.end(), i) != drop_skip.end(); }
};

/// Runs the plan on an already-normalized input. SwishNet returns pooled
/// logits; the SNN returns one row of logits per input row.
template <class Engine>
typename Engine::Value run_plan(const Plan& plan, Engine& e, typename Engine::Value x, const GraphHooks* hooks = nullptr) {
  using V = typename Engine::Value;
  auto observe = [&](const std::string& name, std::size_t stride, const V& v) {
    if (hooks && hooks->observe) hooks->observe(name, stride, e.snapshot(v));
  };

  if (plan.arch == Arch::Snn) {
    V cur = x;
    for (std::size_t i = 0; i + 1 < plan.layers.size(); ++i) {
      const PlanLayer& L = plan.layers[i];
      cur = e.alpha_dropout(e.selu(e.dense(cur, L.w, L.b)));
      observe("l" + std::to_string(i), 1, cur);
    }
    const PlanLayer& head = plan.layers.back();
    return e.dense(cur, head.w, head.b);
  }

  V cur = x, conv_in = x;
  std::vector<V> skips;
  for (std::size_t i = 0; i < plan.layers.size(); ++i) {
    const PlanLayer& L = plan.layers[i];
    const std::string tag = "l" + std::to_string(i);
    switch (L.spec.kind) {
      case LayerKind::GatedConvBlock:
      case LayerKind::StridedGatedConv: {
        conv_in = i > 0 ? e.dropout(cur) : cur;
        V y = e.gate(e.conv(conv_in, L.w, L.b, L.spec.stride));
        if (L.spec.residual && !(hooks && hooks->residual_off(i))) y = e.add(y, conv_in);
        cur = y;
        if (L.spec.skip) {
          V s = e.conv(y, L.skip_w, L.skip_b, L.skip_stride);
          observe(tag + ".skip", plan.layers.back().stride_total, s);
          if (!(hooks && hooks->skip_off(i))) skips.push_back(s);
        }
        break;
      }
      case LayerKind::GatedSeparableBranch:
        cur = e.concat(cur, e.gate(e.separable(conv_in, L.wd, L.w, L.b, L.spec.stride)));
        break;
      case LayerKind::PointwiseConv:
        cur = e.conv(e.dropout(cur), L.w, L.b, 1);
        break;
      case LayerKind::Dense:
        throw ConfigError("dense layer in a swishnet plan");
      case LayerKind::Head: {
        V h = cur;
        if (!skips.empty()) {
          h = skips.front();
          for (std::size_t k = 1; k < skips.size(); ++k) h = e.add(h, skips[k]);
        }
        V z = e.conv(h, L.w, L.b, 1);
        observe(tag, L.stride_total, z);
        return e.pool(z);
      }
    }
    observe(tag, L.stride_total, cur);
  }
  throw ConfigError("plan has no head");
}

/// Tape-backed engine: float64, differentiable, honours dropout when training.
class TapeEngine {
 public:
  using Value = ad::Var;

  TapeEngine(ad::Tape& tape, std::vector<ad::Var> params, double dropout_rate, bool training, std::mt19937_64* rng)
      : tape_(tape), p_(std::move(params)), rate_(dropout_rate), training_(training && rng), rng_(rng) {}

  Value conv(Value x, std::size_t w, std::size_t b, std::size_t stride) {
    return ad::conv1d(tape_, x, p_[w], p_[b], stride, true);
  }
  Value separable(Value x, std::size_t wd, std::size_t wp, std::size_t b, std::size_t stride) {
    return ad::separable_conv1d(tape_, x, p_[wd], p_[wp], p_[b], stride, true);
  }
  Value gate(Value x) { return ad::gated_halves(tape_, x); }
  Value concat(Value a, Value b) { return ad::concat_channels(tape_, a, b); }
  Value add(Value a, Value b) { return ad::add(tape_, a, b); }
  Value dense(Value x, std::size_t w, std::size_t b) { return ad::dense(tape_, x, p_[w], p_[b]); }
  Value selu(Value x) { return ad::selu(tape_, x); }
  Value pool(Value x) { return ad::global_avg_pool_time(tape_, x); }
  Value dropout(Value x) { return training_ ? ad::dropout(tape_, x, rate_, true, *rng_) : x; }
  Value alpha_dropout(Value x) { return training_ ? ad::alpha_dropout(tape_, x, rate_, true, *rng_) : x; }
  Tensor snapshot(Value x) const { return tape_.value(x); }

 private:
  ad::Tape& tape_;
  std::vector<ad::Var> p_;
  double rate_;
  bool training_;
  std::mt19937_64* rng_;
};

/// Activation buffer for the inference engine: [batch x time x channels].
template <typename T>
struct Act {
  std::size_t batch = 1, time = 0, channels = 0;
  std::vector<T> data;
};

/// Inference-only engine over raw kernels in precision T. Dropout is the identity.
template <typename T>
class InferEngine {
 public:
  using Value = Act<T>;

  explicit InferEngine(const std::vector<std::vector<T>>& params, const Plan& plan) : p_(params), plan_(plan) {}

  Value conv(const Value& x, std::size_t w, std::size_t b, std::size_t stride) const {
    const Shape& ws = plan_.params[w].shape;
    const std::size_t k = ws.size() == 3 ? ws[0] : 1;
    const std::size_t c_out = ws.back();
    Value y{x.batch, kernels::conv_out_len(x.time, k, stride, true), c_out, {}};
    y.data.resize(y.batch * y.time * c_out);
    for (std::size_t n = 0; n < x.batch; ++n) {
      kernels::conv1d_forward(x.data.data() + n * x.time * x.channels, x.time, x.channels, p_[w].data(), k, c_out,
                              p_[b].data(), stride, true, y.data.data() + n * y.time * c_out);
    }
    return y;
  }

  Value separable(const Value& x, std::size_t wd, std::size_t wp, std::size_t b, std::size_t stride) const {
    const std::size_t k = plan_.params[wd].shape[0];
    Value d{x.batch, kernels::conv_out_len(x.time, k, stride, true), x.channels, {}};
    d.data.resize(d.batch * d.time * d.channels);
    for (std::size_t n = 0; n < x.batch; ++n) {
      kernels::depthwise_forward(x.data.data() + n * x.time * x.channels, x.time, x.channels, p_[wd].data(), k,
                                 stride, true, d.data.data() + n * d.time * d.channels);
    }
    return conv(d, wp, b, 1);
  }

  Value gate(const Value& x) const {
    const std::size_t half = x.channels / 2;
    Value y{x.batch, x.time, half, std::vector<T>(x.batch * x.time * half)};
    kernels::gated_halves_forward(x.data.data(), x.batch * x.time, half, y.data.data());
    return y;
  }

  Value concat(const Value& a, const Value& b) const {
    const std::size_t c = a.channels + b.channels, rows = a.batch * a.time;
    Value y{a.batch, a.time, c, std::vector<T>(rows * c)};
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(a.data.data() + r * a.channels, a.channels, y.data.data() + r * c);
      std::copy_n(b.data.data() + r * b.channels, b.channels, y.data.data() + r * c + a.channels);
    }
    return y;
  }

  Value add(Value a, const Value& b) const {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
  }

  Value dense(const Value& x, std::size_t w, std::size_t b) const {
    const std::size_t d_out = plan_.params[w].shape[1];
    Value y{x.batch, x.time, d_out, std::vector<T>(x.batch * x.time * d_out)};
    kernels::dense_forward(x.data.data(), x.batch * x.time, x.channels, p_[w].data(), d_out, p_[b].data(),
                           y.data.data());
    return y;
  }

  Value selu(Value x) const {
    for (T& v : x.data) v = kernels::selu(v);
    return x;
  }

  Value pool(const Value& x) const {
    Value y{x.batch, 1, x.channels, std::vector<T>(x.batch * x.channels)};
    for (std::size_t n = 0; n < x.batch; ++n) {
      kernels::mean_rows(x.data.data() + n * x.time * x.channels, x.time, x.channels,
                         y.data.data() + n * x.channels);
    }
    return y;
  }

  Value dropout(Value x) const { return x; }
  Value alpha_dropout(Value x) const { return x; }

  Tensor snapshot(const Value& x) const {
    Tensor t(x.batch == 1 ? Shape{x.time, x.channels} : Shape{x.batch, x.time, x.channels});
    std::copy(x.data.begin(), x.data.end(), t.data().begin());
    return t;
  }

 private:
  const std::vector<std::vector<T>>& p_;
  const Plan& plan_;
};

namespace detail {

inline void check_input(const Plan& plan, std::size_t frames, std::size_t channels) {
  if (channels != plan.input_channels) {
    throw ShapeError("model expects " + std::to_string(plan.input_channels) + " input channels, got " +
                     std::to_string(channels));
  }
  if (frames < plan.min_frames) {
    throw TooShortError("input has " + std::to_string(frames) + " frames; model needs at least " +
                        std::to_string(plan.min_frames));
  }
}

}  // namespace detail

/// Frozen copy of a model's weights in precision T for fast repeated inference.
template <typename T>
class CompiledModel {
 public:
  explicit CompiledModel(const Model& m) : plan_(m.plan), mean_(m.norm.mean.begin(), m.norm.mean.end()),
                                           inv_std_(m.norm.inv_std.begin(), m.norm.inv_std.end()) {
    for (const Tensor& t : m.params) params_.emplace_back(t.data().begin(), t.data().end());
    if (mean_.empty()) {
      mean_.assign(plan_.input_channels, T(0));
      inv_std_.assign(plan_.input_channels, T(1));
    }
  }

  const Plan& plan() const { return plan_; }

  /// Input is row-major [frames x channels]. Returns n_classes logits for
  /// SwishNet, frames x n_classes for the SNN.
  std::vector<T> forward(std::span<const double> input, std::size_t frames, const GraphHooks* hooks = nullptr) const {
    const std::size_t c = plan_.input_channels;
    if (input.size() != frames * c) throw ShapeError("input size does not match frames x channels");
    detail::check_input(plan_, frames, c);
    Act<T> x{1, frames, c, std::vector<T>(frames * c)};
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t j = 0; j < c; ++j) x.data[t * c + j] = (static_cast<T>(input[t * c + j]) - mean_[j]) * inv_std_[j];
    }
    InferEngine<T> e(params_, plan_);
    return run_plan(plan_, e, std::move(x), hooks).data;
  }

  std::vector<T> forward(const FeatureMatrix& f, const GraphHooks* hooks = nullptr) const {
    return forward(f.values.data, f.frames(), hooks);
  }

 private:
  Plan plan_;
  std::vector<std::vector<T>> params_;
  std::vector<T> mean_, inv_std_;
};

/// Standardizes [.. x C] rows with the model's input norm.
inline Tensor normalize_input(const Model& m, Tensor x) {
  if (m.norm.empty()) return x;
  const std::size_t c = m.plan.input_channels;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - m.norm.mean[i % c]) * m.norm.inv_std[i % c];
  return x;
}

/// Builds the model graph on `tape` over a [T x C] or [B x T x C] input
/// (rows x C for the SNN). Parameters are leaves that require grad when
/// `param_vars` is non-null, which receives their handles.
inline ad::Var forward_on_tape(const Model& m, ad::Tape& tape, const Tensor& input, bool training,
                               std::mt19937_64* rng, std::vector<ad::Var>* param_vars = nullptr,
                               const GraphHooks* hooks = nullptr) {
  const std::size_t frames = input.rank() == 3 ? input.dim(1) : input.dim(0);
  detail::check_input(m.plan, frames, input.shape().back());
  std::vector<ad::Var> vars;
  for (const Tensor& t : m.params) {
    Tensor leaf = t;
    leaf.requires_grad = param_vars != nullptr;
    vars.push_back(tape.leaf(std::move(leaf)));
  }
  if (param_vars) *param_vars = vars;
  TapeEngine e(tape, std::move(vars), m.plan.dropout_rate, training, rng);
  return run_plan(m.plan, e, tape.constant(normalize_input(m, input)), hooks);
}

/// Float64 forward pass. Inference goes through the compiled path; training
/// mode (dropout active) through the tape.
inline Tensor forward(const Model& m, const FeatureMatrix& f, bool training = false, std::uint64_t seed = 0) {
  if (!training) {
    auto out = CompiledModel<double>(m).forward(f);
    const std::size_t k = m.plan.n_classes;
    return m.plan.arch == Arch::Snn ? Tensor({f.frames(), k}, std::move(out)) : Tensor({k}, std::move(out));
  }
  ad::Tape tape;
  std::mt19937_64 rng(seed);
  const Tensor input({f.frames(), f.coeffs()}, f.values.data);
  return tape.value(forward_on_tape(m, tape, input, true, &rng));
}

// ---------------------------------------------------------------------------
// Serialization

inline std::vector<unsigned char> encode_model(const Model& m) {
  Container c;
  c.magic = {'S', 'W', 'S', 'H'};
  c.config = serialize_config(m.config);
  for (const auto& [k, v] : m.metadata) c.config += "meta." + k + " = " + v + "\n";
  for (std::size_t i = 0; i < m.params.size(); ++i) c.records.emplace_back(m.plan.params[i].name, m.params[i]);
  if (!m.norm.empty()) {
    const std::size_t n = m.norm.mean.size();
    c.records.emplace_back("input_norm.mean", Tensor({n}, m.norm.mean));
    c.records.emplace_back("input_norm.inv_std", Tensor({n}, m.norm.inv_std));
  }
  return encode_container(c);
}

inline Model decode_model(const std::vector<unsigned char>& bytes) {
  const Container c = decode_container(bytes, "SWSH");
  Model m;
  try {
    m.config = parse_config(c.config);
    m.plan = resolve(m.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  std::istringstream in(c.config);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("meta.", 0) != 0) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m.metadata[detail::trim(line.substr(5, eq - 5))] = detail::trim(line.substr(eq + 1));
  }
  for (const ParamSpec& ps : m.plan.params) {
    const Tensor* t = c.find(ps.name);
    if (!t) throw FormatError("missing parameter record " + ps.name);
    if (t->shape() != ps.shape) {
      throw FormatError("parameter " + ps.name + " has shape " + shape_str(t->shape()) + ", expected " +
                        shape_str(ps.shape));
    }
    m.params.push_back(*t);
  }
  const Tensor* mean = c.find("input_norm.mean");
  const Tensor* inv = c.find("input_norm.inv_std");
  if (mean && inv) {
    if (mean->size() != m.plan.input_channels || inv->size() != m.plan.input_channels) {
      throw FormatError("input norm does not match input channels");
    }
    m.norm = {mean->vec(), inv->vec()};
  } else {
    m.norm = FeatureNorm::identity(m.plan.input_channels);
  }
  return m;
}

inline void save(const Model& m, const std::filesystem::path& path) { write_bytes(path, encode_model(m)); }
inline Model load(const std::filesystem::path& path) { return decode_model(read_bytes(path)); }

}  // namespace swishnet
