// SPDX-License-Identifier: Apache-2.0
#include <swishnet/gradcheck.hpp>
#include <swishnet/model.hpp>

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

using namespace swishnet;
using Catch::Approx;

namespace {

FeatureMatrix random_features(std::size_t frames, std::size_t coeffs, std::mt19937_64& rng) {
  FeatureMatrix f{Grid(frames, coeffs)};
  std::normal_distribution<double> d(0.0, 1.0);
  for (double& v : f.values.data) v = d(rng);
  return f;
}

std::filesystem::path preset_path(const std::string& name) {
  return std::filesystem::path(SWISHNET_SOURCE_DIR) / "presets" / (name + ".cfg");
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("swishnet_test_" + name);
}

// Hand enumeration of the slim stack: conv 20->2x8 K3, separable K6 over 20,
// conv 16->2x8, separable over 16, three middle convs, three strided convs,
// three 8->8 skip aligners, 8->3 head.
constexpr std::size_t kSlimByHand = (3 * 20 * 16 + 16) + (6 * 20 + 20 * 16 + 16) + (3 * 16 * 16 + 16) +
                                    (6 * 16 + 16 * 16 + 16) + (3 * 16 * 16 + 16) + 2 * (3 * 8 * 16 + 16) +
                                    3 * (3 * 8 * 16 + 16) + 3 * (8 * 8 + 8) + (8 * 3 + 3);

}  // namespace

TEST_CASE("preset files match the built-in configs", "[model]") {
  CHECK(load_config(preset_path("swishnet-slim")) == presets::swishnet_slim());
  CHECK(load_config(preset_path("swishnet-wide")) == presets::swishnet_wide());
  CHECK(load_config(preset_path("snn")) == presets::snn());
}

TEST_CASE("config text round-trips", "[model]") {
  for (const ModelConfig& c : {presets::swishnet_slim(), presets::swishnet_wide(), presets::snn({16, 8, 8, 4})}) {
    CHECK(parse_config(serialize_config(c)) == c);
  }
  ModelConfig c = presets::swishnet_slim();
  c.dropout_rate = 0.1;
  CHECK(parse_config(serialize_config(c)).dropout_rate == 0.1);
  CHECK_THROWS_AS(parse_config("bogus = 1"), ConfigError);
  CHECK_THROWS_AS(parse_config("layer = gated_conv width=x"), ConfigError);
  CHECK_THROWS_AS(parse_config("layer = warp_drive"), ConfigError);
}

TEST_CASE("parameter counts", "[model]") {
  const std::size_t slim = param_count(presets::swishnet_slim());
  const std::size_t wide = param_count(presets::swishnet_wide());
  CHECK(slim == kSlimByHand);
  CHECK(slim >= 4000);
  CHECK(slim <= 8000);
  const double ratio = static_cast<double>(wide) / static_cast<double>(slim);
  CHECK(ratio >= 2.5);
  CHECK(ratio <= 4.0);
  CHECK(param_count(presets::snn()) == 179203);

  // A lone gated conv over 20 channels is a 20 -> 16, K=3 convolution (976) plus a 9x3 head.
  ModelConfig one;
  one.layers = {{LayerKind::GatedConvBlock, 8, 3, 1, false, false}, {LayerKind::Head, 0, 1, 1, false, false}};
  CHECK(param_count(one) == 976 + 27);

  // Dense layer count (D_in + 1) * D_out.
  ModelConfig d = presets::snn({16});
  d.input_channels = 20;
  CHECK(param_count(d) == 336 + 17 * 3);

  for (const ModelConfig& c : {presets::swishnet_slim(), presets::swishnet_wide(), presets::snn(), one, d}) {
    CHECK(build(c, 1).n_params() == param_count(c));
  }
}

TEST_CASE("wide preset doubles every slim width", "[model]") {
  const Plan s = resolve(presets::swishnet_slim());
  const Plan w = resolve(presets::swishnet_wide());
  REQUIRE(s.layers.size() == w.layers.size());
  for (std::size_t i = 0; i + 1 < s.layers.size(); ++i) CHECK(w.layers[i].width == 2 * s.layers[i].width);
  CHECK(s.min_frames == 16);
}

TEST_CASE("invalid configs are rejected", "[model]") {
  using K = LayerKind;
  const LayerSpec head{K::Head, 0, 1, 1, false, false};
  auto with = [&](std::vector<LayerSpec> layers) {
    ModelConfig c;
    c.layers = std::move(layers);
    return c;
  };
  // 20 input channels into an 8-wide residual layer.
  CHECK_THROWS_AS(resolve(with({{K::GatedConvBlock, 8, 3, 1, true, false}, head})), ConfigError);
  // Strided residual.
  CHECK_THROWS_AS(
      resolve(with({{K::GatedConvBlock, 8, 3, 1, false, false}, {K::StridedGatedConv, 8, 3, 2, true, false}, head})),
      ConfigError);
  CHECK_THROWS_AS(resolve(with({{K::GatedSeparableBranch, 8, 6, 1, false, false}, head})), ConfigError);
  CHECK_THROWS_AS(resolve(with({head, {K::GatedConvBlock, 8, 3, 1, false, false}})), ConfigError);
  CHECK_THROWS_AS(resolve(with({{K::GatedConvBlock, 8, 3, 1, false, false}})), ConfigError);
  CHECK_THROWS_AS(resolve(with({{K::Dense, 8, 1, 1, false, false}, head})), ConfigError);
  CHECK_THROWS_AS(resolve(with({{K::GatedConvBlock, 0, 3, 1, false, false}, head})), ConfigError);
  CHECK_THROWS_AS(build(with({{K::GatedConvBlock, 8, 3, 1, true, false}, head}), 0), ConfigError);
}

TEST_CASE("build is deterministic per seed", "[model]") {
  const Model a = build(presets::swishnet_slim(), 7);
  const Model b = build(presets::swishnet_slim(), 7);
  const Model c = build(presets::swishnet_slim(), 8);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  for (const Tensor& t : a.params) CHECK(t.all_finite());
}

TEST_CASE("forward accepts clip-length inputs and rejects short ones", "[model]") {
  std::mt19937_64 rng(3);
  for (const ModelConfig& c : {presets::swishnet_slim(), presets::swishnet_wide()}) {
    const Model m = build(c, 1);
    for (std::size_t frames : {48u, 98u, 198u, 16u}) {
      const Tensor y = forward(m, random_features(frames, 20, rng));
      CHECK(y.shape() == Shape{3});
      CHECK(y.all_finite());
    }
    CHECK_THROWS_AS(forward(m, random_features(15, 20, rng)), TooShortError);
    CHECK_THROWS_AS(forward(m, random_features(48, 19, rng)), ShapeError);
  }
}

TEST_CASE("zero input yields the head bias", "[model]") {
  Model m = build(presets::swishnet_slim(), 2);
  Tensor& hb = m.params[m.plan.layers.back().b];
  hb[0] = 0.25, hb[1] = -1.5, hb[2] = 3.0;
  const Tensor y = forward(m, FeatureMatrix{Grid(48, 20, 0.0)});
  CHECK(y.vec() == std::vector<double>{0.25, -1.5, 3.0});
}

TEST_CASE("tape and compiled paths agree", "[model]") {
  std::mt19937_64 rng(11);
  for (const ModelConfig& c : {presets::swishnet_slim(), presets::swishnet_wide(), presets::snn({32, 16, 16, 8})}) {
    Model m = build(c, 5);
    // Non-trivial biases and norm so every term is exercised.
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      if (m.plan.params[i].bias) m.params[i] = ad::random_tensor(m.params[i].shape(), rng, 0.1);
    }
    for (std::size_t j = 0; j < c.input_channels; ++j) m.norm.mean[j] = 0.1 * j, m.norm.inv_std[j] = 1.0 + 0.01 * j;
    const FeatureMatrix f = random_features(98, c.input_channels, rng);

    ad::Tape tape;
    const Tensor input({f.frames(), f.coeffs()}, f.values.data);
    const Tensor via_tape = tape.value(forward_on_tape(m, tape, input, false, nullptr));
    const auto via_double = CompiledModel<double>(m).forward(f);
    const auto via_float = CompiledModel<float>(m).forward(f);
    REQUIRE(via_tape.size() == via_double.size());
    for (std::size_t i = 0; i < via_double.size(); ++i) {
      CHECK(via_tape[i] == Approx(via_double[i]).margin(1e-12));
      CHECK(static_cast<double>(via_float[i]) == Approx(via_double[i]).margin(1e-4));
    }
  }
}

TEST_CASE("batched tape forward equals per-clip forward", "[model]") {
  std::mt19937_64 rng(12);
  const Model m = build(presets::swishnet_slim(), 9);
  const FeatureMatrix a = random_features(48, 20, rng), b = random_features(48, 20, rng);
  Tensor batch({2, 48, 20});
  std::copy(a.values.data.begin(), a.values.data.end(), batch.data().begin());
  std::copy(b.values.data.begin(), b.values.data.end(), batch.data().begin() + 48 * 20);
  ad::Tape tape;
  const Tensor y = tape.value(forward_on_tape(m, tape, batch, false, nullptr));
  REQUIRE(y.shape() == Shape{2, 3});
  const Tensor ya = forward(m, a), yb = forward(m, b);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(y[k] == Approx(ya[k]).margin(1e-12));
    CHECK(y[3 + k] == Approx(yb[k]).margin(1e-12));
  }
}

TEST_CASE("dropout is active only in training mode", "[model]") {
  ModelConfig c = presets::swishnet_slim();
  c.dropout_rate = 0.1;
  const Model m = build(c, 4);
  std::mt19937_64 rng(1);
  const FeatureMatrix f = random_features(48, 20, rng);
  CHECK(forward(m, f) == forward(m, f));
  CHECK(forward(m, f, true, 3) == forward(m, f, true, 3));
  CHECK(forward(m, f, true, 3) != forward(m, f));
}

TEST_CASE("causal activations ignore later frames", "[model]") {
  const Model m = build(presets::swishnet_slim(), 21);
  const CompiledModel<double> cm(m);
  std::mt19937_64 rng(22);
  auto capture = [&](const FeatureMatrix& f) {
    std::map<std::string, std::pair<std::size_t, Tensor>> points;
    GraphHooks hooks;
    hooks.observe = [&](const std::string& name, std::size_t stride, const Tensor& v) { points[name] = {stride, v}; };
    cm.forward(f, &hooks);
    return points;
  };
  const FeatureMatrix base = random_features(98, 20, rng);
  const auto ref = capture(base);
  REQUIRE(ref.size() == 14);
  std::uniform_int_distribution<std::size_t> pick(0, 97);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMatrix f = base;
    const std::size_t t = pick(rng);
    for (std::size_t c = 0; c < 20; ++c) f.values(t, c) += 1.0;
    const auto got = capture(f);
    for (const auto& [name, sv] : ref) {
      const auto& [stride, before] = sv;
      const Tensor& after = got.at(name).second;
      const std::size_t ch = before.dim(1);
      for (std::size_t j = 0; j < before.dim(0); ++j) {
        if (stride * j >= t) continue;
        for (std::size_t c = 0; c < ch; ++c) REQUIRE(after[j * ch + c] == before[j * ch + c]);
      }
    }
  }

  // Appending frames leaves every earlier position untouched.
  const FeatureMatrix longer = [&] {
    FeatureMatrix f = random_features(130, 20, rng);
    std::copy(base.values.data.begin(), base.values.data.end(), f.values.data.begin());
    return f;
  }();
  const auto ext = capture(longer);
  for (const auto& [name, sv] : ref) {
    const Tensor& before = sv.second;
    const Tensor& after = ext.at(name).second;
    // Only positions that read frames past the original end may change.
    const std::size_t rows = (98 - 1) / sv.first + 1;
    for (std::size_t i = 0; i < std::min(rows, before.dim(0)) * before.dim(1); ++i) CHECK(after[i] == before[i]);
  }
}

TEST_CASE("residual and skip paths are connected", "[model]") {
  const Model m = build(presets::swishnet_slim(), 31);
  const CompiledModel<double> cm(m);
  std::mt19937_64 rng(32);
  const FeatureMatrix f = random_features(98, 20, rng);
  const auto full = cm.forward(f);
  std::size_t residuals = 0, skips = 0;
  for (std::size_t i = 0; i < m.plan.layers.size(); ++i) {
    const LayerSpec& s = m.plan.layers[i].spec;
    if (s.residual) {
      GraphHooks h;
      h.drop_residual = {i};
      CHECK(cm.forward(f, &h) != full);
      ++residuals;
    }
    if (s.skip) {
      GraphHooks h;
      h.drop_skip = {i};
      CHECK(cm.forward(f, &h) != full);
      ++skips;
    }
  }
  CHECK(residuals == 2);
  CHECK(skips == 3);
}

TEST_CASE("slim model gradients match finite differences", "[model][gradcheck]") {
  std::mt19937_64 rng(41);
  Model m = build(presets::swishnet_slim(), 41);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.plan.params[i].bias) m.params[i] = ad::random_tensor(m.params[i].shape(), rng, 0.1);
  }
  const Tensor x = ad::random_tensor({48, 20}, rng);
  const Tensor w = ad::random_tensor({3}, rng);
  const auto res = ad::model_grad_check(m, x, w);
  INFO("worst input " << res.worst_input << " index " << res.worst_index << " analytic " << res.analytic
                      << " numeric " << res.numeric);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("SNN gradients match finite differences", "[model][gradcheck]") {
  std::mt19937_64 rng(42);
  const Model m = build(presets::snn({12, 10, 8, 6}), 42);
  const Tensor x = ad::random_tensor({5, 60}, rng);
  const Tensor w = ad::random_tensor({5, 3}, rng);
  CHECK(ad::model_grad_check(m, x, w).max_rel_error < 1e-4);
}

TEST_CASE("SNN propagates zeros through SELU", "[model]") {
  Model m = build(presets::snn({16, 16, 16, 16}), 1);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.plan.params[i].bias) m.params[i] = Tensor(m.params[i].shape(), 0.0);
  }
  const Tensor y = forward(m, FeatureMatrix{Grid(4, 60, 0.0)});
  CHECK(y.shape() == Shape{4, 3});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("save and load round-trip", "[model]") {
  Model m = build(presets::swishnet_slim(), 51);
  m.metadata["epochs"] = "12";
  for (std::size_t j = 0; j < 20; ++j) m.norm.mean[j] = 0.5 * j, m.norm.inv_std[j] = 2.0;
  m.round_to_storage();
  const auto path = temp_file("slim.swsh");
  save(m, path);
  const Model back = load(path);
  CHECK(back.config == m.config);
  CHECK(back.params == m.params);
  CHECK(back.norm == m.norm);
  CHECK(back.metadata.at("epochs") == "12");
  CHECK(std::filesystem::file_size(path) < 64 * 1024);

  std::mt19937_64 rng(52);
  for (int i = 0; i < 10; ++i) {
    const FeatureMatrix f = random_features(98, 20, rng);
    CHECK(forward(back, f) == forward(m, f));
  }

  auto bytes = encode_model(m);
  CHECK_THROWS_AS(decode_model({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)}),
                  FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_model(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_model(bad_version), FormatError);
  std::filesystem::remove(path);
}
