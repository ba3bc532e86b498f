#include "rvt/model.hpp"
#include "rvt/nn/grad_check.hpp"
#include "rvt/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace rvt;

namespace {

RVTConfig toy_config(std::size_t views = 2) {
  RVTConfig c;
  c.views = views;
  c.image_res = 8;
  c.patch_px = 4;
  c.d_model = 8;
  c.heads = 2;
  c.d_lang = 6;
  c.d_gripper = 4;
  c.max_lang_tokens = 8;
  c.mlp_ratio = 2;
  return c;
}

ViewImage random_view(int res, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ViewImage v(res, res);
  for (auto& x : v.rgb.data) x = u(rng);
  for (auto& x : v.depth.data) x = u(rng);
  for (auto& x : v.xyz.data) x = u(rng) - 0.5;
  return v;
}

std::vector<ViewImage> random_views(const RVTConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ViewImage> v;
  for (std::size_t k = 0; k < c.views; ++k) v.push_back(random_view(static_cast<int>(c.image_res), rng));
  return v;
}

template <class T>
void zero_param(nn::Weights<T>& w, const std::string& name) {
  auto& p = w.params.at(name).value;
  std::fill(p.begin(), p.end(), T(0));
}

}  // namespace

TEST(Config, TokenCounts) {
  RVTConfig c;
  EXPECT_EQ(c.tokens_per_view(), 121u);
  EXPECT_EQ(c.image_tokens(), 605u);
  c.image_res = 100;
  EXPECT_EQ(c.tokens_per_view(), 25u);
  EXPECT_EQ(c.global_dim(), 2u * 5u * 128u);
}

TEST(Config, ValidationRejectsBadShapes) {
  RVTConfig c;
  c.image_res = 210;
  c.patch_px = 20;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RVTConfig{};
  c.depth_local = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RVTConfig{};
  c.rot_bins = 36;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RVTConfig{};
  c.depth_local = 0;
  c.depth_joint = 8;
  EXPECT_NO_THROW(c.validate());
}

TEST(Patchify, IndexMapsAreInverseBijections) {
  const auto fwd = patch_pixel_index(220, 20);
  const auto inv = pixel_patch_index(220, 20);
  ASSERT_EQ(fwd.size(), 220u * 220u);
  std::vector<int> seen(fwd.size(), 0);
  for (std::size_t k = 0; k < fwd.size(); ++k) {
    ++seen[fwd[k]];
    EXPECT_EQ(inv[fwd[k]], k);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Patchify, PatchInputLayout) {
  RVTConfig c = toy_config(1);
  std::mt19937_64 rng(1);
  const ViewImage v = random_view(8, rng);
  const auto x = patch_inputs<double>(v, c);
  ASSERT_EQ(x.size(), 4u * 16u * 7u);
  // token 3 (bottom-right patch), pixel (1, 2) within it -> image (5, 6)
  const double* px = x.data() + (3 * 16 + 1 * 4 + 2) * 7;
  EXPECT_EQ(px[0], v.rgb.at(5, 6, 0));
  EXPECT_EQ(px[3], v.depth.at(5, 6));
  EXPECT_EQ(px[6], v.xyz.at(5, 6, 2));
  c.use_depth = false;
  c.use_xyz = false;
  EXPECT_EQ(patch_inputs<double>(v, c).size(), 4u * 16u * 3u);
  c.image_res = 12;
  EXPECT_THROW(patch_inputs<double>(v, c), std::invalid_argument);
}

TEST(Patchify, IdenticalViewsDifferOnlyThroughPositions) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  auto w = m.init(3);
  std::mt19937_64 rng(2);
  const ViewImage v = random_view(8, rng);
  nn::ParamScope<double> p(w, false);
  const auto tok = m.patchify(p, {v, v}, {});
  const std::size_t n = c.tokens_per_view() * c.d_model;
  bool differ = false;
  for (std::size_t i = 0; i < n; ++i) differ = differ || tok[i] != tok[n + i];
  EXPECT_TRUE(differ);
  zero_param(w, "pos.image");
  nn::ParamScope<double> p0(w, false);
  const auto tok0 = m.patchify(p0, {v, v}, {});
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(tok0[i], tok0[n + i]);
}

TEST(Language, StubIsDeterministicAndWordTokenized) {
  const StubLanguageEncoder enc(16);
  const auto a = enc.encode("stack blocks"), b = enc.encode("stack blocks");
  EXPECT_EQ(a.count, 2u);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(enc.encode("").count, 0u);
  EXPECT_EQ(enc.encode("  reach   the red  block ").count, 4u);
}

TEST(Language, FileRoundTripAndMismatch) {
  const StubLanguageEncoder enc(5);
  const auto t = enc.encode("pick the blue block");
  const std::string path = (std::filesystem::temp_directory_path() / "rvt_lang.emb").string();
  save_language_embedding(t, path, false);
  const auto back = load_language_embedding(path, "pick the blue block");
  EXPECT_EQ(back.embeddings, t.embeddings);
  EXPECT_EQ(back.source, LanguageSource::File);
  EXPECT_THROW(load_language_embedding(path, "pick the red block"), std::invalid_argument);
  save_language_embedding(t, path, true);
  const auto f32 = load_language_embedding(path, "pick the blue block");
  for (std::size_t i = 0; i < t.embeddings.size(); ++i) EXPECT_EQ(f32.embeddings[i], static_cast<float>(t.embeddings[i]));
}

TEST(Gripper, StateChangesEveryToken) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  const auto w = m.init(4);
  const auto views = random_views(c, 5);
  nn::ParamScope<double> p(w, false);
  const auto open = m.patchify(p, views, {true, 0.5}), closed = m.patchify(p, views, {false, 0.5});
  for (std::size_t t = 0; t < c.image_tokens(); ++t) {
    bool differ = false;
    for (std::size_t j = 0; j < c.d_model; ++j) differ = differ || open[t * c.d_model + j] != closed[t * c.d_model + j];
    EXPECT_TRUE(differ) << "token " << t;
  }
}

TEST(Gripper, ZeroWidthDisablesConditioning) {
  RVTConfig c = toy_config(2);
  c.d_gripper = 0;
  const RvtModel<double> m(c);
  const auto w = m.init(4);
  EXPECT_FALSE(w.params.count("gripper.fc1.weight"));
  const auto views = random_views(c, 5);
  nn::ParamScope<double> p(w, false);
  EXPECT_EQ(m.patchify(p, views, {true, 0.1}).values(), m.patchify(p, views, {false, 0.9}).values());
}

TEST(Forward, OutputShapesFullScale) {
  RVTConfig c;  // K=5, res 220, d 128
  const RvtModel<float> m(c);
  const auto w = m.init(0);
  std::vector<ViewImage> views(5, ViewImage(220, 220));
  nn::ParamScope<float> p(w, false);
  const LanguageTokens lang = StubLanguageEncoder(c.d_lang).encode("reach the red block");
  const auto image = m.patchify(p, views, {});
  EXPECT_EQ(image.dim(0), 605u);
  const auto out = m.forward(p, views, lang, {});
  ASSERT_EQ(out.heatmap_logits.size(), 5u);
  EXPECT_EQ(out.heatmap_logits[0].shape(), (nn::Shape{220, 220}));
  EXPECT_EQ(out.features[0].shape(), (nn::Shape{121, 128}));
  EXPECT_EQ(out.rot_logits.shape(), (nn::Shape{3, 72}));
  EXPECT_EQ(out.global.dim(1), c.global_dim());
  EXPECT_EQ(out.gripper_logit.size(), 1u);
  EXPECT_EQ(out.collision_logit.size(), 1u);
}

TEST(Forward, RejectsWrongViewCount) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  const auto w = m.init(0);
  nn::ParamScope<double> p(w, false);
  EXPECT_THROW(m.forward(p, random_views(toy_config(3), 1), {}, {}), std::invalid_argument);
}

TEST(Forward, RunsWithoutLanguage) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  const auto w = m.init(0);
  nn::ParamScope<double> p(w, false);
  const auto out = m.forward(p, random_views(c, 2), StubLanguageEncoder(c.d_lang).encode(""), {});
  EXPECT_EQ(out.rot_logits.shape(), (nn::Shape{3, 72}));
}

TEST(Forward, StageOneIsolatesViews) {
  const RVTConfig c = toy_config(3);
  const RvtModel<double> m(c);
  const auto w = m.init(1);
  auto views = random_views(c, 3);
  nn::ParamScope<double> p(w, false);
  const auto a = m.local_stage(p, m.patchify(p, views, {}));
  std::mt19937_64 rng(77);
  views[1] = random_view(8, rng);
  const auto b = m.local_stage(p, m.patchify(p, views, {}));
  const std::size_t n = c.tokens_per_view() * c.d_model;
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[2 * n + i], b[2 * n + i]);
  }
}

TEST(Forward, NoSeparateProcessingMixesViews) {
  RVTConfig c = toy_config(2);
  c.depth_local = 0;
  c.depth_joint = 8;
  const RvtModel<double> m(c);
  const auto w = m.init(1);
  auto views = random_views(c, 3);
  nn::ParamScope<double> p(w, false);
  const auto a = m.forward(p, views, {}, {});
  std::mt19937_64 rng(78);
  views[1] = random_view(8, rng);
  const auto b = m.forward(p, views, {}, {});
  EXPECT_NE(a.heatmap_logits[0].values(), b.heatmap_logits[0].values());
}

TEST(Forward, LanguageOrderIrrelevantWithoutPositions) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  auto w = m.init(2);
  zero_param(w, "pos.lang");
  const StubLanguageEncoder enc(c.d_lang);
  const auto views = random_views(c, 4);
  nn::ParamScope<double> p(w, false);
  const auto a = m.forward(p, views, enc.encode("reach the red block"), {});
  const auto b = m.forward(p, views, enc.encode("block red the reach"), {});
  for (std::size_t i = 0; i < a.rot_logits.size(); ++i) EXPECT_NEAR(a.rot_logits[i], b.rot_logits[i], 1e-12);
  for (std::size_t i = 0; i < a.heatmap_logits[1].size(); ++i) {
    EXPECT_NEAR(a.heatmap_logits[1][i], b.heatmap_logits[1][i], 1e-12);
  }
}

TEST(Forward, BitwiseDeterministic) {
  const RVTConfig c = toy_config(2);
  const RvtModel<float> m(c);
  const auto w = m.init(9);
  const auto views = random_views(c, 6);
  nn::ParamScope<float> p1(w, false), p2(w, false);
  EXPECT_EQ(m.forward(p1, views, {}, {}).heatmap_logits[1].values(), m.forward(p2, views, {}, {}).heatmap_logits[1].values());
}

TEST(DecodeHeatmap, ShapeZeroWeightsAndBijection) {
  RVTConfig c;
  c.d_model = 16;
  c.heads = 2;
  const RvtModel<double> m(c);
  auto w = m.init(0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> grid(121 * 16);
  for (auto& x : grid) x = d(rng);
  const auto g = nn::Tensor<double>::constant({121, 16}, grid);
  nn::ParamScope<double> p(w, false);
  const auto logits = m.decode_heatmap(p, g);
  EXPECT_EQ(logits.shape(), (nn::Shape{220, 220}));
  const auto per_token = nn::apply_linear(p, "heatmap", g);
  double s1 = 0.0, s2 = 0.0;
  for (double x : per_token.data()) s1 += std::abs(x);
  for (double x : logits.data()) s2 += std::abs(x);
  EXPECT_NEAR(s1, s2, 1e-9 * s1);
  zero_param(w, "heatmap.weight");
  zero_param(w, "heatmap.bias");
  nn::ParamScope<double> p0(w, false);
  const auto zeros = m.decode_heatmap(p0, g);
  for (double x : zeros.data()) EXPECT_EQ(x, 0.0);
}

TEST(GlobalFeature, UniformAndOneHotWeights) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  std::vector<double> f(4 * 3);
  for (auto& x : f) x = d(rng);
  const auto feat = nn::Tensor<double>::constant({4, 3}, f);
  const auto uniform = nn::Tensor<double>::constant({4, 4}, std::vector<double>(16, 1.0 / 16.0));
  const auto g = global_feature<double>({feat}, {uniform}, 2);
  ASSERT_EQ(g.dim(1), 6u);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = (f[c] + f[3 + c] + f[6 + c] + f[9 + c]) / 4.0;
    EXPECT_NEAR(g[c], mean, 1e-12);
  }
  std::vector<double> hot(16, 0.0);
  hot[2 * 4 + 3] = 1.0;  // pixel (2, 3) lies in patch (1, 1) = token 3
  const auto g2 = global_feature<double>({feat}, {nn::Tensor<double>::constant({4, 4}, hot)}, 2);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(g2[c], f[9 + c], 1e-12);
}

TEST(GlobalFeature, OrderMatchesHandLoop) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<nn::Tensor<double>> feats, heats;
  std::vector<std::vector<double>> fv, hv;
  for (int k = 0; k < 2; ++k) {
    std::vector<double> f(4 * 3), h(16);
    for (auto& x : f) x = u(rng) - 0.5;
    double s = 0.0;
    for (auto& x : h) s += (x = u(rng));
    for (auto& x : h) x /= s;
    feats.push_back(nn::Tensor<double>::constant({4, 3}, f));
    heats.push_back(nn::Tensor<double>::constant({4, 4}, h));
    fv.push_back(f);
    hv.push_back(h);
  }
  const auto g = global_feature(feats, heats, 2);
  ASSERT_EQ(g.size(), 12u);
  std::vector<double> expected;
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) acc += hv[k][r * 4 + col] * fv[k][((r / 2) * 2 + col / 2) * 3 + c];
      expected.push_back(acc);
    }
  }
  for (int k = 0; k < 2; ++k)
    for (int c = 0; c < 3; ++c) {
      double mx = -1e300;
      for (int t = 0; t < 4; ++t) mx = std::max(mx, fv[k][t * 3 + c]);
      expected.push_back(mx);
    }
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(g[i], expected[i], 1e-12) << i;
}

TEST(GlobalFeature, RejectsUnnormalizedHeatmap) {
  const auto feat = nn::Tensor<double>::zeros({4, 3});
  const auto bad = nn::Tensor<double>::constant({4, 4}, std::vector<double>(16, 0.1));
  EXPECT_THROW(global_feature<double>({feat}, {bad}, 2), std::invalid_argument);
}

TEST(GradCheck, FullToyModelWithMixtureLoss) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  const auto w = m.init(5);
  const auto views = random_views(c, 7);
  const auto lang = StubLanguageEncoder(c.d_lang).encode("reach the red block");
  GTTargets gt;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 2; ++k) {
    ViewTarget t;
    t.visible = true;
    t.distribution = Heatmap(8, 8, 1);
    double s = 0.0;
    for (auto& x : t.distribution.data) s += (x = u(rng));
    for (auto& x : t.distribution.data) x /= s;
    gt.views.push_back(t);
  }
  gt.rot_bins = {3, 40, 71};
  gt.gripper_open = false;
  gt.collision_allowed = true;
  nn::GradCheckOptions opt;
  opt.max_coords = 300;
  const auto r = nn::grad_check(
      [&](nn::ParamScope<double>& p) { return compute_loss(m.forward(p, views, lang, {true, 0.4}), gt).total; }, w, opt);
  EXPECT_GE(r.coords_checked, 200u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << " " << r.worst_analytic << " " << r.worst_numeric;
}

TEST(GradCheck, GripperWeightsReceiveGradient) {
  const RVTConfig c = toy_config(2);
  const RvtModel<double> m(c);
  const auto w = m.init(6);
  const auto views = random_views(c, 8);
  GTTargets gt;
  for (int k = 0; k < 2; ++k) {
    ViewTarget t;
    t.visible = true;
    t.distribution = Heatmap(8, 8, 1, 1.0 / 64.0);
    gt.views.push_back(t);
  }
  gt.gripper_open = false;
  nn::ParamScope<double> p(w);
  nn::backward(compute_loss(m.forward(p, views, {}, {true, 0.0}), gt).total);
  const auto g = p.gradients().at("gripper.fc1.weight");
  double norm = 0.0;
  for (double x : g) norm += x * x;
  EXPECT_GT(norm, 0.0);
}
