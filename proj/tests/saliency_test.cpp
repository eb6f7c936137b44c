#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"
#include "wscam/resample.hpp"
#include "wscam/saliency.hpp"

using namespace wscam;
using wscam::testing::random_net;

namespace {

// Activation at layer 1 equals the (nonnegative) input: identity 1x1 conv + ReLU.
MicroNet passthrough_net(std::size_t channels, std::vector<double> head_weights) {
  Conv2d conv(channels, channels, 1, 1, 1, 0);
  for (std::size_t k = 0; k < channels; ++k) conv.weight[k * channels + k] = 1.0;
  Linear head(channels, 1);
  head.weight = Tensor({1, channels}, std::move(head_weights));
  return MicroNet({conv, Relu{}, GlobalAvgPool{}, head});
}

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

const Tensor kA({2, 2, 2}, {1, 0, 0, 1, /* A2 */ 0, 2, 0, 0});

}  // namespace

TEST(Cam, HandLinearCombination) {
  const MicroNet net = passthrough_net(2, {1.0, 0.5});
  const ForwardRecord rec = forward(net, kA);
  EXPECT_EQ(cam(rec, net, 0, 1).grid, Tensor::from_rows({{1, 1}, {0, 1}}));
}

TEST(Cam, ZeroAndNegativeWeightsClip) {
  const ForwardRecord rec0 = forward(passthrough_net(2, {0.0, 0.0}), kA);
  EXPECT_EQ(cam(rec0, passthrough_net(2, {0.0, 0.0}), 0, 1).grid.max(), 0.0);
  const MicroNet neg = passthrough_net(1, {-1.0});
  const Tensor positive({1, 2, 2}, {0.5, 1, 2, 3});
  EXPECT_EQ(cam(forward(neg, positive), neg, 0, 1).grid.max(), 0.0);
}

TEST(Cam, RequiresGapAdjacentLayer) {
  const MicroNet net = passthrough_net(2, {1.0, 0.5});
  const ForwardRecord rec = forward(net, kA);
  try {
    cam(rec, net, 0, 0);
    FAIL() << "expected CAM to reject a non-GAP layer";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("global_avg_pool"), std::string::npos);
  }
}

TEST(GradCam, GapHeadIsCamOverArea) {
  const MicroNet net = passthrough_net(2, {1.0, 0.5});
  const ForwardRecord rec = forward(net, kA);
  const Tensor c = cam(rec, net, 0, 1).grid;
  const Tensor g = grad_cam(rec, net, 0, 1).grid;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], c[i] / 4.0);
}

TEST(GradCam, ZeroGradientsGiveZeroMap) {
  const MicroNet net = passthrough_net(2, {0.0, 0.0});
  const ForwardRecord rec = forward(net, kA);
  for (Method m : {Method::grad_cam, Method::grad_cam_pp, Method::xgrad_cam}) {
    EXPECT_EQ(compute_saliency(m, rec, net, 0, 1, {}).grid.max(), 0.0) << method_name(m);
  }
  const std::size_t layers[] = {1};
  EXPECT_EQ(layer_cam(rec, net, 0, layers).grid.max(), 0.0);
}

TEST(GradCam, UniformPositiveGradientFactorsThroughRelu) {
  const MicroNet net = passthrough_net(1, {2.0});
  const Tensor a({1, 2, 3}, {0, 1, 2, 3, 4, 5});
  const ForwardRecord rec = forward(net, a);
  const Tensor g = grad_cam(rec, net, 0, 1).grid;
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(g[i], (2.0 / 6.0) * a[i]);
}

TEST(GradCamPP, ConstantGradientKeepsArgmax) {
  const MicroNet net = passthrough_net(1, {0.8});
  const Tensor a({1, 3, 3}, {0.1, 0.2, 0.3, 0.9, 0.4, 0.2, 0.1, 0.05, 0.6});
  const ForwardRecord rec = forward(net, a);
  const Tensor m = grad_cam_pp(rec, net, 0, 1).grid;
  EXPECT_EQ(argmax(m), argmax(a));
  EXPECT_GT(m.max(), 0.0);
}

TEST(GradCamPP, MatchesFiniteDifferenceOracleOnExpScore) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const auto r = random_net(rng, 1 + trial % 3, true, /*tail_pool=*/true);
    const ForwardRecord rec = forward(r.net, r.input);
    const std::size_t cls = static_cast<std::size_t>(trial) % r.net.num_classes();
    const Tensor oracle = wscam::testing::grad_cam_pp_fd_oracle(r.net, rec, cls, r.last_relu);
    const Tensor got = grad_cam_pp(rec, r.net, cls, r.last_relu).grid;
    ASSERT_EQ(got.shape(), oracle.shape());
    const double scale = std::max(oracle.max(), 1e-12);
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_LT(wscam::testing::relative_error(got[i], oracle[i], 1e-6 * scale), 1e-3)
          << "trial " << trial << " cell " << i << ": " << got[i] << " vs " << oracle[i];
    }
  }
}

TEST(XGradCam, EqualsGradCamOnGapHead) {
  const MicroNet net = passthrough_net(2, {1.0, 0.5});
  const ForwardRecord rec = forward(net, kA);
  const Tensor g = grad_cam(rec, net, 0, 1).grid;
  const Tensor x = xgrad_cam(rec, net, 0, 1).grid;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x[i], g[i], 1e-12);
}

TEST(XGradCam, EmptyChannelContributesNothing) {
  const MicroNet net = passthrough_net(2, {1.0, 5.0});
  const Tensor a({2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 0});
  const ForwardRecord rec = forward(net, a);
  const auto w = channel_weights(Method::xgrad_cam, rec, net, 0, 1);
  EXPECT_EQ(w.alpha[1], 0.0);
  EXPECT_TRUE(xgrad_cam(rec, net, 0, 1).grid.all_finite());
}

TEST(XGradCam, RejectsNegativeActivation) {
  std::mt19937_64 rng(12);
  const auto r = random_net(rng, 2, false);
  const ForwardRecord rec = forward(r.net, r.input);
  ASSERT_LT(rec.outputs[0].min(), 0.0);  // raw conv output
  EXPECT_THROW(xgrad_cam(rec, r.net, 0, 0), std::invalid_argument);
}

TEST(LayerCam, SingleLayerConstantGradientArgmax) {
  const MicroNet net = passthrough_net(2, {1.0, 1.0});
  const Tensor a({2, 3, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.0, 0.2, 0.1, 0.3, 0.1, 0.0, 0.2, 0.6, 0.0, 0.1, 0.1, 0.1});
  const ForwardRecord rec = forward(net, a);
  const std::size_t layers[] = {1};
  Tensor sum({3, 3});
  for (std::size_t i = 0; i < 9; ++i) sum[i] = a[i] + a[9 + i];
  EXPECT_EQ(argmax(layer_cam(rec, net, 0, layers).grid), argmax(sum));
}

TEST(LayerCam, FusionIsMaxOfNormalizedLayers) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = random_net(rng, 3, true);
    const ForwardRecord rec = forward(r.net, r.input);
    std::vector<std::size_t> relus;
    for (std::size_t i = 0; i < r.net.gap_index(); ++i) {
      if (std::holds_alternative<Relu>(r.net.layer(i))) relus.push_back(i);
    }
    const Tensor fused = layer_cam(rec, r.net, 0, relus).grid;
    Tensor expect(fused.shape());
    for (std::size_t l : relus) {
      const std::size_t one[] = {l};
      const Tensor single = layer_cam(rec, r.net, 0, one).grid;
      EXPECT_LE(single.max(), 1.0);
      const Tensor up = bilinear_upsample(single, fused.dim(0), fused.dim(1));
      for (std::size_t i = 0; i < up.size(); ++i) expect[i] = std::max(expect[i], up[i]);
    }
    EXPECT_EQ(fused, expect);
    // Repeating a layer changes nothing.
    const std::size_t twice[] = {relus.back(), relus.back()};
    const std::size_t once[] = {relus.back()};
    EXPECT_EQ(layer_cam(rec, r.net, 0, twice).grid, layer_cam(rec, r.net, 0, once).grid);
  }
}

TEST(LayerCam, EmptyLayerListThrows) {
  const MicroNet net = passthrough_net(2, {1.0, 1.0});
  EXPECT_THROW(layer_cam(forward(net, kA), net, 0, {}), std::invalid_argument);
}

TEST(Normalize, HandRescale) {
  EXPECT_EQ(normalize_grid(Tensor::from_rows({{0, 2}, {4, 0}})), Tensor::from_rows({{0, 0.5}, {1, 0}}));
  EXPECT_EQ(normalize_grid(Tensor({3, 3}, 0.7)).max(), 0.0);
  const Tensor unit = Tensor::from_rows({{0, 0.25}, {1, 0.5}});
  EXPECT_EQ(normalize_grid(unit), unit);
  SaliencyMap m{Tensor::from_rows({{1, 3}, {2, 5}}), Method::cam, {1}, 0};
  const SaliencyMap once = normalize_map(m);
  EXPECT_EQ(normalize_map(once).grid, once.grid);
  EXPECT_EQ(once.method, Method::cam);
}

TEST(Properties, GapHeadCollapseOnRandomNets) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = random_net(rng, 1 + trial % 3);
    const ForwardRecord rec = forward(r.net, r.input);
    const std::size_t layer = r.last_relu;
    for (std::size_t cls = 0; cls < r.net.num_classes(); ++cls) {
      const Tensor c = cam(rec, r.net, cls, layer).grid;
      const Tensor g = grad_cam(rec, r.net, cls, layer).grid;
      const Tensor x = xgrad_cam(rec, r.net, cls, layer).grid;
      const double area = static_cast<double>(c.size());
      for (std::size_t i = 0; i < c.size(); ++i) {
        ASSERT_NEAR(g[i], c[i] / area, 1e-10);
        ASSERT_NEAR(x[i], g[i], 1e-10);
      }
      if (c.max() > 0.0) {
        EXPECT_EQ(argmax(c), argmax(g));
        EXPECT_EQ(argmax(g), argmax(x));
      }
    }
  }
}

TEST(Properties, NonnegativeFiniteAndReproducible) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = random_net(rng, 2 + trial % 2);
    const ForwardRecord rec = forward(r.net, r.input);
    std::vector<std::size_t> relus;
    for (std::size_t i = 0; i < r.net.gap_index(); ++i) {
      if (std::holds_alternative<Relu>(r.net.layer(i))) relus.push_back(i);
    }
    for (Method m : kAllMethods) {
      const SaliencyMap a = compute_saliency(m, rec, r.net, 0, r.last_relu, relus);
      EXPECT_GE(a.grid.min(), 0.0) << method_name(m);
      EXPECT_TRUE(a.grid.all_finite());
      const ForwardRecord stored = rec;
      EXPECT_EQ(compute_saliency(m, stored, r.net, 0, r.last_relu, relus).grid, a.grid);
    }
  }
}

TEST(Properties, PositiveHeadScaleKeepsArgmax) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = random_net(rng, 2);
    const ForwardRecord rec = forward(r.net, r.input);
    MicroNet scaled = r.net;
    auto& w = scaled.mutable_head().weight;
    for (std::size_t k = 0; k < w.dim(1); ++k) w.at(0, k) *= 3.7;
    const ForwardRecord rec2 = forward(scaled, r.input);
    for (Method m : {Method::cam, Method::grad_cam, Method::xgrad_cam}) {
      const Tensor a = compute_saliency(m, rec, r.net, 0, r.last_relu, {}).grid;
      const Tensor b = compute_saliency(m, rec2, scaled, 0, r.last_relu, {}).grid;
      if (a.max() > 0.0) {
        EXPECT_EQ(argmax(a), argmax(b)) << method_name(m);
      }
    }
  }
}

TEST(Methods, ParseNames) {
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_EQ(parse_method("gradcampp"), Method::grad_cam_pp);
  EXPECT_EQ(parse_method("layercam"), Method::layer_cam);
  try {
    parse_method("ScoreCAM");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("XGradCAM"), std::string::npos);
  }
}

TEST(Rendering, PgmAndPpmHeaders) {
  wscam::testing::ScratchDir dir("render");
  const Tensor map = Tensor::from_rows({{0, 0.5, 1}, {1, 0.5, 0}});
  write_saliency_pgm(dir.path() / "m.pgm", map);
  write_overlay_ppm(dir.path() / "o.ppm", Tensor({2, 3}, 0.5), map);
  std::ifstream pgm(dir.path() / "m.pgm", std::ios::binary), ppm(dir.path() / "o.ppm", std::ios::binary);
  const std::string pgm_bytes((std::istreambuf_iterator<char>(pgm)), {});
  const std::string ppm_bytes((std::istreambuf_iterator<char>(ppm)), {});
  EXPECT_EQ(pgm_bytes.substr(0, 11), "P5\n3 2\n255\n");
  EXPECT_EQ(pgm_bytes.size(), 11u + 6u);
  EXPECT_EQ(static_cast<unsigned char>(pgm_bytes[11 + 2]), 255);
  EXPECT_EQ(ppm_bytes.substr(0, 11), "P6\n3 2\n255\n");
  EXPECT_EQ(ppm_bytes.size(), 11u + 18u);
  // Full-strength map cell: red boosted above green.
  EXPECT_GT(static_cast<unsigned char>(ppm_bytes[11 + 6]), static_cast<unsigned char>(ppm_bytes[11 + 7]));
  EXPECT_THROW(write_overlay_ppm(dir.path() / "bad.ppm", Tensor({3, 3}), map), std::invalid_argument);
}
