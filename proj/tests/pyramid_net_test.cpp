#include <gtest/gtest.h>

#include "bimvfi/pyramid_net.hpp"
#include "support.hpp"

namespace bimvfi {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig c;
  c.base_channels = 8;
  c.trunk_depth = 2;
  return c;
}

BimProvider random_bim_provider(std::uint64_t seed) {
  return [seed](int level, int w, int h) {
    Rng rng(seed + level);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BiMField f(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f.set(y, x, u(rng), kTwoPi * u(rng));
    return f;
  };
}

TEST(LevelCount, MatchesReportedSettings) {
  EXPECT_EQ(level_count_for_resolution(256, 256), 3);
  EXPECT_EQ(level_count_for_resolution(720, 1280), 5);
  EXPECT_EQ(level_count_for_resolution(2160, 4096), 7);
}

TEST(LevelCount, SmallInputsFloorAtOne) {
  EXPECT_EQ(level_count_for_resolution(64, 64), 1);
  EXPECT_EQ(level_count_for_resolution(32, 32), 1);
  EXPECT_EQ(level_count_for_resolution(128, 128), 2);
  EXPECT_EQ(level_count_for_resolution(512, 384), 4);
  EXPECT_THROW((void)level_count_for_resolution(31, 64), std::invalid_argument);
}

TEST(LevelCount, RequiredDivisor) {
  EXPECT_EQ(required_divisor(1), 4);
  EXPECT_EQ(required_divisor(2), 8);
  EXPECT_EQ(required_divisor(3), 16);
  EXPECT_THROW((void)required_divisor(0), std::invalid_argument);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.base_channels = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(descriptor_from_string("time_index"), DescriptorMode::kTimeIndex);
  EXPECT_EQ(descriptor_from_string(to_string(DescriptorMode::kBiM)), DescriptorMode::kBiM);
  EXPECT_THROW((void)descriptor_from_string("bogus"), std::invalid_argument);
}

TEST(FeatureExtractors, ShapesAndDeterminism) {
  const PyramidNet net(ModelConfig{}, 1);
  Rng rng(2);
  const Tensor img = random_tensor(3, 64, 64, rng, 0, 1);
  ag::Graph g;
  const ag::Var x = g.constant(img);
  const ag::Var m = net.extract_motion_features(g, x);
  EXPECT_EQ(m.channels(), 16);
  EXPECT_EQ(m.height(), 16);
  EXPECT_EQ(m.width(), 16);
  const auto ctx = net.extract_context_features(g, x);
  const int sizes[] = {64, 32, 16};
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(ctx[j].height(), sizes[j]);
    EXPECT_EQ(ctx[j].width(), sizes[j]);
    EXPECT_EQ(ctx[j].channels(), net.config().context_channels()[j]);
  }
  EXPECT_EQ(net.extract_motion_features(g, g.constant(img)).value(), m.value());
  EXPECT_EQ(net.extract_context_features(g, g.constant(img))[0].value(), ctx[0].value());
  EXPECT_THROW((void)net.extract_motion_features(g, g.constant(Tensor(3, 62, 64))), std::invalid_argument);
}

TEST(FeatureExtractors, ResponseToPerturbationIsLocallyLinear) {
  const PyramidNet net(ModelConfig{}, 3);
  Rng rng(4);
  const Tensor img = random_tensor(3, 32, 32, rng, 0, 1);
  const Tensor dir = random_tensor(3, 32, 32, rng);
  auto features = [&](double eps) {
    Tensor x = img;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += eps * dir[i];
    ag::Graph g;
    return net.extract_motion_features(g, g.constant(x)).value();
  };
  const Tensor base = features(0.0);
  double prev_ratio = 0.0;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    const double change = max_abs_diff(features(eps), base);
    const double ratio = change / eps;
    EXPECT_GT(ratio, 0.0);
    EXPECT_LT(ratio, 100.0);
    if (prev_ratio > 0.0) EXPECT_NEAR(ratio / prev_ratio, 1.0, 0.1);
    prev_ratio = ratio;
  }
}

TEST(CostVolume, SelfCorrelationPeaksAtCentre) {
  Rng rng(5);
  Tensor f = random_tensor(6, 8, 8, rng);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double n = 0.0;
      for (int c = 0; c < 6; ++c) n += f.at(c, y, x) * f.at(c, y, x);
      for (int c = 0; c < 6; ++c) f.at(c, y, x) /= std::sqrt(n);
    }
  Tensor shifted(6, 8, 8);
  for (int c = 0; c < 6; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) shifted.at(c, y, x) = f.at(c, y, std::max(x - 1, 0));
  ag::Graph g;
  const Tensor self = ag::cost_volume(g.constant(f), g.constant(f), 1).value();
  const Tensor shift = ag::cost_volume(g.constant(f), g.constant(shifted), 1).value();
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 6; ++x) {
      int best_self = 0, best_shift = 0;
      for (int d = 1; d < 9; ++d) {
        if (self.at(d, y, x) > self.at(best_self, y, x)) best_self = d;
        if (shift.at(d, y, x) > shift.at(best_shift, y, x)) best_shift = d;
      }
      EXPECT_EQ(best_self, 4);
      EXPECT_EQ(best_shift, 5);  // (dy, dx) = (0, +1)
    }
  const Tensor zero = ag::cost_volume(g.constant(Tensor(6, 8, 8)), g.constant(Tensor(6, 8, 8)), 2).value();
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedBim, AnglePeriodicityAndShapes) {
  const PyramidNet net(ModelConfig{}, 6);
  Rng rng(7);
  BiMField bim(testing::random_tensor(2, 16, 16, rng, 0, 1));
  BiMField wrapped = bim;
  for (auto& v : wrapped.tensor().plane(1)) v += kTwoPi;
  ag::Graph g;
  const auto [fr, fphi] = net.embed_bim(g, bim);
  const auto [fr2, fphi2] = net.embed_bim(g, wrapped);
  EXPECT_EQ(fr.channels(), 16);
  EXPECT_EQ(fr.height(), 16);
  EXPECT_EQ(fphi.channels(), 16);
  EXPECT_EQ(fr.value(), fr2.value());
  EXPECT_LT(max_abs_diff(fphi.value(), fphi2.value()), 1e-12);

  const auto [ones, unused1] = net.embed_bim(g, uniform_bim(1.0, 4, 4));
  const auto [zeros, unused2] = net.embed_bim(g, uniform_bim(0.0, 4, 4));
  EXPECT_GT(max_abs_diff(ones.value(), zeros.value()), 1e-3);
}

TEST(EmbedBim, TimeIndexModeDropsTheAngle) {
  ModelConfig c;
  c.descriptor = DescriptorMode::kTimeIndex;
  const PyramidNet net(c, 8);
  ag::Graph g;
  const auto [fr, fphi] = net.embed_bim(g, uniform_bim(0.3, 5, 4));
  EXPECT_EQ(fr.channels(), 16);
  for (double v : fphi.value().values()) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(net.params().find("aem.0.weight"), -1);
}

TEST(BimMconv, ModulationDecomposes) {
  const PyramidNet net(ModelConfig{}, 9);
  Rng rng(10);
  ag::Graph g;
  const ag::Var fv = g.constant(random_tensor(16, 6, 6, rng));
  const ag::Var fr = g.constant(random_tensor(16, 6, 6, rng));
  const ag::Var fphi = g.constant(random_tensor(16, 6, 6, rng));
  const ag::Var one = g.constant(Tensor(16, 6, 6, 1.0));
  const ag::Var zero = g.constant(Tensor(16, 6, 6));

  const Tensor out = net.bim_mconv(g, fv, fr, fphi).value();
  EXPECT_EQ(out.channels(), 4);
  const Tensor composed = net.bim_mconv(g, ag::mul(ag::mul(fv, fr), fphi), one, one).value();
  EXPECT_LT(max_abs_diff(out, composed), 1e-12);
  EXPECT_EQ(net.bim_mconv(g, fv, one, one).value(), net.bim_mconv(g, fv, one, one).value());

  // Annihilated input leaves only the bias, identical at every pixel.
  const Tensor bias_only = net.bim_mconv(g, fv, zero, fphi).value();
  for (int c = 0; c < 4; ++c)
    for (double v : bias_only.plane(c)) EXPECT_EQ(v, bias_only.plane(c)[0]);
  EXPECT_THROW((void)net.bim_mconv(g, fv, g.constant(Tensor(16, 6, 5)), fphi), std::invalid_argument);
}

TEST(PyramidForward, ShapesAndResidualDecomposition) {
  const PyramidNet net(ModelConfig{}, 11);
  Rng rng(12);
  ag::Graph g;
  const EncodedFrame a = net.encode(g, random_tensor(3, 64, 64, rng, 0, 1), 2);
  const EncodedFrame b = net.encode(g, random_tensor(3, 64, 64, rng, 0, 1), 2);
  const auto states = net.pyramid_forward(g, a, b, random_bim_provider(3), 2);
  ASSERT_EQ(states.size(), 2u);
  for (int l = 0; l < 2; ++l) {
    const int img = 64 >> l;
    const LevelState& s = states[l];
    EXPECT_EQ(s.level, l);
    EXPECT_EQ(s.synthesis.image.height(), img);
    EXPECT_EQ(s.synthesis.image.channels(), 3);
    EXPECT_EQ(s.synthesis.mask_logits.channels(), 1);
    EXPECT_EQ(s.bimfn.flows.to_prev.height(), img / 4);
    EXPECT_EQ(s.caun.mid.to_next.height(), img / 2);
    EXPECT_EQ(s.flows().to_prev.height(), img);
    EXPECT_EQ(s.caun.kernels_x2[0].channels(), 36);
    EXPECT_EQ(s.caun.kernels_x4[1].channels(), 144);
    EXPECT_EQ(s.caun.kernels_x4[1].height(), img / 4);
    for (int d = 0; d < 2; ++d) {
      const Tensor& prior = d == 0 ? s.bimfn.prior.to_prev.value() : s.bimfn.prior.to_next.value();
      const Tensor& res = d == 0 ? s.bimfn.residual.to_prev.value() : s.bimfn.residual.to_next.value();
      const Tensor& flow = d == 0 ? s.bimfn.flows.to_prev.value() : s.bimfn.flows.to_next.value();
      for (std::size_t i = 0; i < flow.size(); ++i) ASSERT_EQ(flow[i], prior[i] + res[i]);
    }
  }
  for (double v : states[1].bimfn.prior.to_prev.value().values()) EXPECT_EQ(v, 0.0);
  const FlowField coarse_fine(states[1].flows().to_prev.value());
  EXPECT_EQ(states[0].bimfn.prior.to_prev.value(), resample_flow(coarse_fine, 0.5).tensor());
}

TEST(PyramidForward, KernelGroupsAreConvex) {
  const PyramidNet net(ModelConfig{}, 13);
  Rng rng(14);
  ag::Graph g;
  const EncodedFrame a = net.encode(g, random_tensor(3, 32, 32, rng, 0, 1), 1);
  const EncodedFrame b = net.encode(g, random_tensor(3, 32, 32, rng, 0, 1), 1);
  const auto states = net.pyramid_forward(g, a, b, random_bim_provider(1), 1);
  for (const ag::Var& k : {states[0].caun.kernels_x2[0], states[0].caun.kernels_x4[1]}) {
    const int groups = k.channels() / 9;
    for (int s = 0; s < groups; ++s)
      for (std::size_t p = 0; p < k.value().plane_size(); ++p) {
        double sum = 0.0;
        for (int n = 0; n < 9; ++n) {
          EXPECT_GE(k.value().plane(n * groups + s)[p], 0.0);
          sum += k.value().plane(n * groups + s)[p];
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
  }
}

TEST(Caun, ConstantFlowUpsamplesToScaledConstant) {
  const PyramidNet net(ModelConfig{}, 15);
  Rng rng(16);
  ag::Graph g;
  const auto ctx_a = net.extract_context_features(g, g.constant(random_tensor(3, 32, 32, rng, 0, 1)));
  const auto ctx_b = net.extract_context_features(g, g.constant(random_tensor(3, 32, 32, rng, 0, 1)));
  const FlowPairVar flows{g.constant(FlowField::constant(8, 8, 0.75, -1.25).tensor()),
                          g.constant(FlowField::constant(8, 8, -0.5, 2.0).tensor())};
  const CaunOutput out = net.caun_forward(g, flows, ctx_a, ctx_b);
  for (double v : out.mid.to_prev.value().plane(0)) EXPECT_NEAR(v, 1.5, 1e-6);
  for (double v : out.fine.to_prev.value().plane(1)) EXPECT_NEAR(v, -5.0, 1e-6);
  for (double v : out.fine.to_next.value().plane(0)) EXPECT_NEAR(v, -2.0, 1e-6);
  EXPECT_EQ(out.mid.to_prev.height(), 16);
  EXPECT_EQ(out.fine.to_prev.height(), 32);
}

TEST(SigmoidBlend, SaturationAndEqualInputs) {
  Rng rng(17);
  const Tensor a = random_tensor(3, 4, 4, rng), b = random_tensor(3, 4, 4, rng);
  ag::Graph g;
  const ag::Var va = g.constant(a), vb = g.constant(b);
  EXPECT_LT(max_abs_diff(ag::sigmoid_blend(va, vb, g.constant(Tensor(1, 4, 4, 60.0))).value(), a), 1e-20);
  EXPECT_LT(max_abs_diff(ag::sigmoid_blend(va, vb, g.constant(Tensor(1, 4, 4, -60.0))).value(), b), 1e-20);
  EXPECT_LT(max_abs_diff(ag::sigmoid_blend(va, va, g.constant(random_tensor(1, 4, 4, rng, -5, 5))).value(), a),
            1e-15);
}

TEST(PyramidForward, IsDeterministic) {
  const PyramidNet net(small_config(), 18);
  Rng rng(19);
  const Tensor i0 = random_tensor(3, 32, 32, rng, 0, 1), i1 = random_tensor(3, 32, 32, rng, 0, 1);
  auto run = [&] {
    ag::Graph g;
    const auto s = net.pyramid_forward(g, net.encode(g, i0, 2), net.encode(g, i1, 2), random_bim_provider(5), 2);
    return std::pair{s[0].synthesis.image.value(), s[0].flows().to_prev.value()};
  };
  EXPECT_EQ(run(), run());
}

TEST(PyramidForward, RejectsIndivisibleInputsWithHint) {
  const PyramidNet net(small_config(), 20);
  ag::Graph g;
  try {
    (void)net.encode(g, Tensor(3, 36, 32), 2);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 8"), std::string::npos) << e.what();
  }
  const EncodedFrame a = net.encode(g, Tensor(3, 32, 32), 1);
  EXPECT_THROW((void)net.pyramid_forward(g, a, a, random_bim_provider(1), 2), std::invalid_argument);
}

TEST(PyramidForward, OneParameterSetServesEveryLevel) {
  const PyramidNet net(small_config(), 21);
  Rng rng(22);
  const Tensor i0 = random_tensor(3, 32, 32, rng, 0, 1), i1 = random_tensor(3, 32, 32, rng, 0, 1);
  std::vector<std::vector<int>> reads;
  for (int levels : {1, 2}) {
    ag::Graph g;
    const EncodedFrame a = net.encode(g, i0, levels), b = net.encode(g, i1, levels);
    net.reset_parameter_reads();
    (void)net.pyramid_forward(g, a, b, random_bim_provider(1), levels);
    reads.push_back(net.parameter_reads());
    // Every stored parameter is bound to exactly one graph node.
    EXPECT_EQ(static_cast<int>(g.parameter_nodes().size()), net.params().size());
  }
  int used = 0;
  for (int i = 0; i < net.params().size(); ++i) {
    EXPECT_EQ(reads[1][i], 2 * reads[0][i]) << net.params().name(i);
    used += reads[0][i] > 0;
  }
  EXPECT_GT(used, 0);
}

TEST(PyramidForward, GradientsMatchFiniteDifferences) {
  PyramidNet net(small_config(), 23);
  Rng rng(24);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (int i = 0; i < net.params().size(); ++i)
    for (auto& v : net.params().value(i).values()) v += jitter(rng);
  const Tensor i0 = random_tensor(3, 8, 8, rng, 0, 1), i1 = random_tensor(3, 8, 8, rng, 0, 1);
  const Tensor w_img = random_tensor(3, 8, 8, rng), w_flow = random_tensor(2, 8, 8, rng);

  auto loss = [&](std::vector<Tensor>* grads) {
    ag::Graph g;
    const auto s = net.pyramid_forward(g, net.encode(g, i0, 1), net.encode(g, i1, 1), random_bim_provider(7), 1);
    const ag::Var total = ag::add(ag::dot_constant(s[0].synthesis.image, w_img),
                                  ag::dot_constant(s[0].flows().to_next, w_flow));
    if (grads != nullptr) {
      g.backward(total);
      *grads = net.params().zeros_like();
      g.accumulate_parameter_grads(*grads);
    }
    return total.value()[0];
  };
  std::vector<Tensor> grads;
  (void)loss(&grads);
  double worst = 0.0;
  for (int i = 0; i < net.params().size(); ++i) {
    Tensor& p = net.params().value(i);
    for (std::size_t k : {std::size_t{0}, p.size() / 2, p.size() - 1}) {
      const double old = p[k];
      p[k] = old + 1e-6;
      const double up = loss(nullptr);
      p[k] = old - 1e-6;
      const double down = loss(nullptr);
      p[k] = old;
      const double numeric = (up - down) / 2e-6;
      const double rel = std::abs(numeric - grads[i][k]) / std::max(std::abs(numeric) + std::abs(grads[i][k]), 1e-8);
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-3) << net.params().name(i) << "[" << k << "]";
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(PyramidNet, RebuildFromParamsRequiresMatchingShapes) {
  const PyramidNet net(small_config(), 25);
  const PyramidNet copy(small_config(), net.params());
  EXPECT_EQ(copy.params().checksum(), net.params().checksum());
  EXPECT_THROW(PyramidNet(ModelConfig{}, net.params()), std::invalid_argument);
}

}  // namespace
}  // namespace bimvfi
