#include <gtest/gtest.h>

#include "bimvfi/losses.hpp"
#include "support.hpp"

namespace bimvfi {
namespace {

using testing::check_gradients;
using testing::random_tensor;

constexpr double kLossTol = 1e-4;

// Literal census distance: grey image scaled to [0, 255], soft ternary
// signature d / sqrt(0.81 + d^2) and robust distance q^2 / (0.1 + q^2),
// averaged over interior pixels and patch cells.
double census_reference(const Tensor& a, const Tensor& b, int patch) {
  auto grey = [](const Tensor& img, int y, int x) {
    return 255.0 * (0.2989 * img.at(0, y, x) + 0.5870 * img.at(1, y, x) + 0.1140 * img.at(2, y, x));
  };
  auto soft = [](double d) { return d / std::sqrt(0.81 + d * d); };
  const int r = patch / 2;
  double sum = 0.0;
  int count = 0;
  for (int y = r; y < a.height() - r; ++y)
    for (int x = r; x < a.width() - r; ++x) {
      ++count;
      for (int oy = -r; oy <= r; ++oy)
        for (int ox = -r; ox <= r; ++ox) {
          const double q = soft(grey(a, y + oy, x + ox) - grey(a, y, x)) - soft(grey(b, y + oy, x + ox) - grey(b, y, x));
          sum += q * q / (0.1 + q * q);
        }
    }
  return count == 0 ? 0.0 : sum / (count * patch * patch);
}

TEST(Charbonnier, ValueAndGradient) {
  Rng rng(1);
  const Tensor p = random_tensor(3, 5, 6, rng), t = random_tensor(3, 5, 6, rng);
  double ref = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) ref += std::sqrt((p[i] - t[i]) * (p[i] - t[i]) + 1e-6);
  EXPECT_NEAR(charbonnier_loss(p, t, 1e-3), ref / p.size(), 1e-14);
  EXPECT_NEAR(charbonnier_loss(p, p, 1e-3), 1e-3, 1e-15);
  auto fn = [](ag::Graph&, const std::vector<ag::Var>& v) { return ag::charbonnier(v[0], v[1], 1e-3); };
  EXPECT_LT(check_gradients(fn, {p, t}).worst_rel, kLossTol);
  EXPECT_THROW((void)charbonnier_loss(p, Tensor(3, 5, 5), 1e-3), std::invalid_argument);
}

TEST(Census, MatchesReference) {
  Rng rng(2);
  for (int patch : {3, 5, 7}) {
    const Tensor a = random_tensor(3, 9, 10, rng, 0, 1), b = random_tensor(3, 9, 10, rng, 0, 1);
    EXPECT_NEAR(census_loss(a, b, patch), census_reference(a, b, patch), 1e-12);
  }
}

TEST(Census, IdenticalAndOffsetImagesScoreZero) {
  Rng rng(3);
  const Tensor a = random_tensor(3, 10, 10, rng, 0, 0.8);
  EXPECT_EQ(census_loss(a, a, 7), 0.0);
  Tensor brighter = a;
  for (auto& v : brighter.values()) v += 0.15;
  EXPECT_NEAR(census_loss(a, brighter, 7), 0.0, 1e-12);
}

TEST(Census, SymmetricAndBounded) {
  Rng rng(4);
  const Tensor a = random_tensor(3, 12, 12, rng, 0, 1), b = random_tensor(3, 12, 12, rng, 0, 1);
  EXPECT_NEAR(census_loss(a, b, 7), census_loss(b, a, 7), 1e-14);
  EXPECT_GT(census_loss(a, b, 7), 0.0);
  EXPECT_LT(census_loss(a, b, 7), 1.0);
}

TEST(Census, TinyImagesHaveNoValidPatch) {
  EXPECT_EQ(census_loss(Tensor(3, 4, 4, 0.2), Tensor(3, 4, 4, 0.7), 7), 0.0);
}

TEST(Census, Gradient) {
  // Differences of a few grey levels keep the soft signature away from
  // saturation, where its gradient drops below finite-difference noise.
  Rng rng(5);
  const Tensor a = random_tensor(3, 8, 8, rng, 0.495, 0.505), b = random_tensor(3, 8, 8, rng, 0.495, 0.505);
  auto fn = [](ag::Graph&, const std::vector<ag::Var>& v) { return ag::census(v[0], v[1], 5); };
  EXPECT_LT(check_gradients(fn, {a, b}, 1e-6).worst_rel, kLossTol);
}

TEST(Census, RejectsEvenPatch) {
  EXPECT_THROW((void)census_loss(Tensor(3, 8, 8), Tensor(3, 8, 8), 4), std::invalid_argument);
}

TEST(Smoothness, ConstantFlowIsFree) {
  Rng rng(6);
  Tensor flow(2, 6, 6);
  std::ranges::fill(flow.plane(0), 2.0);
  EXPECT_EQ(smoothness_loss(flow, random_tensor(3, 6, 6, rng), 150.0), 0.0);
}

TEST(Smoothness, FlatImageValue) {
  // Flow u = x on a flat image: horizontal differences are 1 on the u
  // channel only, vertical differences vanish.
  Tensor flow(2, 4, 5);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) flow.at(0, y, x) = x;
  EXPECT_NEAR(smoothness_loss(flow, Tensor(3, 4, 5, 0.5), 150.0), 0.5 * 0.5, 1e-14);
}

TEST(Smoothness, EdgesDiscountFlowJumps) {
  Tensor flow(2, 4, 4);
  Tensor img(3, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 2; x < 4; ++x) {
      flow.at(0, y, x) = 3.0;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = 1.0;
    }
  EXPECT_LT(smoothness_loss(flow, img, 150.0), 1e-30);
  EXPECT_GT(smoothness_loss(flow, Tensor(3, 4, 4), 150.0), 0.1);
}

TEST(Smoothness, Gradient) {
  Rng rng(7);
  const Tensor flow = random_tensor(2, 6, 7, rng, -2, 2);
  const Tensor img = random_tensor(3, 6, 7, rng, 0, 0.02);
  auto fn = [img](ag::Graph&, const std::vector<ag::Var>& v) { return ag::smoothness(v[0], img, 150.0); };
  EXPECT_LT(check_gradients(fn, {flow}).worst_rel, kLossTol);
}

TEST(ZeroFlowReg, ValueAndGradient) {
  Tensor flow(2, 2, 3);
  std::ranges::fill(flow.plane(0), 3.0);
  std::ranges::fill(flow.plane(1), 4.0);
  EXPECT_DOUBLE_EQ(zero_flow_reg(flow), 25.0);
  Rng rng(8);
  auto fn = [](ag::Graph&, const std::vector<ag::Var>& v) { return ag::zero_flow_reg(v[0]); };
  EXPECT_LT(check_gradients(fn, {random_tensor(2, 5, 5, rng)}).worst_rel, kLossTol);
  EXPECT_THROW((void)zero_flow_reg(Tensor(3, 2, 2)), std::invalid_argument);
}

TEST(Distillation, ValueAndStudentGradient) {
  Rng rng(9);
  const Tensor s0 = random_tensor(2, 4, 5, rng), s1 = random_tensor(2, 4, 5, rng);
  const Tensor t0 = random_tensor(2, 4, 5, rng), t1 = random_tensor(2, 4, 5, rng);
  double ref = 0.0;
  for (std::size_t i = 0; i < s0.size(); ++i) ref += (s0[i] - t0[i]) * (s0[i] - t0[i]) + (s1[i] - t1[i]) * (s1[i] - t1[i]);
  EXPECT_NEAR(distillation_loss(s0, s1, t0, t1), ref / 20.0, 1e-13);
  const Tensor t0c = t0, t1c = t1;
  auto fn = [t0c, t1c](ag::Graph& g, const std::vector<ag::Var>& v) {
    return ag::distillation(v[0], v[1], g.constant(t0c), g.constant(t1c));
  };
  EXPECT_LT(check_gradients(fn, {s0, s1}).worst_rel, kLossTol);
}

TEST(Distillation, TeacherSideReceivesNoGradient) {
  Rng rng(10);
  ag::Graph g;
  ag::Var s0 = g.leaf(random_tensor(2, 3, 3, rng)), s1 = g.leaf(random_tensor(2, 3, 3, rng));
  ag::Var t0 = g.leaf(random_tensor(2, 3, 3, rng)), t1 = g.leaf(random_tensor(2, 3, 3, rng));
  ag::Var loss = ag::distillation(s0, s1, t0, t1);
  g.backward(loss);
  for (ag::Var t : {t0, t1}) {
    const Tensor* gr = g.grad_if_any(t.id());
    if (gr == nullptr) continue;
    for (double v : gr->values()) EXPECT_EQ(v, 0.0);
  }
  ASSERT_NE(g.grad_if_any(s0.id()), nullptr);
}

TEST(Distillation, TeacherValuesStillMoveTheLoss) {
  Rng rng(11);
  const Tensor s = random_tensor(2, 3, 3, rng);
  Tensor t = random_tensor(2, 3, 3, rng);
  const double before = distillation_loss(s, s, t, t);
  t[0] += 0.5;
  EXPECT_NE(distillation_loss(s, s, t, t), before);
}

TEST(TotalLoss, GammaWeightsPerLevel) {
  LossWeights w;
  w.gamma_pho = 0.5;
  w.gamma_flo = 0.25;
  const LevelLossTerms<double> levels[] = {{1, 2, 3, 4}, {10, 20, 30, 40}};
  EXPECT_DOUBLE_EQ(total_loss(levels, w), (1 + 2) + (3 + 4) + 0.5 * (10 + 20) + 0.25 * (30 + 40));

  ag::Graph g;
  std::vector<LevelLossTerms<ag::Var>> vars;
  for (const auto& l : levels) {
    auto c = [&](double v) { return g.constant(Tensor(1, 1, 1, v)); };
    vars.push_back({c(l.pho_teacher), c(l.pho_student), c(l.flo_teacher), c(l.flo_student)});
  }
  EXPECT_DOUBLE_EQ(ag::total_loss(vars, w).value()[0], total_loss(levels, w));
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.smooth = -1;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = {};
  w.gamma_pho = 0.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w = {};
  w.census_patch = 6;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace bimvfi
