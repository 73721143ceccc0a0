#pragma once

#include <span>

#include "bimvfi/autograd.hpp"
#include "bimvfi/tensor.hpp"

namespace bimvfi {

/// Weights of the training objective. Values are defaults for the toy
/// setting; the training config overrides them.
struct LossWeights {
  double char_teacher = 1.0;
  double census_teacher = 1.0;
  double char_student = 1.0;
  double census_student = 1.0;
  double smooth = 0.1;
  double reg = 0.01;
  double distill = 0.01;
  double gamma_pho = 0.8;  // per-level decay, level 0 (finest) has weight 1
  double gamma_flo = 0.8;
  double charbonnier_eps = 1e-6;
  int census_patch = 7;
  double edge_lambda = 150.0;

  void validate() const;
};

/// Mean of sqrt(d^2 + eps^2) over all elements.
[[nodiscard]] double charbonnier_loss(const Tensor& pred, const Tensor& target, double eps);

/// Soft census distance between the grey-level ternary signatures of the two
/// images, averaged over pixels whose patch lies fully inside the image.
[[nodiscard]] double census_loss(const Tensor& pred, const Tensor& target, int patch);

/// First-order edge-aware smoothness: mean over both axes of
/// |d flow| * exp(-edge_lambda * mean_c |d img|).
[[nodiscard]] double smoothness_loss(const Tensor& flow, const Tensor& img, double edge_lambda);

/// Mean squared flow magnitude.
[[nodiscard]] double zero_flow_reg(const Tensor& flow);

/// Sum over both directions of the mean squared end-point difference.
[[nodiscard]] double distillation_loss(const Tensor& student_to_prev, const Tensor& student_to_next,
                                       const Tensor& teacher_to_prev, const Tensor& teacher_to_next);

/// The four per-level components of the objective.
template <typename T>
struct LevelLossTerms {
  T pho_teacher;
  T pho_student;
  T flo_teacher;
  T flo_student;
};

[[nodiscard]] double total_loss(std::span<const LevelLossTerms<double>> levels, const LossWeights& w);

namespace ag {

Var charbonnier(Var pred, Var target, double eps);
Var census(Var pred, Var target, int patch);
Var smoothness(Var flow, const Tensor& img, double edge_lambda);
Var zero_flow_reg(Var flow);
/// Teacher flows pass through a gradient barrier.
Var distillation(Var student_to_prev, Var student_to_next, Var teacher_to_prev, Var teacher_to_next);
Var total_loss(std::span<const LevelLossTerms<Var>> levels, const LossWeights& w);

}  // namespace ag
}  // namespace bimvfi
