#include "bimvfi/losses.hpp"

#include <cmath>
#include <vector>

namespace bimvfi {

void LossWeights::validate() const {
  const double nonneg[] = {char_teacher, census_teacher, char_student, census_student,
                           smooth,       reg,            distill,      edge_lambda};
  for (double v : nonneg) {
    if (!(v >= 0.0)) throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
  if (!(gamma_pho > 0.0 && gamma_pho <= 1.0) || !(gamma_flo > 0.0 && gamma_flo <= 1.0)) {
    throw std::invalid_argument("LossWeights: gamma must lie in (0, 1]");
  }
  if (!(charbonnier_eps > 0.0)) throw std::invalid_argument("LossWeights: charbonnier_eps must be positive");
  if (census_patch <= 0 || census_patch % 2 == 0) {
    throw std::invalid_argument("LossWeights: census_patch must be odd and positive");
  }
}

namespace {

// -- charbonnier ---------------------------------------------------------------

double charbonnier_value(const Tensor& p, const Tensor& t, double eps) {
  require_same_shape(p, t, "charbonnier_loss");
  if (p.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    s += std::sqrt(d * d + eps * eps);
  }
  return s / static_cast<double>(p.size());
}

// -- census --------------------------------------------------------------------

constexpr double kGreyWeights[3] = {0.2989, 0.5870, 0.1140};
constexpr double kSoftSign = 0.81;
constexpr double kSoftThreshold = 0.1;

Tensor grey255(const Tensor& img) {
  Tensor g(1, img.height(), img.width());
  if (img.channels() == 1) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 255.0 * img[i];
    return g;
  }
  require_channels(img, 3, "census_loss");
  for (int c = 0; c < 3; ++c) {
    const auto p = img.plane(c);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 255.0 * kGreyWeights[c] * p[i];
  }
  return g;
}

struct CensusGeom {
  int r, h, w;
  [[nodiscard]] std::size_t valid_count() const {
    const int vh = h - 2 * r;
    const int vw = w - 2 * r;
    return (vh > 0 && vw > 0) ? static_cast<std::size_t>(vh) * vw : 0;
  }
};

inline double soft_sign(double d) { return d / std::sqrt(kSoftSign + d * d); }
inline double soft_sign_grad(double d) {
  const double q = kSoftSign + d * d;
  return kSoftSign / (q * std::sqrt(q));
}

// Returns the loss; when the grad pointers are set, also accumulates
// seed * d(loss)/d(grey) into them.
double census_eval(const Tensor& ga, const Tensor& gb, int patch, double seed, Tensor* da, Tensor* db) {
  const CensusGeom g{patch / 2, ga.height(), ga.width()};
  const std::size_t n = g.valid_count();
  if (n == 0) return 0.0;
  const double norm = 1.0 / (static_cast<double>(n) * patch * patch);
  const double* a = ga.data();
  const double* b = gb.data();
  double total = 0.0;
  for (int y = g.r; y < g.h - g.r; ++y) {
    for (int x = g.r; x < g.w - g.r; ++x) {
      const int c = y * g.w + x;
      for (int oy = -g.r; oy <= g.r; ++oy) {
        for (int ox = -g.r; ox <= g.r; ++ox) {
          const int j = (y + oy) * g.w + x + ox;
          const double d1 = a[j] - a[c];
          const double d2 = b[j] - b[c];
          const double q = soft_sign(d1) - soft_sign(d2);
          const double q2 = q * q;
          total += q2 / (kSoftThreshold + q2);
          if (da != nullptr || db != nullptr) {
            const double den = kSoftThreshold + q2;
            const double dq = seed * norm * 2.0 * kSoftThreshold * q / (den * den);
            if (da != nullptr) {
              const double s1 = dq * soft_sign_grad(d1);
              (*da)[j] += s1;
              (*da)[c] -= s1;
            }
            if (db != nullptr) {
              const double s2 = -dq * soft_sign_grad(d2);
              (*db)[j] += s2;
              (*db)[c] -= s2;
            }
          }
        }
      }
    }
  }
  return total * norm;
}

void grey_backward(const Tensor& dgrey, Tensor& dimg) {
  if (dimg.channels() == 1) {
    for (std::size_t i = 0; i < dgrey.size(); ++i) dimg[i] += 255.0 * dgrey[i];
    return;
  }
  for (int c = 0; c < 3; ++c) {
    auto p = dimg.plane(c);
    for (std::size_t i = 0; i < dgrey.size(); ++i) p[i] += 255.0 * kGreyWeights[c] * dgrey[i];
  }
}

void check_census(const Tensor& p, const Tensor& t, int patch) {
  require_same_shape(p, t, "census_loss");
  if (patch <= 0 || patch % 2 == 0) throw std::invalid_argument("census_loss: patch must be odd");
}

// -- smoothness ----------------------------------------------------------------

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

// Accumulates seed * d(loss)/d(flow) into dflow when non-null.
double smoothness_eval(const Tensor& flow, const Tensor& img, double lambda, double seed, Tensor* dflow) {
  require_same_spatial(flow, img, "smoothness_loss");
  const int h = flow.height();
  const int w = flow.width();
  const int fc = flow.channels();
  const int ic = img.channels();
  double total = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    const int dy = axis == 1 ? 1 : 0;
    const int dx = axis == 0 ? 1 : 0;
    const int ny = h - dy;
    const int nx = w - dx;
    if (ny <= 0 || nx <= 0) continue;
    const double norm = 0.5 / (static_cast<double>(fc) * ny * nx);
    double term = 0.0;
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        double edge = 0.0;
        for (int c = 0; c < ic; ++c) edge += std::fabs(img.at(c, y + dy, x + dx) - img.at(c, y, x));
        const double wgt = std::exp(-lambda * edge / ic);
        for (int c = 0; c < fc; ++c) {
          const double d = flow.at(c, y + dy, x + dx) - flow.at(c, y, x);
          term += wgt * std::fabs(d);
          if (dflow != nullptr) {
            const double gd = seed * norm * wgt * sgn(d);
            dflow->at(c, y + dy, x + dx) += gd;
            dflow->at(c, y, x) -= gd;
          }
        }
      }
    }
    total += term * norm;
  }
  return total;
}

double sq_magnitude_mean(const Tensor& a, const Tensor* b) {
  require_channels(a, 2, "flow L2 loss");
  if (b != nullptr) require_same_shape(a, *b, "flow L2 loss");
  const std::size_t n = a.plane_size();
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - (b != nullptr ? (*b)[i] : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(n);
}

}  // namespace

double charbonnier_loss(const Tensor& pred, const Tensor& target, double eps) {
  return charbonnier_value(pred, target, eps);
}

double census_loss(const Tensor& pred, const Tensor& target, int patch) {
  check_census(pred, target, patch);
  return census_eval(grey255(pred), grey255(target), patch, 0.0, nullptr, nullptr);
}

double smoothness_loss(const Tensor& flow, const Tensor& img, double edge_lambda) {
  return smoothness_eval(flow, img, edge_lambda, 0.0, nullptr);
}

double zero_flow_reg(const Tensor& flow) { return sq_magnitude_mean(flow, nullptr); }

double distillation_loss(const Tensor& student_to_prev, const Tensor& student_to_next,
                         const Tensor& teacher_to_prev, const Tensor& teacher_to_next) {
  return sq_magnitude_mean(student_to_prev, &teacher_to_prev) +
         sq_magnitude_mean(student_to_next, &teacher_to_next);
}

double total_loss(std::span<const LevelLossTerms<double>> levels, const LossWeights& w) {
  double total = 0.0;
  double gp = 1.0;
  double gf = 1.0;
  for (const auto& l : levels) {
    total += gp * (l.pho_teacher + l.pho_student) + gf * (l.flo_teacher + l.flo_student);
    gp *= w.gamma_pho;
    gf *= w.gamma_flo;
  }
  return total;
}

namespace ag {

Var charbonnier(Var pred, Var target, double eps) {
  Graph& g = *pred.graph();
  const double v = charbonnier_value(pred.value(), target.value(), eps);
  const int ip = pred.id(), it = target.id();
  const Var ins[] = {pred, target};
  return g.make(Tensor(1, 1, 1, v), ins, [ip, it, eps](Graph& gr, const Tensor& go) {
    const Tensor& p = gr.value(ip);
    const Tensor& t = gr.value(it);
    const double s = go[0] / static_cast<double>(p.size());
    Tensor* gp = gr.requires_grad(ip) ? &gr.grad_of(ip) : nullptr;
    Tensor* gt = gr.requires_grad(it) ? &gr.grad_of(it) : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      const double gd = s * d / std::sqrt(d * d + eps * eps);
      if (gp) (*gp)[i] += gd;
      if (gt) (*gt)[i] -= gd;
    }
  });
}

Var census(Var pred, Var target, int patch) {
  Graph& g = *pred.graph();
  check_census(pred.value(), target.value(), patch);
  const double v = census_eval(grey255(pred.value()), grey255(target.value()), patch, 0.0, nullptr, nullptr);
  const int ip = pred.id(), it = target.id();
  const Var ins[] = {pred, target};
  return g.make(Tensor(1, 1, 1, v), ins, [ip, it, patch](Graph& gr, const Tensor& go) {
    const Tensor ga = grey255(gr.value(ip));
    const Tensor gb = grey255(gr.value(it));
    const bool need_p = gr.requires_grad(ip);
    const bool need_t = gr.requires_grad(it);
    Tensor da(1, ga.height(), ga.width());
    Tensor db(1, gb.height(), gb.width());
    census_eval(ga, gb, patch, go[0], need_p ? &da : nullptr, need_t ? &db : nullptr);
    if (need_p) grey_backward(da, gr.grad_of(ip));
    if (need_t) grey_backward(db, gr.grad_of(it));
  });
}

Var smoothness(Var flow, const Tensor& img, double edge_lambda) {
  Graph& g = *flow.graph();
  const double v = smoothness_eval(flow.value(), img, edge_lambda, 0.0, nullptr);
  const int iflow = flow.id();
  const Var ins[] = {flow};
  return g.make(Tensor(1, 1, 1, v), ins, [iflow, img, edge_lambda](Graph& gr, const Tensor& go) {
    smoothness_eval(gr.value(iflow), img, edge_lambda, go[0], &gr.grad_of(iflow));
  });
}

Var zero_flow_reg(Var flow) {
  Graph& g = *flow.graph();
  const double v = sq_magnitude_mean(flow.value(), nullptr);
  const int iflow = flow.id();
  const Var ins[] = {flow};
  return g.make(Tensor(1, 1, 1, v), ins, [iflow](Graph& gr, const Tensor& go) {
    const Tensor& f = gr.value(iflow);
    Tensor& gf = gr.grad_of(iflow);
    const double s = 2.0 * go[0] / static_cast<double>(f.plane_size());
    for (std::size_t i = 0; i < f.size(); ++i) gf[i] += s * f[i];
  });
}

Var distillation(Var student_to_prev, Var student_to_next, Var teacher_to_prev, Var teacher_to_next) {
  const Var terms[] = {zero_flow_reg(sub(student_to_prev, detach(teacher_to_prev))),
                       zero_flow_reg(sub(student_to_next, detach(teacher_to_next)))};
  return add_scalars(terms);
}

Var total_loss(std::span<const LevelLossTerms<Var>> levels, const LossWeights& w) {
  std::vector<Var> terms;
  double gp = 1.0;
  double gf = 1.0;
  for (const auto& l : levels) {
    const Var pho[] = {l.pho_teacher, l.pho_student};
    const Var flo[] = {l.flo_teacher, l.flo_student};
    terms.push_back(scale(add_scalars(pho), gp));
    terms.push_back(scale(add_scalars(flo), gf));
    gp *= w.gamma_pho;
    gf *= w.gamma_flo;
  }
  return add_scalars(terms);
}

}  // namespace ag
}  // namespace bimvfi
