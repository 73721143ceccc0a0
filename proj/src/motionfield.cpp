#include "bimvfi/motionfield.hpp"

#include <algorithm>
#include <cmath>

#include "bimvfi/sampling.hpp"

namespace bimvfi {

FlowField FlowField::constant(int width, int height, double u, double v) {
  FlowField f(width, height);
  std::ranges::fill(f.t_.plane(0), u);
  std::ranges::fill(f.t_.plane(1), v);
  return f;
}

double norm(Point2 p) { return std::hypot(p.x, p.y); }

double canonical_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a tiny negative value can round back up to exactly 2 pi.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

BiMField bim_from_flows(const FlowField& to_prev, const FlowField& to_next, double eps, Rng& rng) {
  require_same_shape(to_prev.tensor(), to_next.tensor(), "bim_from_flows");
  if (!(eps > 0.0)) throw std::invalid_argument("bim_from_flows: eps must be positive");
  std::uniform_real_distribution<double> angle_dist(0.0, kTwoPi);
  BiMField out(to_prev.width(), to_prev.height());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double u0 = to_prev.u(y, x);
      const double v0 = to_prev.v(y, x);
      const double u1 = to_next.u(y, x);
      const double v1 = to_next.v(y, x);
      const double r0 = std::hypot(u0, v0);
      const double r1 = std::hypot(u1, v1);
      const double cross = u0 * v1 - v0 * u1;
      double ratio = 0.5;
      if (r0 + r1 >= eps) {
        // Collinear flows: the ratio of the dominant components equals the
        // ratio of the norms and avoids the rounding of hypot.
        const bool use_u = std::abs(u0) + std::abs(u1) >= std::abs(v0) + std::abs(v1);
        ratio = cross == 0.0 ? (use_u ? std::abs(u0) / (std::abs(u0) + std::abs(u1))
                                      : std::abs(v0) / (std::abs(v0) + std::abs(v1)))
                             : r0 / (r0 + r1);
      }
      const double angle = (r0 >= eps && r1 >= eps)
                               ? canonical_angle(std::atan2(cross, u0 * u1 + v0 * v1))
                               : canonical_angle(angle_dist(rng));
      out.set(y, x, ratio, angle);
    }
  }
  return out;
}

BiMField uniform_bim(double t, int width, int height) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("uniform_bim: t must lie in [0, 1]");
  BiMField out(width, height);
  std::ranges::fill(out.tensor().plane(0), t);
  std::ranges::fill(out.tensor().plane(1), std::numbers::pi);
  return out;
}

BiMField teacher_bim(TeacherPair pair, int width, int height, Rng& rng) {
  std::uniform_real_distribution<double> angle_dist(0.0, kTwoPi);
  const double angle = canonical_angle(angle_dist(rng));
  BiMField out(width, height);
  std::ranges::fill(out.tensor().plane(0), pair == TeacherPair::kFirst ? 1.0 : 0.0);
  std::ranges::fill(out.tensor().plane(1), angle);
  return out;
}

Point2 reconstruct_point(Point2 a, Point2 b, double k, double theta, ArcSide side) {
  if (a == b) throw std::invalid_argument("reconstruct_point: A and B coincide");
  if (!(k > 0.0) || !std::isfinite(k)) throw std::invalid_argument("reconstruct_point: k must be positive");
  if (!(theta > 0.0 && theta <= std::numbers::pi)) {
    throw std::invalid_argument("reconstruct_point: theta must lie in (0, pi]");
  }
  // Intersection of the Apollonian circle |AX| = k |BX| with the arc of
  // constant inscribed angle theta over AB. In the frame A = (0, 0),
  // B = (d, 0) the two loci meet where the triangle ABX has sides
  // |BX| = s, |AX| = k s and apex angle theta (law of cosines).
  const Point2 ab = b - a;
  const double d = norm(ab);
  const double denom = k * k + 1.0 - 2.0 * k * std::cos(theta);
  const double s = d / std::sqrt(denom);
  const double ax_len = k * s;
  const double along = (ax_len * ax_len - s * s + d * d) / (2.0 * d);
  const double across_sq = ax_len * ax_len - along * along;
  double across = theta == std::numbers::pi ? 0.0 : std::sqrt(std::max(across_sq, 0.0));
  if (side == ArcSide::kNegative) across = -across;
  const Point2 e1 = (1.0 / d) * ab;
  const Point2 e2{-e1.y, e1.x};
  return a + along * e1 + across * e2;
}

FlowField resample_flow(const FlowField& v, double factor) {
  int out_w = 0;
  int out_h = 0;
  if (factor == 0.5) {
    if (v.width() % 2 != 0 || v.height() % 2 != 0) {
      throw std::invalid_argument("resample_flow: factor 0.5 needs even dimensions, got " +
                                  v.tensor().shape_string());
    }
    out_w = v.width() / 2;
    out_h = v.height() / 2;
  } else if (factor == 2.0 || factor == 4.0) {
    out_w = static_cast<int>(v.width() * factor);
    out_h = static_cast<int>(v.height() * factor);
  } else {
    throw std::invalid_argument("resample_flow: factor must be 0.5, 2 or 4");
  }
  Tensor out = sampling::resize(v.tensor(), out_h, out_w);
  out *= factor;
  return FlowField(std::move(out));
}

Tensor backward_warp(const Tensor& src, const FlowField& flow) {
  return sampling::warp(src, flow.tensor());
}

Frame backward_warp(const Frame& src, const FlowField& flow) {
  return Frame(sampling::warp(src.tensor(), flow.tensor()));
}

namespace {

void hsv_to_rgb(double hue_deg, double sat, double val, double rgb[3]) {
  const double c = val * sat;
  const double hp = std::isfinite(hue_deg) ? hue_deg / 60.0 : 0.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = val - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

}  // namespace

Frame flow_to_color(const FlowField& v, double max_mag) {
  if (!(max_mag > 0.0)) throw std::invalid_argument("flow_to_color: max_mag must be positive");
  Frame out(v.width(), v.height());
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      const double mag = std::hypot(v.u(y, x), v.v(y, x));
      const double hue = canonical_angle(std::atan2(v.v(y, x), v.u(y, x))) * 180.0 / std::numbers::pi;
      double rgb[3];
      hsv_to_rgb(hue, std::min(mag / max_mag, 1.0), 1.0, rgb);
      for (int c = 0; c < 3; ++c) out.tensor().at(c, y, x) = rgb[c];
    }
  }
  return out;
}

double endpoint_error(const FlowField& a, const FlowField& b, const Tensor* mask) {
  require_same_shape(a.tensor(), b.tensor(), "endpoint_error");
  if (mask != nullptr) require_same_spatial(a.tensor(), *mask, "endpoint_error(mask)");
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (mask != nullptr && mask->at(0, y, x) <= 0.5) continue;
      sum += std::hypot(a.u(y, x) - b.u(y, x), a.v(y, x) - b.v(y, x));
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace bimvfi
