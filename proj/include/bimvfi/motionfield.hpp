#pragma once

#include <numbers>
#include <random>

#include "bimvfi/tensor.hpp"

namespace bimvfi {

using Rng = std::mt19937_64;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kDefaultBimEps = 1e-6;

/// Wraps a tensor whose channel count is fixed by the domain type.
template <int Channels, typename Tag>
class FixedGrid {
 public:
  static constexpr int kChannels = Channels;

  FixedGrid() = default;
  FixedGrid(int width, int height) : t_(Channels, height, width) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  }
  explicit FixedGrid(Tensor t) : t_(std::move(t)) { require_channels(t_, Channels, Tag::kName); }

  [[nodiscard]] int width() const { return t_.width(); }
  [[nodiscard]] int height() const { return t_.height(); }
  [[nodiscard]] const Tensor& tensor() const { return t_; }
  [[nodiscard]] Tensor& tensor() { return t_; }

  friend bool operator==(const FixedGrid&, const FixedGrid&) = default;

 protected:
  Tensor t_;
};

struct FlowTag { static constexpr const char* kName = "FlowField"; };
struct BimTag { static constexpr const char* kName = "BiMField"; };
struct FrameTag { static constexpr const char* kName = "Frame"; };

/// Per-pixel displacement (u, v) in pixels of this grid's own resolution.
class FlowField : public FixedGrid<2, FlowTag> {
 public:
  using FixedGrid::FixedGrid;
  [[nodiscard]] double u(int y, int x) const { return t_.at(0, y, x); }
  [[nodiscard]] double v(int y, int x) const { return t_.at(1, y, x); }
  void set(int y, int x, double u, double v) {
    t_.at(0, y, x) = u;
    t_.at(1, y, x) = v;
  }
  static FlowField constant(int width, int height, double u, double v);
};

/// Bidirectional motion descriptor: channel 0 is the magnitude ratio R in
/// [0, 1], channel 1 the inter-flow angle Phi in [0, 2 pi).
class BiMField : public FixedGrid<2, BimTag> {
 public:
  using FixedGrid::FixedGrid;
  [[nodiscard]] double ratio(int y, int x) const { return t_.at(0, y, x); }
  [[nodiscard]] double angle(int y, int x) const { return t_.at(1, y, x); }
  void set(int y, int x, double ratio, double angle) {
    t_.at(0, y, x) = ratio;
    t_.at(1, y, x) = angle;
  }
};

/// RGB image with values nominally in [0, 1].
class Frame : public FixedGrid<3, FrameTag> {
 public:
  using FixedGrid::FixedGrid;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2, Point2) = default;
};

[[nodiscard]] double norm(Point2 p);

enum class ArcSide { kPositive, kNegative };

/// Wraps an angle into [0, 2 pi).
[[nodiscard]] double canonical_angle(double a);

/// BiM from the two target-anchored flows. Undefined ratios (both flows
/// shorter than eps in sum) become 0.5; undefined angles (either flow
/// shorter than eps) are drawn from U(0, 2 pi).
[[nodiscard]] BiMField bim_from_flows(const FlowField& to_prev, const FlowField& to_next,
                                      double eps, Rng& rng);

/// BiM of uniform motion at time t: R = t, Phi = pi.
[[nodiscard]] BiMField uniform_bim(double t, int width, int height);

enum class TeacherPair {
  kFirst,   // (I0, It): target coincides with the second frame, R = 1
  kSecond,  // (It, I1): target coincides with the first frame, R = 0
};

/// Constant-ratio teacher BiM with one random angle per call.
[[nodiscard]] BiMField teacher_bim(TeacherPair pair, int width, int height, Rng& rng);

/// The point X with |AX| / |BX| = k and angle AXB = theta on the requested
/// side of line AB (positive side: cross(B - A, X - A) > 0).
[[nodiscard]] Point2 reconstruct_point(Point2 a, Point2 b, double k, double theta, ArcSide side);

/// Bilinear resample of the grid by 0.5, 2 or 4 with displacements scaled by the same factor.
[[nodiscard]] FlowField resample_flow(const FlowField& v, double factor);

[[nodiscard]] Tensor backward_warp(const Tensor& src, const FlowField& flow);
[[nodiscard]] Frame backward_warp(const Frame& src, const FlowField& flow);

/// Colour-wheel rendering: hue follows the flow angle, saturation the
/// magnitude relative to max_mag (capped at 1), value is 1. Zero flow is white.
[[nodiscard]] Frame flow_to_color(const FlowField& v, double max_mag);

/// Mean end-point error, optionally restricted to pixels where mask > 0.5.
[[nodiscard]] double endpoint_error(const FlowField& a, const FlowField& b,
                                    const Tensor* mask = nullptr);

}  // namespace bimvfi
