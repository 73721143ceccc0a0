#include "bimvfi/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bimvfi::sampling {

namespace {

struct Tap {
  int x0, x1, y0, y1;
  double ax, ay;
  bool clamp_x, clamp_y;  // derivative w.r.t. the coordinate vanishes
};

inline Tap make_tap(double sx, double sy, int w, int h) {
  Tap t{};
  const double max_x = w - 1;
  const double max_y = h - 1;
  t.clamp_x = !(sx > 0.0 && sx < max_x);
  t.clamp_y = !(sy > 0.0 && sy < max_y);
  // NaN coordinates read pixel 0 with NaN weights, so the result stays
  // poisoned and the caller's finiteness checks still fire.
  const double cx = std::isnan(sx) ? 0.0 : std::clamp(sx, 0.0, max_x);
  const double cy = std::isnan(sy) ? 0.0 : std::clamp(sy, 0.0, max_y);
  t.x0 = static_cast<int>(std::floor(cx));
  t.y0 = static_cast<int>(std::floor(cy));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.ax = std::isnan(sx) ? sx : cx - t.x0;
  t.ay = std::isnan(sy) ? sy : cy - t.y0;
  return t;
}

inline double sample(const double* p, int w, const Tap& t) {
  const double top = (1.0 - t.ax) * p[t.y0 * w + t.x0] + t.ax * p[t.y0 * w + t.x1];
  const double bot = (1.0 - t.ax) * p[t.y1 * w + t.x0] + t.ax * p[t.y1 * w + t.x1];
  return (1.0 - t.ay) * top + t.ay * bot;
}

inline double resize_coord(int dst, int dst_n, int src_n) {
  return (dst + 0.5) * (static_cast<double>(src_n) / dst_n) - 0.5;
}

}  // namespace

Tensor warp(const Tensor& src, const Tensor& flow) {
  require_channels(flow, 2, "warp(flow)");
  require_same_spatial(src, flow, "warp");
  const int h = src.height();
  const int w = src.width();
  Tensor out(src.channels(), h, w);
  const auto u = flow.plane(0);
  const auto v = flow.plane(1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Tap t = make_tap(x + u[i], y + v[i], w, h);
      for (int c = 0; c < src.channels(); ++c) out.plane(c)[i] = sample(src.plane(c).data(), w, t);
    }
  }
  return out;
}

void warp_backward(const Tensor& src, const Tensor& flow, const Tensor& grad_out,
                   Tensor* grad_src, Tensor* grad_flow) {
  const int h = src.height();
  const int w = src.width();
  const auto u = flow.plane(0);
  const auto v = flow.plane(1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Tap t = make_tap(x + u[i], y + v[i], w, h);
      double du = 0.0;
      double dv = 0.0;
      for (int c = 0; c < src.channels(); ++c) {
        const double g = grad_out.plane(c)[i];
        if (g == 0.0) continue;
        if (grad_src != nullptr) {
          double* gs = grad_src->plane(c).data();
          gs[t.y0 * w + t.x0] += g * (1.0 - t.ax) * (1.0 - t.ay);
          gs[t.y0 * w + t.x1] += g * t.ax * (1.0 - t.ay);
          gs[t.y1 * w + t.x0] += g * (1.0 - t.ax) * t.ay;
          gs[t.y1 * w + t.x1] += g * t.ax * t.ay;
        }
        if (grad_flow != nullptr) {
          const double* p = src.plane(c).data();
          const double p00 = p[t.y0 * w + t.x0];
          const double p01 = p[t.y0 * w + t.x1];
          const double p10 = p[t.y1 * w + t.x0];
          const double p11 = p[t.y1 * w + t.x1];
          if (!t.clamp_x) du += g * ((1.0 - t.ay) * (p01 - p00) + t.ay * (p11 - p10));
          if (!t.clamp_y) dv += g * ((1.0 - t.ax) * (p10 - p00) + t.ax * (p11 - p01));
        }
      }
      if (grad_flow != nullptr) {
        grad_flow->plane(0)[i] += du;
        grad_flow->plane(1)[i] += dv;
      }
    }
  }
}

Tensor resize(const Tensor& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive output size");
  const int h = src.height();
  const int w = src.width();
  Tensor out(src.channels(), out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Tap t = make_tap(resize_coord(x, out_w, w), resize_coord(y, out_h, h), w, h);
      for (int c = 0; c < src.channels(); ++c) {
        out.at(c, y, x) = sample(src.plane(c).data(), w, t);
      }
    }
  }
  return out;
}

void resize_backward(const Tensor& grad_out, Tensor& grad_src) {
  const int h = grad_src.height();
  const int w = grad_src.width();
  const int out_h = grad_out.height();
  const int out_w = grad_out.width();
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Tap t = make_tap(resize_coord(x, out_w, w), resize_coord(y, out_h, h), w, h);
      for (int c = 0; c < grad_out.channels(); ++c) {
        const double g = grad_out.at(c, y, x);
        double* gs = grad_src.plane(c).data();
        gs[t.y0 * w + t.x0] += g * (1.0 - t.ax) * (1.0 - t.ay);
        gs[t.y0 * w + t.x1] += g * t.ax * (1.0 - t.ay);
        gs[t.y1 * w + t.x0] += g * (1.0 - t.ax) * t.ay;
        gs[t.y1 * w + t.x1] += g * t.ax * t.ay;
      }
    }
  }
}

namespace {

void check_convex_args(const Tensor& flow, const Tensor& kernels, int factor) {
  if (factor != 2 && factor != 4) throw std::invalid_argument("convex_upsample: factor must be 2 or 4");
  require_same_spatial(flow, kernels, "convex_upsample");
  require_channels(kernels, 9 * factor * factor, "convex_upsample(kernels)");
  const int ff = factor * factor;
  const std::size_t plane = kernels.plane_size();
  for (int s = 0; s < ff; ++s) {
    for (std::size_t p = 0; p < plane; ++p) {
      double sum = 0.0;
      for (int n = 0; n < 9; ++n) sum += kernels.plane(n * ff + s)[p];
      if (std::abs(sum - 1.0) > 1e-4) {
        throw std::invalid_argument("convex_upsample: kernel weights of slot " + std::to_string(s) +
                                    " sum to " + std::to_string(sum) + ", expected 1");
      }
    }
  }
}

}  // namespace

Tensor convex_upsample(const Tensor& flow, const Tensor& kernels, int factor) {
  check_convex_args(flow, kernels, factor);
  const int h = flow.height();
  const int w = flow.width();
  const int ff = factor * factor;
  Tensor out(flow.channels(), h * factor, w * factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int nbr[9];
      for (int n = 0; n < 9; ++n) {
        const int ny = std::clamp(y + n / 3 - 1, 0, h - 1);
        const int nx = std::clamp(x + n % 3 - 1, 0, w - 1);
        nbr[n] = ny * w + nx;
      }
      for (int s = 0; s < ff; ++s) {
        const int fy = y * factor + s / factor;
        const int fx = x * factor + s % factor;
        for (int c = 0; c < flow.channels(); ++c) {
          const double* p = flow.plane(c).data();
          double acc = 0.0;
          for (int n = 0; n < 9; ++n) acc += kernels.at(n * ff + s, y, x) * p[nbr[n]];
          out.at(c, fy, fx) = factor * acc;
        }
      }
    }
  }
  return out;
}

void convex_upsample_backward(const Tensor& flow, const Tensor& kernels, int factor,
                              const Tensor& grad_out, Tensor* grad_flow, Tensor* grad_kernels) {
  const int h = flow.height();
  const int w = flow.width();
  const int ff = factor * factor;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int nbr[9];
      for (int n = 0; n < 9; ++n) {
        const int ny = std::clamp(y + n / 3 - 1, 0, h - 1);
        const int nx = std::clamp(x + n % 3 - 1, 0, w - 1);
        nbr[n] = ny * w + nx;
      }
      for (int s = 0; s < ff; ++s) {
        const int fy = y * factor + s / factor;
        const int fx = x * factor + s % factor;
        for (int c = 0; c < flow.channels(); ++c) {
          const double g = factor * grad_out.at(c, fy, fx);
          const double* p = flow.plane(c).data();
          for (int n = 0; n < 9; ++n) {
            if (grad_kernels != nullptr) grad_kernels->at(n * ff + s, y, x) += g * p[nbr[n]];
            if (grad_flow != nullptr) grad_flow->plane(c)[nbr[n]] += g * kernels.at(n * ff + s, y, x);
          }
        }
      }
    }
  }
}

}  // namespace bimvfi::sampling
