#include "bimvfi/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace bimvfi {

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "psnr");
  if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "valid" filtering of one plane.
std::vector<double> filter_valid(std::span<const double> p, int h, int w, const std::array<double, kWindow>& k) {
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * p[y * w + x + i];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (h < kWindow || w < kWindow) throw std::invalid_argument("ssim: images must be at least 11x11");
  const auto taps = gaussian_taps();
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  std::vector<double> aa(a.plane_size()), bb(a.plane_size()), ab(a.plane_size());
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.plane(c);
    const auto pb = b.plane(c);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, taps);
    const auto mu_b = filter_valid(pb, h, w, taps);
    const auto s_aa = filter_valid(aa, h, w, taps);
    const auto s_bb = filter_valid(bb, h, w, taps);
    const auto s_ab = filter_valid(ab, h, w, taps);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = s_aa[i] - mu_a[i] * mu_a[i];
      const double vb = s_bb[i] - mu_b[i] * mu_b[i];
      const double cov = s_ab[i] - mu_a[i] * mu_b[i];
      sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / a.channels();
}

double masked_l1(const Tensor& a, const Tensor& b, const Tensor& mask) {
  require_same_shape(a, b, "masked_l1");
  require_same_spatial(a, mask, "masked_l1(mask)");
  double s = 0.0;
  std::size_t n = 0;
  const auto m = mask.plane(0);
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.plane(c);
    const auto pb = b.plane(c);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] > 0.5) {
        s += std::abs(pa[i] - pb[i]);
        ++n;
      }
    }
  }
  if (n == 0) throw std::invalid_argument("masked_l1: empty mask");
  return s / static_cast<double>(n);
}

double gradient_sharpness(const Tensor& img, const Tensor& mask) {
  require_same_spatial(img, mask, "gradient_sharpness");
  double s = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 1; y + 1 < img.height(); ++y) {
      for (int x = 1; x + 1 < img.width(); ++x) {
        if (mask.at(0, y, x) <= 0.5) continue;
        const double gx = 0.5 * (img.at(c, y, x + 1) - img.at(c, y, x - 1));
        const double gy = 0.5 * (img.at(c, y + 1, x) - img.at(c, y - 1, x));
        s += std::hypot(gx, gy);
        ++n;
      }
    }
  }
  if (n == 0) throw std::invalid_argument("gradient_sharpness: empty mask");
  return s / static_cast<double>(n);
}

}  // namespace bimvfi
