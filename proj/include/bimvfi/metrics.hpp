#pragma once

#include "bimvfi/tensor.hpp"

namespace bimvfi {

/// Reported instead of +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for images in [0, 1].
[[nodiscard]] double psnr(const Tensor& a, const Tensor& b);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03,
/// dynamic range 1), averaged over channels.
[[nodiscard]] double ssim(const Tensor& a, const Tensor& b);

/// Mean absolute difference over pixels where mask > 0.5 (all channels).
[[nodiscard]] double masked_l1(const Tensor& a, const Tensor& b, const Tensor& mask);

/// Mean central-difference gradient magnitude over interior pixels where
/// mask > 0.5, averaged over channels. Larger means crisper detail.
[[nodiscard]] double gradient_sharpness(const Tensor& img, const Tensor& mask);

}  // namespace bimvfi
