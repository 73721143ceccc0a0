#pragma once

#include "bimvfi/tensor.hpp"

/// Forward and adjoint kernels for the resampling primitives.
///
/// All sampling uses pixel-centre coordinates and clamps sample positions to
/// the grid border. Adjoints accumulate (+=) into the supplied gradient
/// tensors, which must already have the right shape.
namespace bimvfi::sampling {

/// out(c, y, x) = src(c, y + v, x + u), bilinear, border-clamped.
[[nodiscard]] Tensor warp(const Tensor& src, const Tensor& flow);
void warp_backward(const Tensor& src, const Tensor& flow, const Tensor& grad_out,
                   Tensor* grad_src, Tensor* grad_flow);

/// Bilinear resize with half-pixel centres (a factor-1/2 resize is a 2x2 box mean).
[[nodiscard]] Tensor resize(const Tensor& src, int out_h, int out_w);
void resize_backward(const Tensor& grad_out, Tensor& grad_src);

/// Neighbour index n in [0, 9) of the 3x3 window maps to offset (n / 3 - 1, n % 3 - 1).
/// Kernel channel n * factor^2 + (i * factor + j) weights neighbour n for the
/// fine sub-pixel (i, j). Displacements are multiplied by `factor`.
[[nodiscard]] Tensor convex_upsample(const Tensor& flow, const Tensor& kernels, int factor);
void convex_upsample_backward(const Tensor& flow, const Tensor& kernels, int factor,
                              const Tensor& grad_out, Tensor* grad_flow, Tensor* grad_kernels);

}  // namespace bimvfi::sampling
