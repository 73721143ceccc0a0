#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bimvfi {

/// Dense channel-major grid: `channels` planes of `height` x `width` doubles.
///
/// Every image-like quantity in the library (frames, flows, feature maps,
/// kernel fields, convolution weights) is stored in this layout.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  [[nodiscard]] int channels() const { return c_; }
  [[nodiscard]] int height() const { return h_; }
  [[nodiscard]] int width() const { return w_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t plane_size() const {
    return static_cast<std::size_t>(h_) * static_cast<std::size_t>(w_);
  }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  [[nodiscard]] double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  [[nodiscard]] std::span<double> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  [[nodiscard]] std::span<const double> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }

  [[nodiscard]] bool same_shape(const Tensor& o) const {
    return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }
  [[nodiscard]] bool same_spatial(const Tensor& o) const { return h_ == o.h_ && w_ == o.w_; }
  [[nodiscard]] std::string shape_string() const;

  void fill(double v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

  /// Copies channels [first, first + count).
  [[nodiscard]] Tensor slice_channels(int first, int count) const;
  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
void require_same_spatial(const Tensor& a, const Tensor& b, const char* what);
void require_channels(const Tensor& a, int channels, const char* what);

[[nodiscard]] Tensor concat_channels(std::span<const Tensor* const> parts);

}  // namespace bimvfi
