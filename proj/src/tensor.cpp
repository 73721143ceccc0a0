#include "bimvfi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bimvfi {

Tensor::Tensor(int channels, int height, int width, double fill)
    : c_(channels), h_(height), w_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    throw std::invalid_argument("Tensor: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(' << c_ << ", " << h_ << ", " << w_ << ')';
  return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "Tensor::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor Tensor::slice_channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > c_) {
    throw std::out_of_range("Tensor::slice_channels: range outside " + shape_string());
  }
  Tensor out(count, h_, w_);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()),
              count * plane_size(), out.data_.begin());
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                " vs " + b.shape_string());
  }
}

void require_same_spatial(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_spatial(b)) {
    throw std::invalid_argument(std::string(what) + ": spatial size mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
  }
}

void require_channels(const Tensor& a, int channels, const char* what) {
  if (a.channels() != channels) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) +
                                " channels, got " + a.shape_string());
  }
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) return {};
  int total = 0;
  for (const Tensor* p : parts) {
    require_same_spatial(*parts.front(), *p, "concat_channels");
    total += p->channels();
  }
  Tensor out(total, parts.front()->height(), parts.front()->width());
  double* dst = out.data();
  for (const Tensor* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
  return out;
}

}  // namespace bimvfi
