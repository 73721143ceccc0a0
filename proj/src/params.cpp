#include "bimvfi/params.hpp"

#include <cmath>
#include <cstring>

namespace bimvfi {

int ParamStore::add(std::string name, Tensor value) {
  if (find(name) >= 0) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return size() - 1;
}

int ParamStore::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (names_[i] == name) return i;
  }
  return -1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::vector<Tensor> ParamStore::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(v.channels(), v.height(), v.width());
  return out;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& v : values_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Tensor init_conv_weight(int out, int in, int k, double gain, Rng& rng) {
  const double fan_in = static_cast<double>(in) * k * k;
  const double bound = gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w(out, in, k * k);
  for (auto& v : w.values()) v = dist(rng);
  return w;
}

}  // namespace bimvfi
