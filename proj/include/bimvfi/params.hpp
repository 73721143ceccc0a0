#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bimvfi/motionfield.hpp"
#include "bimvfi/tensor.hpp"

namespace bimvfi {

/// Named, ordered collection of learnable tensors. The single source of
/// truth for weights: every forward pass reads from here.
class ParamStore {
 public:
  int add(std::string name, Tensor value);

  [[nodiscard]] int size() const { return static_cast<int>(values_.size()); }
  [[nodiscard]] const Tensor& value(int i) const { return values_.at(i); }
  [[nodiscard]] Tensor& value(int i) { return values_.at(i); }
  [[nodiscard]] const std::string& name(int i) const { return names_.at(i); }
  [[nodiscard]] int find(const std::string& name) const;  // -1 when absent
  [[nodiscard]] std::size_t scalar_count() const;

  [[nodiscard]] std::vector<Tensor> zeros_like() const;
  /// Order-sensitive FNV-1a hash over the raw bytes of all values.
  [[nodiscard]] std::uint64_t checksum() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Kaiming-style uniform initialisation for a (out, in, k*k) conv weight.
[[nodiscard]] Tensor init_conv_weight(int out, int in, int k, double gain, Rng& rng);

}  // namespace bimvfi
