#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bimspu/geometry.hpp"
#include "bimspu/tensor.hpp"

namespace bimspu {

inline constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

/// Ordered, named parameter tensors. Network code refers to parameters by
/// position so the same structure can be evaluated against raw values or
/// against tape-watched copies.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t index(const std::string& name) const;

  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  void set(std::size_t i, Tensor value);
  std::span<const Tensor> values() const { return values_; }
  const std::vector<std::string>& names() const { return names_; }

  /// Watches every parameter on `tape`, in order.
  std::vector<Tensor> watch_all(Tape& tape) const;

  /// Rounds every value to the nearest f32.
  void round_to_f32();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Shared-MLP layer: weight [Cin,Cout] and optional bias [Cout].
struct Linear {
  std::size_t weight = kNoParam;
  std::size_t bias = kNoParam;
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Weights uniform in +-sqrt(1/fan_in), zero bias.
Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng, bool with_bias = true);

Tensor apply(Tape& tape, const Linear& layer, std::span<const Tensor> params, const Tensor& x);

double round_to_f32(double v);

}  // namespace bimspu
