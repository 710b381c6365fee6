#include "bimspu/params.hpp"

#include <cmath>

namespace bimspu {

std::size_t ParamStore::add(std::string name, Tensor value) {
  for (const auto& existing : names_) {
    if (existing == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  names_.push_back(std::move(name));
  values_.push_back(value.detach());
  return values_.size() - 1;
}

std::size_t ParamStore::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void ParamStore::set(std::size_t i, Tensor value) {
  if (value.shape() != values_.at(i).shape()) {
    throw ContractError("parameter '" + names_[i] + "' expects shape " + shape_string(values_[i].shape()) +
                        ", got " + shape_string(value.shape()));
  }
  values_[i] = value.detach();
}

std::vector<Tensor> ParamStore::watch_all(Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(tape.watch(v));
  return out;
}

double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void ParamStore::round_to_f32() {
  for (auto& v : values_) {
    std::vector<double> data(v.data().begin(), v.data().end());
    for (auto& x : data) x = bimspu::round_to_f32(x);
    v = Tensor(v.shape(), std::move(data));
  }
}

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng, bool with_bias) {
  if (in == 0 || out == 0) throw ContractError("linear layer '" + name + "' needs positive widths");
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (auto& x : w) x = dist(rng);
  Linear layer;
  layer.in = in;
  layer.out = out;
  layer.weight = store.add(name + ".weight", Tensor({in, out}, std::move(w)));
  if (with_bias) layer.bias = store.add(name + ".bias", Tensor::zeros({out}));
  return layer;
}

Tensor apply(Tape& tape, const Linear& layer, std::span<const Tensor> params, const Tensor& x) {
  if (layer.bias == kNoParam) return linear(tape, x, params[layer.weight]);
  return linear(tape, x, params[layer.weight], params[layer.bias]);
}

}  // namespace bimspu
