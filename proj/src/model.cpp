#include "bimspu/model.hpp"

namespace bimspu {

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng = derive_rng(seed, 0);
  extractor_ = make_extractor(params_, config.extractor, rng);
  BimsConfig bc;
  bc.in_channels = config.extractor.output_channels();
  bc.channels = config.channels;
  bc.levels = config.levels;
  bc.eps = config.fusion_eps;
  bc.fusion = config.fusion;
  bc.residual = config.residual;
  bims_ = make_bims(params_, bc, rng);
  heads_ = make_heads(params_, config.channels, config.head_hidden, config.levels, rng);
}

std::vector<Tensor> Model::forward(Tape& tape, std::span<const Tensor> values, const Tensor& points) const {
  if (values.size() != params_.size()) throw ContractError("model forward: parameter count mismatch");
  const Tensor features = extract_features(tape, points, extractor_, values);
  const auto expanded = expand(tape, features, bims_, values);
  std::vector<Tensor> out;
  out.reserve(expanded.size());
  for (std::size_t l = 0; l < expanded.size(); ++l) out.push_back(reconstruct(tape, expanded[l], heads_[l], values));
  return out;
}

PointCloud Model::upsample_patch(const PointCloud& patch) const {
  Tape tape;
  return from_tensor(forward(tape, params_.values(), to_tensor(patch)).back());
}

}  // namespace bimspu
