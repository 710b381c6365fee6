#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bimspu/bims.hpp"
#include "bimspu/extractor.hpp"
#include "bimspu/losses.hpp"

namespace bimspu {

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t channels = 128;  ///< C2
  std::size_t levels = 2;
  std::size_t head_hidden = 64;
  double fusion_eps = 1e-4;
  bool fusion = true;
  bool residual = true;

  std::size_t ratio() const { return std::size_t{1} << levels; }
};

/// Extractor, expansion module and per-scale heads over one parameter store.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ExtractorParams& extractor() const { return extractor_; }
  const BimsParams& bims() const { return bims_; }
  const std::vector<HeadParams>& heads() const { return heads_; }

  /// [N,3] -> L point sets of shape [2^l N, 3], evaluated against `values`
  /// (either params().values() or tape-watched copies of them).
  std::vector<Tensor> forward(Tape& tape, std::span<const Tensor> values, const Tensor& points) const;

  /// Top-scale prediction without gradient tracking.
  PointCloud upsample_patch(const PointCloud& patch) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  ExtractorParams extractor_;
  BimsParams bims_;
  std::vector<HeadParams> heads_;
};

}  // namespace bimspu
