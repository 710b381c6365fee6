#pragma once

// Dense dynamic edge-convolution feature extractor: an entry shared MLP on
// coordinates followed by densely connected edge-conv units whose kNN graph
// is rebuilt from each unit's input.

#include <span>
#include <vector>

#include "bimspu/params.hpp"

namespace bimspu {

struct ExtractorConfig {
  std::size_t entry_channels = 24;  ///< c0
  std::size_t growth = 208;         ///< g, channels emitted per unit (even)
  std::size_t units = 3;            ///< U
  std::size_t k = 16;

  std::size_t output_channels() const { return entry_channels + units * growth; }
};

struct EdgeConvUnit {
  Linear edge1;  ///< 2*Cin -> g/2
  Linear edge2;  ///< g/2 -> g/2
};

struct ExtractorParams {
  ExtractorConfig config;
  Linear entry;
  std::vector<EdgeConvUnit> units;
};

ExtractorParams make_extractor(ParamStore& store, const ExtractorConfig& config, Rng& rng,
                               const std::string& prefix = "extractor");

/// out[i,j,:] = concat(F[idx(i,j)] - F[i], F[i]) with shape [N,k,2C].
Tensor edge_features(Tape& tape, const Tensor& features, const IndexTable& idx);

/// One dense edge-conv unit. The kNN graph is built on `graph_source` rows
/// (the unit input itself when empty); returns [N,g].
Tensor dense_edge_conv_unit(Tape& tape, const Tensor& input, std::size_t k, const EdgeConvUnit& unit,
                            std::span<const Tensor> params, const Tensor& graph_source = Tensor());

/// [N,3] coordinates -> [N, c0 + U*g] point features.
Tensor extract_features(Tape& tape, const Tensor& points, const ExtractorParams& extractor,
                        std::span<const Tensor> params);

}  // namespace bimspu
