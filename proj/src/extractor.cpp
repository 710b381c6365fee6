#include "bimspu/extractor.hpp"

namespace bimspu {

ExtractorParams make_extractor(ParamStore& store, const ExtractorConfig& config, Rng& rng,
                               const std::string& prefix) {
  if (config.growth == 0 || config.growth % 2 != 0) {
    throw ContractError("extractor growth must be a positive even channel count");
  }
  if (config.entry_channels == 0 || config.units == 0 || config.k == 0) {
    throw ContractError("extractor widths, unit count and k must be positive");
  }
  ExtractorParams ex;
  ex.config = config;
  ex.entry = make_linear(store, prefix + ".entry", 3, config.entry_channels, rng);
  std::size_t in = config.entry_channels;
  const std::size_t half = config.growth / 2;
  for (std::size_t u = 0; u < config.units; ++u) {
    const auto name = prefix + ".unit" + std::to_string(u + 1);
    EdgeConvUnit unit;
    unit.edge1 = make_linear(store, name + ".edge1", 2 * in, half, rng);
    unit.edge2 = make_linear(store, name + ".edge2", half, half, rng);
    ex.units.push_back(unit);
    in += config.growth;
  }
  return ex;
}

Tensor edge_features(Tape& tape, const Tensor& features, const IndexTable& idx) {
  if (features.rank() != 2 || idx.rows != features.dim(0)) {
    throw ContractError("edge_features: index table rows must match feature rows " +
                        shape_string(features.shape()));
  }
  const auto n = features.dim(0), c = features.dim(1), k = idx.cols;
  IndexTable centre(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) centre(i, j) = i;
  }
  const Tensor nb = reshape(tape, gather_rows(tape, features, idx), {n * k, c});
  const Tensor ctr = reshape(tape, gather_rows(tape, features, centre), {n * k, c});
  const Tensor edges = concat_channels(tape, sub(tape, nb, ctr), ctr);
  return reshape(tape, edges, {n, k, 2 * c});
}

Tensor dense_edge_conv_unit(Tape& tape, const Tensor& input, std::size_t k, const EdgeConvUnit& unit,
                            std::span<const Tensor> params, const Tensor& graph_source) {
  const auto n = input.dim(0);
  if (k > n) {
    throw ContractError("dense_edge_conv_unit: k=" + std::to_string(k) + " exceeds " + std::to_string(n) +
                        " points");
  }
  const IndexTable graph = knn_rows(graph_source.empty() ? input : graph_source, k);
  const Tensor edges = edge_features(tape, input, graph);
  const Tensor flat = reshape(tape, edges, {n * k, edges.dim(2)});
  const Tensor h1 = relu(tape, apply(tape, unit.edge1, params, flat));
  const Tensor h2 = relu(tape, apply(tape, unit.edge2, params, h1));
  const Tensor dense = concat_channels(tape, h1, h2);
  return reduce_max_axis1(tape, reshape(tape, dense, {n, k, dense.dim(1)}));
}

Tensor extract_features(Tape& tape, const Tensor& points, const ExtractorParams& extractor,
                        std::span<const Tensor> params) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ContractError("extract_features: expected [N,3] points, got " + shape_string(points.shape()));
  }
  const auto k = extractor.config.k;
  if (points.dim(0) < k) {
    throw ContractError("extract_features: N=" + std::to_string(points.dim(0)) + " is smaller than k=" +
                        std::to_string(k));
  }
  std::vector<Tensor> outputs{relu(tape, apply(tape, extractor.entry, params, points))};
  for (std::size_t u = 0; u < extractor.units.size(); ++u) {
    const Tensor input = outputs.size() == 1 ? outputs.front() : concat_channels(tape, outputs);
    // The first unit builds its graph on raw coordinates, later units on their input features.
    const Tensor& graph = u == 0 ? points : input;
    outputs.push_back(dense_edge_conv_unit(tape, input, k, extractor.units[u], params, graph));
  }
  return concat_channels(tape, outputs);
}

}  // namespace bimspu
