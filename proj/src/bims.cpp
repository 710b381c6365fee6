#include "bimspu/bims.hpp"

namespace bimspu {

ResidualBlock make_residual_block(ParamStore& store, const std::string& name, std::size_t in,
                                  std::size_t out, bool residual, Rng& rng, bool identity_when_square) {
  ResidualBlock block;
  block.residual = residual;
  block.inner1 = make_linear(store, name + ".inner1", in, out, rng);
  block.inner2 = make_linear(store, name + ".inner2", out, out, rng);
  if (residual) {
    if (identity_when_square && in == out) {
      block.identity_proj = true;
    } else {
      block.proj = make_linear(store, name + ".proj", in, out, rng, /*with_bias=*/false);
    }
  }
  return block;
}

BimsParams make_bims(ParamStore& store, const BimsConfig& config, Rng& rng, const std::string& prefix) {
  if (config.levels < 1) throw ContractError("bims: need at least one level (ratio >= 2)");
  if (config.in_channels == 0 || config.channels == 0) throw ContractError("bims: channel counts must be positive");
  if (!(config.eps >= 0.0)) throw ContractError("bims: fusion epsilon must be >= 0");
  const auto c2 = config.channels;
  const auto levels = config.levels;
  BimsParams b;
  b.config = config;
  b.adapter = make_residual_block(store, prefix + ".adapter", config.in_channels, c2, config.residual, rng);
  for (std::size_t l = 1; l <= levels; ++l) {
    b.left.push_back({make_residual_block(store, prefix + ".left.up" + std::to_string(l), c2 + 1, c2,
                                          config.residual, rng)});
  }
  if (config.fusion) {
    auto fusion_weights = [&](const std::string& name, std::size_t n) {
      return FusionNode{store.add(name + ".weights", Tensor::filled({n}, 1.0)), n};
    };
    b.middle.resize(levels);
    b.down.resize(levels);
    for (std::size_t l = levels; l-- > 0;) {
      b.down[l] = {make_residual_block(store, prefix + ".middle.down" + std::to_string(l), 2 * c2, c2,
                                       config.residual, rng)};
      b.middle[l] = fusion_weights(prefix + ".middle.fuse" + std::to_string(l), 2);
    }
    for (std::size_t l = 1; l <= levels; ++l) {
      b.right.push_back({make_residual_block(store, prefix + ".right.up" + std::to_string(l), c2 + 1, c2,
                                             config.residual, rng)});
      b.fused.push_back(fusion_weights(prefix + ".right.fuse" + std::to_string(l), l < levels ? 3 : 2));
    }
    if (b.left.size() != levels || b.down.size() != levels || b.right.size() != levels) {
      throw ContractError("bims: operator count per pathway must equal the level count");
    }
  }
  return b;
}

Tensor residual_block(Tape& tape, const Tensor& x, const ResidualBlock& block,
                      std::span<const Tensor> params) {
  if (x.rank() != 2 || x.dim(1) != block.inner1.in) {
    throw ContractError("residual_block: input " + shape_string(x.shape()) + " does not match width " +
                        std::to_string(block.inner1.in));
  }
  const Tensor inner = apply(tape, block.inner2, params, relu(tape, apply(tape, block.inner1, params, x)));
  if (!block.residual) return inner;
  if (block.identity_proj) return add(tape, inner, x);
  return add(tape, inner, apply(tape, block.proj, params, x));
}

Tensor grid_code(std::size_t parents) {
  std::vector<double> code(2 * parents);
  for (std::size_t i = 0; i < code.size(); ++i) code[i] = i % 2 == 0 ? -1.0 : 1.0;
  return Tensor({2 * parents, 1}, std::move(code));
}

Tensor up_operator(Tape& tape, const Tensor& features, const UpOp& op, std::span<const Tensor> params) {
  if (features.rank() != 2) throw ContractError("up_operator: expected [M,C], got " + shape_string(features.shape()));
  const Tensor children = repeat_rows(tape, features, 2);
  return residual_block(tape, concat_channels(tape, children, grid_code(features.dim(0))), op.block, params);
}

Tensor down_operator(Tape& tape, const Tensor& features, const DownOp& op, std::span<const Tensor> params) {
  if (features.rank() != 2 || features.dim(0) % 2 != 0) {
    throw ContractError("down_operator: expected an even number of rows, got " + shape_string(features.shape()));
  }
  return residual_block(tape, group_channels(tape, features, 2), op.block, params);
}

Tensor fuse(Tape& tape, const std::vector<Tensor>& inputs, const FusionNode& node,
            std::span<const Tensor> params, double eps) {
  if (inputs.size() != node.inputs) {
    throw ContractError("fuse: node expects " + std::to_string(node.inputs) + " inputs, got " +
                        std::to_string(inputs.size()));
  }
  return weighted_fuse(tape, inputs, params[node.weights], eps);
}

std::vector<Tensor> expand(Tape& tape, const Tensor& features, const BimsParams& bims,
                           std::span<const Tensor> params) {
  const auto levels = bims.config.levels;
  const double eps = bims.config.eps;

  std::vector<Tensor> left(levels + 1);
  left[0] = residual_block(tape, features, bims.adapter, params);
  for (std::size_t l = 1; l <= levels; ++l) left[l] = up_operator(tape, left[l - 1], bims.left[l - 1], params);
  if (!bims.config.fusion) return {left.begin() + 1, left.end()};

  // Top-down: the middle feature at level l fuses left[l] with Down of the level above.
  std::vector<Tensor> middle(levels);
  for (std::size_t l = levels; l-- > 0;) {
    const Tensor& above = l + 1 == levels ? left[levels] : middle[l + 1];
    middle[l] = fuse(tape, {left[l], down_operator(tape, above, bims.down[l], params)}, bims.middle[l], params, eps);
  }

  // Bottom-up.
  std::vector<Tensor> right(levels + 1);
  right[0] = middle[0];
  for (std::size_t l = 1; l <= levels; ++l) {
    const Tensor lifted = up_operator(tape, right[l - 1], bims.right[l - 1], params);
    if (l < levels) {
      right[l] = fuse(tape, {left[l], middle[l], lifted}, bims.fused[l - 1], params, eps);
    } else {
      right[l] = fuse(tape, {left[l], lifted}, bims.fused[l - 1], params, eps);
    }
  }
  return {right.begin() + 1, right.end()};
}

}  // namespace bimspu
