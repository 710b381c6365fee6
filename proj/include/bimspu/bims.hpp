#pragma once

// Bi-directional multi-scale feature expansion.
//
// Levels run 0..L with level l holding 2^l * N rows. The left pathway
// upsamples F_0 level by level, the middle pathway walks back down fusing
// with the left features, and the right pathway climbs again fusing left,
// middle and the upsampled right feature of the level below. Each fusion
// node normalizes learnable ReLU'd weights:
//
//   out = sum_i relu(w_i) x_i / (sum_i relu(w_i) + eps)
//
// Up doubles rows (children of parent m at rows 2m, 2m+1, tagged with a
// -1/+1 code channel); Down groups those row pairs back into one row.

#include <span>
#include <vector>

#include "bimspu/params.hpp"

namespace bimspu {

struct BimsConfig {
  std::size_t in_channels = 648;  ///< C1
  std::size_t channels = 128;     ///< C2
  std::size_t levels = 2;         ///< L, ratio = 2^L
  double eps = 1e-4;
  bool fusion = true;    ///< false: left pathway only
  bool residual = true;  ///< false: plain two-layer MLPs without the shortcut
};

/// y = inner2(relu(inner1(x))) + proj(x); proj is bias-free, or the identity
/// when the widths agree and `identity_proj` is set.
struct ResidualBlock {
  Linear inner1;
  Linear inner2;
  Linear proj;
  bool identity_proj = false;
  bool residual = true;
};

struct UpOp {
  ResidualBlock block;  ///< (C2+1) -> C2
};

struct DownOp {
  ResidualBlock block;  ///< 2*C2 -> C2
};

struct FusionNode {
  std::size_t weights = kNoParam;  ///< [inputs]
  std::size_t inputs = 0;
};

struct BimsParams {
  BimsConfig config;
  ResidualBlock adapter;          ///< C1 -> C2
  std::vector<UpOp> left;         ///< left[l-1]: level l-1 -> l
  std::vector<DownOp> down;       ///< down[l]: level l+1 -> l (middle)
  std::vector<UpOp> right;        ///< right[l-1]: right level l-1 -> l
  std::vector<FusionNode> middle; ///< middle[l] fuses (F_l^l, Down(.))
  std::vector<FusionNode> fused;  ///< fused[l-1] produces F_l^up

  std::size_t up_count() const { return left.size() + right.size(); }
};

ResidualBlock make_residual_block(ParamStore& store, const std::string& name, std::size_t in,
                                  std::size_t out, bool residual, Rng& rng,
                                  bool identity_when_square = false);
BimsParams make_bims(ParamStore& store, const BimsConfig& config, Rng& rng,
                     const std::string& prefix = "bims");

Tensor residual_block(Tape& tape, const Tensor& x, const ResidualBlock& block,
                      std::span<const Tensor> params);

/// Constant [2M,1] column of -1/+1 codes, alternating per child.
Tensor grid_code(std::size_t parents);

Tensor up_operator(Tape& tape, const Tensor& features, const UpOp& op, std::span<const Tensor> params);
Tensor down_operator(Tape& tape, const Tensor& features, const DownOp& op,
                     std::span<const Tensor> params);
Tensor fuse(Tape& tape, const std::vector<Tensor>& inputs, const FusionNode& node,
            std::span<const Tensor> params, double eps);

/// Returns [F_1^up, ..., F_L^up] with F_l^up of shape [2^l N, C2].
std::vector<Tensor> expand(Tape& tape, const Tensor& features, const BimsParams& bims,
                           std::span<const Tensor> params);

}  // namespace bimspu
