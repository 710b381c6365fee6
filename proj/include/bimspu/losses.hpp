#pragma once

#include <span>
#include <vector>

#include "bimspu/params.hpp"

namespace bimspu {

/// Per-scale coordinate regressor: C2 -> hidden -> 3, ReLU between.
struct HeadParams {
  Linear hidden;
  Linear out;
};

std::vector<HeadParams> make_heads(ParamStore& store, std::size_t channels, std::size_t hidden,
                                   std::size_t levels, Rng& rng, const std::string& prefix = "head");

Tensor reconstruct(Tape& tape, const Tensor& features, const HeadParams& head, std::span<const Tensor> params);

/// Squared-distance Chamfer: mean_x min_y |x-y|^2 + mean_y min_x |y-x|^2.
/// Gradients flow through the nearest-neighbor matches.
Tensor chamfer(Tape& tape, const Tensor& a, const Tensor& b);
double chamfer_distance(const PointCloud& a, const PointCloud& b);

/// Symmetric Hausdorff distance (unsquared).
double hausdorff_distance(const PointCloud& a, const PointCloud& b);

/// 1/(M K) sum_i sum_{j in kNN_K(i)} -d_ij exp(-d_ij^2 / h^2).
Tensor repulsion(Tape& tape, const Tensor& points, std::size_t k, double h);

Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c);
/// Mean Euclidean distance from each point to the nearest mesh triangle.
double point_to_surface(const PointCloud& cloud, const Mesh& mesh);

struct LossConfig {
  std::vector<double> alphas{0.6, 1.0};
  double lambda = 0.02;
  std::size_t repulsion_k = 5;
  double repulsion_h = 0.03;

  void validate(std::size_t levels) const;
};

/// Scale weights per level count: 1 -> [1]; 2 -> [0.6, 1]; 3 -> [0.6, 0.8, 1];
/// L >= 4 supervises the top three scales with [0.6, 0.8, 1] and leaves the rest at 0.
std::vector<double> default_alphas(std::size_t levels);

struct JointLoss {
  Tensor total;
  std::vector<double> chamfer;  ///< per scale, including unsupervised ones
};

/// sum_i alpha_i (CD(Q, pred_i) + lambda * rep(pred_i)), every scale against the full-resolution gt.
JointLoss joint_loss(Tape& tape, const Tensor& gt, const std::vector<Tensor>& predictions, const LossConfig& cfg);

}  // namespace bimspu
