#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bimspu/tensor.hpp"

namespace bimspu {

using Point3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

struct PointCloud {
  std::vector<Point3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }

  /// Flat x,y,z,x,y,z,... copy.
  std::vector<double> flat() const;
};

struct Mesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  double triangle_area(std::size_t t) const;
  double total_area() const;
};

/// Center and radius used to map a cloud into the unit ball and back.
struct NormRecord {
  Point3 center = Point3::Zero();
  double radius = 1.0;
};

/// Independent stream for task `task` under master seed `seed`.
Rng derive_rng(std::uint64_t seed, std::uint64_t task);

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices);
Tensor to_tensor(const PointCloud& cloud);
PointCloud from_tensor(const Tensor& t);

// ---------------------------------------------------------------------------
// Nearest neighbors. Rows are `dim`-wide; results are sorted ascending by
// squared Euclidean distance with exact ties broken by lower index.

/// Dispatches to the grid path for 3-D references of at least
/// kGridThreshold rows, brute force otherwise. Both paths agree exactly.
IndexTable knn(std::span<const double> reference, std::span<const double> queries,
               std::size_t dim, std::size_t k);
IndexTable knn(const PointCloud& reference, const PointCloud& queries, std::size_t k);
/// Self-kNN on the rows of a [N,C] tensor; every row is its own first neighbor
/// unless it has an exact duplicate with a lower index.
IndexTable knn_rows(const Tensor& rows, std::size_t k);

IndexTable knn_brute_force(std::span<const double> reference, std::span<const double> queries,
                           std::size_t dim, std::size_t k);
IndexTable knn_grid(std::span<const double> reference, std::span<const double> queries,
                    std::size_t k);

inline constexpr std::size_t kGridThreshold = 2048;

// ---------------------------------------------------------------------------
// Sampling

/// Greedy farthest point sampling; ties go to the lower index.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                               std::size_t start = 0);

/// Uniform sample of m distinct indices.
std::vector<std::size_t> random_subsample(const PointCloud& cloud, std::size_t m, Rng& rng);

/// Area-weighted triangle choice, uniform barycentric point inside it.
PointCloud sample_mesh_uniform(const Mesh& mesh, std::size_t m, Rng& rng);

/// Blue-noise-like surface sampling: oversample uniformly, thin with FPS.
PointCloud poisson_like_sample(const Mesh& mesh, std::size_t m, std::size_t oversample, Rng& rng);

// ---------------------------------------------------------------------------
// Canonicalization and augmentation

std::pair<PointCloud, NormRecord> normalize_to_unit_sphere(const PointCloud& cloud);
PointCloud apply_normalization(const PointCloud& cloud, const NormRecord& record);
PointCloud denormalize(const PointCloud& cloud, const NormRecord& record);

struct AugmentConfig {
  bool rotate = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double shift = 0.1;  ///< per-axis bound

  static AugmentConfig identity() { return {false, 1.0, 1.0, 0.0}; }
};

struct Augmented {
  PointCloud input;
  PointCloud gt;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double scale = 1.0;
  Point3 shift = Point3::Zero();
};

/// Draws one similarity transform p -> scale * R p + shift and applies it to both clouds.
Augmented augment(const PointCloud& input, const PointCloud& gt, Rng& rng,
                  const AugmentConfig& cfg);

// ---------------------------------------------------------------------------
// Patches

struct Patch {
  std::size_t seed = 0;
  std::vector<std::size_t> indices;
  PointCloud cloud;
};

/// FPS seeds (start 0), each patch = the patch_size nearest points of its seed.
std::vector<Patch> extract_patches(const PointCloud& cloud, std::size_t patch_size,
                                   std::size_t num_seeds);

/// Indices of points that belong to no patch, ascending.
std::vector<std::size_t> uncovered_points(const std::vector<Patch>& patches, std::size_t total);

/// ceil(3 M / patch_size): enough seeds for every point to be hit about three times.
std::size_t default_seed_count(std::size_t cloud_size, std::size_t patch_size);

/// Concatenates the patch outputs and thins them to `target` points with FPS.
PointCloud merge_patches(const std::vector<PointCloud>& upsampled, std::size_t target);

}  // namespace bimspu
