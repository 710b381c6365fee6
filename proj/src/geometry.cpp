#include "bimspu/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace bimspu {

namespace {

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double d = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    const double diff = a[c] - b[c];
    d += diff * diff;
  }
  return d;
}

// Keeps the k best (distance, index) pairs in lexicographic order.
class NeighborBuffer {
 public:
  explicit NeighborBuffer(std::size_t k) : k_(k) {
    dist_.reserve(k);
    index_.reserve(k);
  }

  bool full() const { return dist_.size() == k_; }
  double worst() const { return dist_.back(); }

  void offer(double d, std::size_t i) {
    if (full() && !less(d, i, dist_.back(), index_.back())) return;
    std::size_t pos = dist_.size();
    while (pos > 0 && less(d, i, dist_[pos - 1], index_[pos - 1])) --pos;
    if (full()) {
      dist_.pop_back();
      index_.pop_back();
    }
    dist_.insert(dist_.begin() + static_cast<std::ptrdiff_t>(pos), d);
    index_.insert(index_.begin() + static_cast<std::ptrdiff_t>(pos), i);
  }

  void write(IndexTable& out, std::size_t row) const {
    std::copy(index_.begin(), index_.end(), out.data.begin() + static_cast<std::ptrdiff_t>(row * k_));
  }

 private:
  static bool less(double d0, std::size_t i0, double d1, std::size_t i1) {
    return d0 < d1 || (d0 == d1 && i0 < i1);
  }
  std::size_t k_;
  std::vector<double> dist_;
  std::vector<std::size_t> index_;
};

void check_knn_args(std::size_t ref_values, std::size_t query_values, std::size_t dim,
                    std::size_t k) {
  if (dim == 0) throw ContractError("knn: dimension must be positive");
  if (ref_values % dim != 0 || query_values % dim != 0) {
    throw ContractError("knn: buffer length is not a multiple of the dimension");
  }
  const auto rows = ref_values / dim;
  if (k == 0 || k > rows) {
    throw ContractError("knn: k=" + std::to_string(k) + " exceeds reference size " +
                        std::to_string(rows));
  }
}

}  // namespace

std::vector<double> PointCloud::flat() const {
  std::vector<double> out;
  out.reserve(points.size() * 3);
  for (const auto& p : points) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

double Mesh::triangle_area(std::size_t t) const {
  const auto& tri = triangles.at(t);
  const Point3& a = vertices.at(tri[0]);
  const Point3& b = vertices.at(tri[1]);
  const Point3& c = vertices.at(tri[2]);
  return 0.5 * (b - a).cross(c - a).norm();
}

double Mesh::total_area() const {
  double area = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) area += triangle_area(t);
  return area;
}

Rng derive_rng(std::uint64_t seed, std::uint64_t task) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32)};
  return Rng(seq);
}

PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (auto i : indices) {
    if (i >= cloud.size()) throw ContractError("select: index out of range");
    out.points.push_back(cloud[i]);
  }
  return out;
}

Tensor to_tensor(const PointCloud& cloud) {
  if (cloud.empty()) throw ContractError("to_tensor: empty point cloud");
  return Tensor({cloud.size(), 3}, cloud.flat());
}

PointCloud from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    throw ContractError("from_tensor: expected [M,3], got " + shape_string(t.shape()));
  }
  PointCloud out;
  out.points.reserve(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i) out.points.emplace_back(t[3 * i], t[3 * i + 1], t[3 * i + 2]);
  return out;
}

// ---------------------------------------------------------------------------
// kNN

IndexTable knn_brute_force(std::span<const double> reference, std::span<const double> queries,
                           std::size_t dim, std::size_t k) {
  check_knn_args(reference.size(), queries.size(), dim, k);
  const auto m = reference.size() / dim;
  const auto q = queries.size() / dim;
  IndexTable out(q, k);
  for (std::size_t qi = 0; qi < q; ++qi) {
    NeighborBuffer buf(k);
    const double* query = queries.data() + qi * dim;
    for (std::size_t r = 0; r < m; ++r) {
      buf.offer(squared_distance(query, reference.data() + r * dim, dim), r);
    }
    buf.write(out, qi);
  }
  return out;
}

IndexTable knn_grid(std::span<const double> reference, std::span<const double> queries,
                    std::size_t k) {
  constexpr std::size_t dim = 3;
  check_knn_args(reference.size(), queries.size(), dim, k);
  const auto m = reference.size() / dim;
  const auto q = queries.size() / dim;

  Point3 lo = Point3::Constant(std::numeric_limits<double>::infinity());
  Point3 hi = -lo;
  for (std::size_t i = 0; i < m; ++i) {
    const Point3 p(reference[3 * i], reference[3 * i + 1], reference[3 * i + 2]);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  const auto res = static_cast<long>(std::max(1.0, std::ceil(std::cbrt(static_cast<double>(m) / 2.0))));
  const double cell = extent / static_cast<double>(res) * (1.0 + 1e-9);

  auto cell_of = [&](double v, int axis) {
    const auto c = static_cast<long>(std::floor((v - lo[axis]) / cell));
    return std::clamp(c, 0L, res - 1);
  };
  auto flat_cell = [&](long x, long y, long z) {
    return static_cast<std::size_t>((x * res + y) * res + z);
  };

  // Counting sort of point indices by cell; each cell stays index-ascending.
  const auto cells = static_cast<std::size_t>(res * res * res);
  std::vector<std::size_t> start(cells + 1, 0);
  std::vector<std::size_t> owner(m);
  for (std::size_t i = 0; i < m; ++i) {
    owner[i] = flat_cell(cell_of(reference[3 * i], 0), cell_of(reference[3 * i + 1], 1),
                         cell_of(reference[3 * i + 2], 2));
    ++start[owner[i] + 1];
  }
  std::partial_sum(start.begin(), start.end(), start.begin());
  std::vector<std::size_t> sorted(m);
  {
    auto fill = start;
    for (std::size_t i = 0; i < m; ++i) sorted[fill[owner[i]]++] = i;
  }

  IndexTable out(q, k);
  for (std::size_t qi = 0; qi < q; ++qi) {
    const double* query = queries.data() + qi * dim;
    const long cx = cell_of(query[0], 0), cy = cell_of(query[1], 1), cz = cell_of(query[2], 2);
    NeighborBuffer buf(k);
    for (long ring = 0;; ++ring) {
      for (long x = cx - ring; x <= cx + ring; ++x) {
        if (x < 0 || x >= res) continue;
        for (long y = cy - ring; y <= cy + ring; ++y) {
          if (y < 0 || y >= res) continue;
          for (long z = cz - ring; z <= cz + ring; ++z) {
            if (z < 0 || z >= res) continue;
            if (std::max({std::labs(x - cx), std::labs(y - cy), std::labs(z - cz)}) != ring) continue;
            const auto c = flat_cell(x, y, z);
            for (std::size_t s = start[c]; s < start[c + 1]; ++s) {
              const auto r = sorted[s];
              buf.offer(squared_distance(query, reference.data() + r * dim, dim), r);
            }
          }
        }
      }
      // Distance from the query to the nearest unvisited region.
      double gap = std::numeric_limits<double>::infinity();
      const long centre[3] = {cx, cy, cz};
      for (int axis = 0; axis < 3; ++axis) {
        if (centre[axis] - ring > 0) {
          gap = std::min(gap, query[axis] - (lo[axis] + static_cast<double>(centre[axis] - ring) * cell));
        }
        if (centre[axis] + ring + 1 < res) {
          gap = std::min(gap, lo[axis] + static_cast<double>(centre[axis] + ring + 1) * cell - query[axis]);
        }
      }
      if (std::isinf(gap)) break;
      if (buf.full() && gap > 0.0 && gap * gap > buf.worst() * (1.0 + 1e-9)) break;
    }
    buf.write(out, qi);
  }
  return out;
}

IndexTable knn(std::span<const double> reference, std::span<const double> queries,
               std::size_t dim, std::size_t k) {
  if (dim == 3 && reference.size() / 3 >= kGridThreshold) return knn_grid(reference, queries, k);
  return knn_brute_force(reference, queries, dim, k);
}

IndexTable knn(const PointCloud& reference, const PointCloud& queries, std::size_t k) {
  const auto ref = reference.flat();
  const auto qs = queries.flat();
  return knn(ref, qs, 3, k);
}

IndexTable knn_rows(const Tensor& rows, std::size_t k) {
  if (rows.rank() != 2) throw ContractError("knn_rows: expected [N,C], got " + shape_string(rows.shape()));
  return knn(rows.data(), rows.data(), rows.dim(1), k);
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                               std::size_t start) {
  const auto n = cloud.size();
  if (m < 1 || m > n) {
    throw ContractError("farthest_point_sample: m=" + std::to_string(m) + " outside [1," +
                        std::to_string(n) + "]");
  }
  if (start >= n) throw ContractError("farthest_point_sample: start index out of range");
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> out;
  out.reserve(m);
  std::size_t current = start;
  for (;;) {
    out.push_back(current);
    taken[current] = true;
    if (out.size() == m) break;
    const Point3& c = cloud[current];
    std::size_t best = n;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (cloud[i] - c).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return out;
}

std::vector<std::size_t> random_subsample(const PointCloud& cloud, std::size_t m, Rng& rng) {
  const auto n = cloud.size();
  if (m > n) {
    throw ContractError("random_subsample: m=" + std::to_string(m) + " exceeds " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  return idx;
}

PointCloud sample_mesh_uniform(const Mesh& mesh, std::size_t m, Rng& rng) {
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.triangle_area(t);
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw ContractError("sample_mesh_uniform: mesh has zero total area");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out;
  out.points.reserve(m);
  for (std::size_t s = 0; s < m; ++s) {
    const double target = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    auto t = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
    // Zero-area triangles share a cumulative value with their predecessor and are never chosen.
    const auto& tri = mesh.triangles[t];
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    out.points.push_back((1.0 - r1) * mesh.vertices[tri[0]] + r1 * (1.0 - r2) * mesh.vertices[tri[1]] +
                         r1 * r2 * mesh.vertices[tri[2]]);
  }
  return out;
}

PointCloud poisson_like_sample(const Mesh& mesh, std::size_t m, std::size_t oversample, Rng& rng) {
  if (oversample < 2) throw ContractError("poisson_like_sample: oversample must be >= 2");
  const PointCloud dense = sample_mesh_uniform(mesh, m * oversample, rng);
  const auto keep = farthest_point_sample(dense, m, 0);
  return select(dense, keep);
}

// ---------------------------------------------------------------------------
// Canonicalization

std::pair<PointCloud, NormRecord> normalize_to_unit_sphere(const PointCloud& cloud) {
  if (cloud.empty()) throw ContractError("normalize_to_unit_sphere: empty point cloud");
  NormRecord rec;
  rec.center = Point3::Zero();
  for (const auto& p : cloud.points) rec.center += p;
  rec.center /= static_cast<double>(cloud.size());
  double radius = 0.0;
  for (const auto& p : cloud.points) radius = std::max(radius, (p - rec.center).norm());
  rec.radius = radius > 0.0 ? radius : 1.0;
  return {apply_normalization(cloud, rec), rec};
}

PointCloud apply_normalization(const PointCloud& cloud, const NormRecord& record) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back((p - record.center) / record.radius);
  return out;
}

PointCloud denormalize(const PointCloud& cloud, const NormRecord& record) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(p * record.radius + record.center);
  return out;
}

Augmented augment(const PointCloud& input, const PointCloud& gt, Rng& rng,
                  const AugmentConfig& cfg) {
  if (!(cfg.scale_min > 0.0) || !(cfg.scale_max >= cfg.scale_min) || !std::isfinite(cfg.scale_max)) {
    throw ContractError("augment: scale range must satisfy 0 < min <= max");
  }
  if (!(cfg.shift >= 0.0) || !std::isfinite(cfg.shift)) {
    throw ContractError("augment: shift bound must be finite and >= 0");
  }
  Augmented out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (cfg.rotate) {
    // Uniform random unit quaternion (Shoemake).
    const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
    const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    const double tau = 2.0 * std::numbers::pi;
    Eigen::Quaterniond quat(b * std::cos(tau * u3), a * std::sin(tau * u2), a * std::cos(tau * u2),
                            b * std::sin(tau * u3));
    out.rotation = quat.normalized().toRotationMatrix();
  }
  if (cfg.scale_max > cfg.scale_min) {
    out.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  } else {
    out.scale = cfg.scale_min;
  }
  if (cfg.shift > 0.0) {
    std::uniform_real_distribution<double> shift(-cfg.shift, cfg.shift);
    out.shift = Point3(shift(rng), shift(rng), shift(rng));
  }
  auto apply = [&](const PointCloud& cloud) {
    PointCloud moved;
    moved.points.reserve(cloud.size());
    for (const auto& p : cloud.points) moved.points.push_back(out.scale * (out.rotation * p) + out.shift);
    return moved;
  };
  if (cfg.rotate || out.scale != 1.0 || cfg.shift > 0.0) {
    out.input = apply(input);
    out.gt = apply(gt);
  } else {
    out.input = input;
    out.gt = gt;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patches

std::vector<Patch> extract_patches(const PointCloud& cloud, std::size_t patch_size,
                                   std::size_t num_seeds) {
  if (patch_size < 1 || patch_size > cloud.size()) {
    throw ContractError("extract_patches: patch size " + std::to_string(patch_size) +
                        " exceeds cloud size " + std::to_string(cloud.size()));
  }
  if (num_seeds < 1) throw ContractError("extract_patches: need at least one seed");
  num_seeds = std::min(num_seeds, cloud.size());
  const auto seeds = farthest_point_sample(cloud, num_seeds, 0);
  const auto neighbors = knn(cloud, select(cloud, seeds), patch_size);
  std::vector<Patch> patches(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    auto& patch = patches[s];
    patch.seed = seeds[s];
    patch.indices.assign(neighbors.data.begin() + static_cast<std::ptrdiff_t>(s * patch_size),
                         neighbors.data.begin() + static_cast<std::ptrdiff_t>((s + 1) * patch_size));
    patch.cloud = select(cloud, patch.indices);
  }
  return patches;
}

std::vector<std::size_t> uncovered_points(const std::vector<Patch>& patches, std::size_t total) {
  std::vector<bool> hit(total, false);
  for (const auto& p : patches) {
    for (auto i : p.indices) {
      if (i < total) hit[i] = true;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < total; ++i) {
    if (!hit[i]) out.push_back(i);
  }
  return out;
}

std::size_t default_seed_count(std::size_t cloud_size, std::size_t patch_size) {
  if (patch_size == 0) throw ContractError("default_seed_count: patch size must be positive");
  return (3 * cloud_size + patch_size - 1) / patch_size;
}

PointCloud merge_patches(const std::vector<PointCloud>& upsampled, std::size_t target) {
  PointCloud all;
  for (const auto& p : upsampled) all.points.insert(all.points.end(), p.points.begin(), p.points.end());
  if (target < 1 || all.size() < target) {
    throw ContractError("merge_patches: " + std::to_string(all.size()) +
                        " points cannot yield " + std::to_string(target));
  }
  return select(all, farthest_point_sample(all, target, 0));
}

}  // namespace bimspu
