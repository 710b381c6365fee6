#include "bimspu/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bimspu {

namespace {

void require_points(const Tensor& t, const char* op) {
  if (t.rank() != 2 || t.dim(1) != 3) {
    throw ContractError(std::string(op) + ": expected [M,3] points, got " + shape_string(t.shape()));
  }
}

double squared_distance3(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Nearest neighbor (lowest index on ties) of each query row in reference.
std::vector<std::size_t> nearest(std::span<const double> reference, std::span<const double> queries) {
  return knn(reference, queries, 3, 1).data;
}

}  // namespace

std::vector<HeadParams> make_heads(ParamStore& store, std::size_t channels, std::size_t hidden,
                                   std::size_t levels, Rng& rng, const std::string& prefix) {
  std::vector<HeadParams> heads;
  for (std::size_t l = 1; l <= levels; ++l) {
    const auto name = prefix + std::to_string(l);
    heads.push_back({make_linear(store, name + ".hidden", channels, hidden, rng),
                     make_linear(store, name + ".out", hidden, 3, rng)});
  }
  return heads;
}

Tensor reconstruct(Tape& tape, const Tensor& features, const HeadParams& head, std::span<const Tensor> params) {
  if (features.rank() != 2 || features.dim(1) != head.hidden.in) {
    throw ContractError("reconstruct: features " + shape_string(features.shape()) + " do not match head width " +
                        std::to_string(head.hidden.in));
  }
  return apply(tape, head.out, params, relu(tape, apply(tape, head.hidden, params, features)));
}

Tensor chamfer(Tape& tape, const Tensor& a, const Tensor& b) {
  require_points(a, "chamfer");
  require_points(b, "chamfer");
  const auto na = a.dim(0), nb = b.dim(0);
  const auto a_to_b = nearest(b.data(), a.data());
  const auto b_to_a = nearest(a.data(), b.data());
  double forward = 0.0, backward = 0.0;
  for (std::size_t i = 0; i < na; ++i) forward += squared_distance3(a.ptr() + 3 * i, b.ptr() + 3 * a_to_b[i]);
  for (std::size_t j = 0; j < nb; ++j) backward += squared_distance3(b.ptr() + 3 * j, a.ptr() + 3 * b_to_a[j]);
  const double value = forward / static_cast<double>(na) + backward / static_cast<double>(nb);
  return tape.record("chamfer", {1}, std::vector<double>{value}, {&a, &b},
                     [a, b, a_to_b, b_to_a, na, nb](std::span<const double> g, Tape& t) {
                       std::vector<double> ga(3 * na, 0.0), gb(3 * nb, 0.0);
                       const double sa = 2.0 * g[0] / static_cast<double>(na);
                       const double sb = 2.0 * g[0] / static_cast<double>(nb);
                       for (std::size_t i = 0; i < na; ++i) {
                         const auto j = a_to_b[i];
                         for (int c = 0; c < 3; ++c) {
                           const double d = sa * (a[3 * i + c] - b[3 * j + c]);
                           ga[3 * i + c] += d;
                           gb[3 * j + c] -= d;
                         }
                       }
                       for (std::size_t j = 0; j < nb; ++j) {
                         const auto i = b_to_a[j];
                         for (int c = 0; c < 3; ++c) {
                           const double d = sb * (b[3 * j + c] - a[3 * i + c]);
                           gb[3 * j + c] += d;
                           ga[3 * i + c] -= d;
                         }
                       }
                       t.accumulate(a, ga);
                       t.accumulate(b, gb);
                     });
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw ContractError("chamfer: empty point set");
  Tape tape;
  return chamfer(tape, to_tensor(a), to_tensor(b)).item();
}

double hausdorff_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw ContractError("hausdorff: empty point set");
  const auto fa = a.flat(), fb = b.flat();
  const auto a_to_b = nearest(fb, fa);
  const auto b_to_a = nearest(fa, fb);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, squared_distance3(&fa[3 * i], &fb[3 * a_to_b[i]]));
  for (std::size_t j = 0; j < b.size(); ++j) worst = std::max(worst, squared_distance3(&fb[3 * j], &fa[3 * b_to_a[j]]));
  return std::sqrt(worst);
}

Tensor repulsion(Tape& tape, const Tensor& points, std::size_t k, double h) {
  require_points(points, "repulsion");
  const auto m = points.dim(0);
  if (k < 1 || k >= m) {
    throw ContractError("repulsion: K=" + std::to_string(k) + " must be in [1, " + std::to_string(m) + ")");
  }
  if (!(h > 0.0)) throw ContractError("repulsion: radius must be positive");
  const auto table = knn(points.data(), points.data(), 3, k + 1);
  std::vector<std::size_t> pairs;  // (i, j) flattened
  pairs.reserve(2 * m * k);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t taken = 0;
    for (std::size_t c = 0; c <= k && taken < k; ++c) {
      const auto j = table(i, c);
      if (j == i) continue;
      pairs.push_back(i);
      pairs.push_back(j);
      ++taken;
    }
  }
  const double inv_h2 = 1.0 / (h * h);
  const double norm = 1.0 / static_cast<double>(m * k);
  double total = 0.0;
  for (std::size_t p = 0; p < pairs.size(); p += 2) {
    const double d = std::sqrt(squared_distance3(points.ptr() + 3 * pairs[p], points.ptr() + 3 * pairs[p + 1]));
    total += -d * std::exp(-d * d * inv_h2);
  }
  return tape.record("repulsion", {1}, std::vector<double>{total * norm}, {&points},
                     [points, pairs, inv_h2, norm](std::span<const double> g, Tape& t) {
                       auto gp = t.grad_buffer(points);
                       for (std::size_t p = 0; p < pairs.size(); p += 2) {
                         const auto i = pairs[p], j = pairs[p + 1];
                         const double d2 = squared_distance3(points.ptr() + 3 * i, points.ptr() + 3 * j);
                         if (d2 == 0.0) continue;
                         const double d = std::sqrt(d2);
                         // d/dd [-d exp(-d^2/h^2)] = exp(-d^2/h^2) (2 d^2/h^2 - 1)
                         const double slope = std::exp(-d2 * inv_h2) * (2.0 * d2 * inv_h2 - 1.0);
                         const double s = g[0] * norm * slope / d;
                         for (int c = 0; c < 3; ++c) {
                           const double diff = s * (points[3 * i + c] - points[3 * j + c]);
                           gp[3 * i + c] += diff;
                           gp[3 * j + c] -= diff;
                         }
                       }
                     });
}

Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  // Voronoi-region walk over vertices, edges, then the face.
  const Point3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Point3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));

  const Point3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }

  const double denom = va + vb + vc;
  if (denom == 0.0) {
    // Degenerate (collinear) triangle: nearest of its three edges.
    Point3 best = a;
    for (const auto& [s, e] : {std::pair{a, b}, std::pair{b, c}, std::pair{a, c}}) {
      const Point3 se = e - s;
      const double len2 = se.squaredNorm();
      const double tt = len2 > 0.0 ? std::clamp((p - s).dot(se) / len2, 0.0, 1.0) : 0.0;
      const Point3 q = s + tt * se;
      if ((q - p).squaredNorm() < (best - p).squaredNorm()) best = q;
    }
    return best;
  }
  const double v = vb / denom, w = vc / denom;
  return a + ab * v + ac * w;
}

double point_to_surface(const PointCloud& cloud, const Mesh& mesh) {
  if (mesh.triangles.empty()) throw ContractError("point_to_surface: mesh has no triangles");
  if (cloud.empty()) throw ContractError("point_to_surface: empty point set");
  double total = 0.0;
  for (const auto& p : cloud.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& tri : mesh.triangles) {
      const Point3 q = closest_point_on_triangle(p, mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
      best = std::min(best, (q - p).squaredNorm());
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(cloud.size());
}

void LossConfig::validate(std::size_t levels) const {
  if (alphas.size() != levels) {
    throw ContractError("loss config: " + std::to_string(alphas.size()) + " scale weights for " +
                        std::to_string(levels) + " scales");
  }
  bool any = false;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("loss config: scale weights must lie in [0,1]");
    any = any || a > 0.0;
  }
  if (!any) throw ContractError("loss config: at least one scale must be supervised");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("loss config: lambda must lie in [0,1]");
  if (repulsion_k < 1) throw ContractError("loss config: repulsion K must be >= 1");
  if (!(repulsion_h > 0.0)) throw ContractError("loss config: repulsion radius must be positive");
}

std::vector<double> default_alphas(std::size_t levels) {
  if (levels == 0) throw ContractError("default_alphas: need at least one level");
  if (levels == 1) return {1.0};
  if (levels == 2) return {0.6, 1.0};
  std::vector<double> alphas(levels, 0.0);
  alphas[levels - 3] = 0.6;
  alphas[levels - 2] = 0.8;
  alphas[levels - 1] = 1.0;
  return alphas;
}

JointLoss joint_loss(Tape& tape, const Tensor& gt, const std::vector<Tensor>& predictions, const LossConfig& cfg) {
  cfg.validate(predictions.size());
  JointLoss out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Tensor cd = chamfer(tape, gt, predictions[i]);
    out.chamfer.push_back(cd.item());
    if (cfg.alphas[i] == 0.0) continue;
    Tensor term = cd;
    if (cfg.lambda > 0.0) {
      term = add(tape, term, scale(tape, repulsion(tape, predictions[i], cfg.repulsion_k, cfg.repulsion_h), cfg.lambda));
    }
    term = scale(tape, term, cfg.alphas[i]);
    out.total = out.total.empty() ? term : add(tape, out.total, term);
  }
  return out;
}

}  // namespace bimspu
