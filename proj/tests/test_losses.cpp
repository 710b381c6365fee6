#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "bimspu/losses.hpp"

using namespace bimspu;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

// Brute-force directional terms, written out independently.
double nearest_sq(const Point3& p, const PointCloud& c) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : c.points) best = std::min(best, (p - q).squaredNorm());
  return best;
}

double oracle_chamfer(const PointCloud& a, const PointCloud& b) {
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a.points) ab += nearest_sq(p, b);
  for (const auto& q : b.points) ba += nearest_sq(q, a);
  return ab / a.size() + ba / b.size();
}

double oracle_hausdorff(const PointCloud& a, const PointCloud& b) {
  double h = 0.0;
  for (const auto& p : a.points) h = std::max(h, std::sqrt(nearest_sq(p, b)));
  for (const auto& q : b.points) h = std::max(h, std::sqrt(nearest_sq(q, a)));
  return h;
}

PointCloud rigid(const PointCloud& c, const Eigen::Matrix3d& r, const Point3& t) {
  PointCloud out;
  for (const auto& p : c.points) out.points.push_back(r * p + t);
  return out;
}

Eigen::Matrix3d rotation(double a, double b) {
  Eigen::Matrix3d rz, rx;
  rz << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  rx << 1, 0, 0, 0, std::cos(b), -std::sin(b), 0, std::sin(b), std::cos(b);
  return rz * rx;
}

}  // namespace

TEST_CASE("chamfer and hausdorff hand examples") {
  PointCloud origin({Point3(0, 0, 0)});
  PointCloud far({Point3(3, 4, 0)});
  CHECK(chamfer_distance(origin, far) == doctest::Approx(50.0));
  CHECK(hausdorff_distance(origin, far) == doctest::Approx(5.0));

  PointCloud pair({Point3(0, 0, 0), Point3(1, 0, 0)});
  CHECK(chamfer_distance(pair, origin) == doctest::Approx(0.5));
  CHECK(hausdorff_distance(pair, origin) == doctest::Approx(1.0));

  PointCloud outlier({Point3(0, 0, 0), Point3(10, 0, 0)});
  CHECK(hausdorff_distance(origin, outlier) == doctest::Approx(10.0));
  CHECK(hausdorff_distance(outlier, origin) == doctest::Approx(10.0));
}

TEST_CASE("metrics match brute force on random pairs") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_cloud(1 + trial % 37, rng);
    auto b = random_cloud(1 + (trial * 7) % 53, rng, 2.0);
    const double cd = oracle_chamfer(a, b), hd = oracle_hausdorff(a, b);
    CHECK(std::abs(chamfer_distance(a, b) - cd) <= 1e-12 * std::max(1.0, cd));
    CHECK(std::abs(hausdorff_distance(a, b) - hd) <= 1e-12 * std::max(1.0, hd));
    Tape tape;
    CHECK(std::abs(chamfer(tape, to_tensor(a), to_tensor(b)).item() - cd) <= 1e-12 * std::max(1.0, cd));
  }
}

TEST_CASE("metrics are symmetric, zero on identical clouds and rigid invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_cloud(30, rng), b = random_cloud(45, rng);
    CHECK(chamfer_distance(a, b) == doctest::Approx(chamfer_distance(b, a)).epsilon(1e-12));
    CHECK(hausdorff_distance(a, b) == doctest::Approx(hausdorff_distance(b, a)).epsilon(1e-12));
    CHECK(chamfer_distance(a, a) == 0.0);
    CHECK(hausdorff_distance(a, a) == 0.0);

    const auto r = rotation(0.3 * trial, 1.1 - 0.05 * trial);
    const Point3 t(0.5, -2.0, 0.1 * trial);
    const auto ra = rigid(a, r, t), rb = rigid(b, r, t);
    CHECK(std::abs(chamfer_distance(ra, rb) - chamfer_distance(a, b)) <= 1e-9);
    CHECK(std::abs(hausdorff_distance(ra, rb) - hausdorff_distance(a, b)) <= 1e-9);
  }
}

TEST_CASE("repulsion closed forms") {
  const double h = 0.03;
  for (double d : {0.005, 0.02, 0.05}) {
    Tape tape;
    auto two = repulsion(tape, Tensor({2, 3}, {0, 0, 0, d, 0, 0}), 1, h);
    CHECK(two.item() == doctest::Approx(-d * std::exp(-d * d / (h * h))).epsilon(1e-12));
  }
  // Equilateral triangle, every point sees both others.
  const double s = 0.01;
  Tape tape;
  auto tri = repulsion(tape, Tensor({3, 3}, {0, 0, 0, s, 0, 0, s / 2, s * std::sqrt(3.0) / 2, 0}), 2, h);
  CHECK(tri.item() == doctest::Approx(-s * std::exp(-s * s / (h * h))).epsilon(1e-12));

  // The pair term is stationary at d = h / sqrt(2).
  Tape t2;
  const double d = h / std::sqrt(2.0);
  auto pts = t2.watch(Tensor({2, 3}, {0, 0, 0, d, 0, 0}));
  t2.backward(repulsion(t2, pts, 1, h));
  for (double g : t2.grad(pts)) CHECK(std::abs(g) <= 1e-12);

  Tape t3;
  CHECK_THROWS_AS(repulsion(t3, Tensor::zeros({2, 3}), 2, h), ContractError);
  CHECK_THROWS_AS(repulsion(t3, Tensor::zeros({4, 3}), 1, 0.0), ContractError);
}

TEST_CASE("point to surface distance") {
  Mesh tri;
  tri.vertices = {Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0)};
  tri.triangles = {{0, 1, 2}};
  CHECK(point_to_surface(PointCloud({Point3(0.2, 0.2, 0.7)}), tri) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(point_to_surface(PointCloud({Point3(0.2, 0.2, 0.7), Point3(0.1, 0.1, -0.3)}), tri) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // Points beyond the edges and corners, against a dense sampling of the triangle.
  const int steps = 2000;
  auto dense_distance = [&](const Point3& p) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; i + j <= steps; ++j) {
        const Point3 q(static_cast<double>(i) / steps, static_cast<double>(j) / steps, 0);
        best = std::min(best, (p - q).squaredNorm());
      }
    }
    return std::sqrt(best);
  };
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1.5, 2.5);
  for (int trial = 0; trial < 10; ++trial) {
    const Point3 p(u(rng), u(rng), 0.5 * u(rng));
    const auto c = closest_point_on_triangle(p, tri.vertices[0], tri.vertices[1], tri.vertices[2]);
    CHECK(std::abs((p - c).norm() - dense_distance(p)) <= 1e-3);
    CHECK(std::abs(point_to_surface(PointCloud({p}), tri) - dense_distance(p)) <= 1e-3);
  }
  const Point3 corner(-1, -1, 0);
  CHECK((closest_point_on_triangle(corner, tri.vertices[0], tri.vertices[1], tri.vertices[2]) - Point3(0, 0, 0)).norm() ==
        doctest::Approx(0.0));
}

TEST_CASE("default scale weights") {
  CHECK(default_alphas(1) == std::vector<double>{1.0});
  CHECK(default_alphas(2) == std::vector<double>{0.6, 1.0});
  CHECK(default_alphas(3) == std::vector<double>{0.6, 0.8, 1.0});
  CHECK(default_alphas(4) == std::vector<double>{0.0, 0.6, 0.8, 1.0});
  CHECK(default_alphas(6) == std::vector<double>{0.0, 0.0, 0.0, 0.6, 0.8, 1.0});
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate(2));
  CHECK_THROWS_AS(cfg.validate(3), ContractError);
}

TEST_CASE("joint loss is a weighted sum of scale terms") {
  Rng rng(4);
  const auto gt = to_tensor(random_cloud(32, rng));
  const std::vector<Tensor> preds = {to_tensor(random_cloud(16, rng)), to_tensor(random_cloud(32, rng))};
  LossConfig cfg;
  cfg.alphas = {0.6, 1.0};
  Tape tape;
  const auto loss = joint_loss(tape, gt, preds, cfg);
  REQUIRE(loss.chamfer.size() == 2);
  double expected = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    Tape t;
    const double cd = chamfer(t, gt, preds[i]).item();
    CHECK(loss.chamfer[i] == doctest::Approx(cd).epsilon(1e-12));
    expected += cfg.alphas[i] * (cd + cfg.lambda * repulsion(t, preds[i], cfg.repulsion_k, cfg.repulsion_h).item());
  }
  CHECK(loss.total.item() == doctest::Approx(expected).epsilon(1e-12));

  // Raising a weight on a positive term raises the total.
  double previous = -1.0;
  for (double a : {0.0, 0.3, 0.6, 0.9}) {
    cfg.alphas = {a, 1.0};
    cfg.lambda = 0.0;
    Tape t;
    const double total = joint_loss(t, gt, preds, cfg).total.item();
    CHECK(total > previous);
    previous = total;
  }
}

TEST_CASE("reconstruction head") {
  Rng rng(5);
  ParamStore store;
  auto heads = make_heads(store, 6, 4, 2, rng);
  REQUIRE(heads.size() == 2);
  Tape tape;
  std::vector<double> f(10 * 6, 0.25);
  CHECK(reconstruct(tape, Tensor({10, 6}, f), heads[0], store.values()).shape() == Shape{10, 3});
  store.set(heads[1].out.weight, Tensor::zeros({4, 3}));
  store.set(heads[1].out.bias, Tensor::zeros({3}));
  auto zero = reconstruct(tape, Tensor({10, 6}, f), heads[1], store.values());
  for (std::size_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);
  CHECK_THROWS_AS(reconstruct(tape, Tensor::zeros({10, 5}), heads[0], store.values()), ContractError);
}
