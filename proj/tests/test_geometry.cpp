#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "bimspu/geometry.hpp"

using namespace bimspu;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = Point3(u(rng), u(rng), u(rng));
  return PointCloud(std::move(pts));
}

PointCloud sphere_cloud(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = Point3(g(rng), g(rng), g(rng)).normalized();
  return PointCloud(std::move(pts));
}

// Sorts every reference index by (squared distance, index) and keeps k.
std::vector<std::size_t> knn_oracle(const PointCloud& ref, const Point3& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < ref.size(); ++i) all.push_back({(ref[i] - q).squaredNorm(), i});
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
  return out;
}

std::vector<std::size_t> fps_oracle(const PointCloud& c, std::size_t m, std::size_t start) {
  std::vector<std::size_t> sel{start};
  while (sel.size() < m) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (auto s : sel) d = std::min(d, (c[i] - c[s]).squaredNorm());
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    sel.push_back(arg);
  }
  return sel;
}

std::vector<std::size_t> row(const IndexTable& t, std::size_t r) {
  return {t.data.begin() + static_cast<long>(r * t.cols), t.data.begin() + static_cast<long>((r + 1) * t.cols)};
}

Mesh unit_square() {
  Mesh m;
  m.vertices = {Point3(0, 0, 0), Point3(1, 0, 0), Point3(1, 1, 0), Point3(0, 1, 0)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

double min_pairwise(const PointCloud& c) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) best = std::min(best, (c[i] - c[j]).norm());
  }
  return best;
}

}  // namespace

TEST_CASE("knn hand examples") {
  PointCloud ref({Point3(0, 0, 0), Point3(1, 0, 0), Point3(5, 0, 0)});
  CHECK(row(knn(ref, PointCloud({Point3(0.9, 0, 0)}), 2), 0) == std::vector<std::size_t>{1, 0});
  CHECK(row(knn(ref, PointCloud({Point3(0.9, 0, 0)}), 3), 0) == std::vector<std::size_t>{1, 0, 2});
  PointCloud tie({Point3(-1, 0, 0), Point3(1, 0, 0)});
  CHECK(row(knn(tie, PointCloud({Point3::Zero()}), 1), 0) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(knn(tie, tie, 3), ContractError);
}

TEST_CASE("self knn includes the point itself first") {
  Rng rng(4);
  auto c = random_cloud(30, rng);
  auto t = knn(c, c, 4);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(t(i, 0) == i);
}

TEST_CASE("knn agrees with brute force on random instances") {
  Rng rng(21);
  std::uniform_int_distribution<std::size_t> size(1, 128);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = size(rng), q = size(rng);
    auto ref = random_cloud(m, rng);
    // Snap to a coarse lattice half the time so exact distance ties occur.
    if (trial % 2) {
      for (auto& p : ref.points) p = (p * 3).array().round().matrix() / 3;
    }
    auto qs = random_cloud(q, rng);
    if (trial % 2) {
      for (auto& p : qs.points) p = (p * 3).array().round().matrix() / 3;
    }
    const auto k = std::min<std::size_t>(m, 1 + trial % 9);
    auto t = knn(ref, qs, k);
    for (std::size_t i = 0; i < q; ++i) REQUIRE(row(t, i) == knn_oracle(ref, qs[i], k));
  }
}

TEST_CASE("grid knn matches brute force exactly") {
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    auto ref = random_cloud(kGridThreshold + 500, rng);
    if (trial == 1) {
      for (auto& p : ref.points) p = (p * 8).array().round().matrix() / 8;
    }
    if (trial == 2) ref = sphere_cloud(4000, rng);
    auto qs = random_cloud(200, rng, -1.3, 1.3);
    const auto flat_r = ref.flat(), flat_q = qs.flat();
    const auto brute = knn_brute_force(flat_r, flat_q, 3, 16);
    const auto grid = knn_grid(flat_r, flat_q, 16);
    CHECK(brute.data == grid.data);
    CHECK(knn(ref, qs, 16).data == brute.data);
  }
}

TEST_CASE("knn_rows works in feature space") {
  Tensor rows({4, 2}, {0, 0, 10, 0, 1, 0, 0, 3});
  auto t = knn_rows(rows, 2);
  CHECK(row(t, 0) == std::vector<std::size_t>{0, 2});
  CHECK(row(t, 1) == std::vector<std::size_t>{1, 2});
  CHECK(row(t, 3) == std::vector<std::size_t>{3, 0});
}

TEST_CASE("farthest point sampling examples") {
  PointCloud line({Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0), Point3(3, 0, 0)});
  CHECK(farthest_point_sample(line, 1, 2) == std::vector<std::size_t>{2});
  CHECK(farthest_point_sample(line, 3, 0) == std::vector<std::size_t>{0, 3, 1});
  auto all = farthest_point_sample(line, 4, 0);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 4);
  CHECK_THROWS_AS(farthest_point_sample(line, 0), ContractError);
  CHECK_THROWS_AS(farthest_point_sample(line, 5), ContractError);
}

TEST_CASE("farthest point sampling agrees with brute force and is prefix-stable") {
  Rng rng(33);
  std::uniform_int_distribution<std::size_t> size(2, 256);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = size(rng);
    auto c = random_cloud(n, rng);
    if (trial % 3 == 0) {
      for (auto& p : c.points) p = (p * 2).array().round().matrix() / 2;
    }
    const auto m = 1 + trial % std::min<std::size_t>(n, 40);
    const auto start = static_cast<std::size_t>(trial) % n;
    const auto got = farthest_point_sample(c, m, start);
    REQUIRE(got == fps_oracle(c, m, start));
    const auto longer = farthest_point_sample(c, std::min(n, m + 5), start);
    CHECK(std::equal(got.begin(), got.end(), longer.begin()));
  }
}

TEST_CASE("random subsample") {
  Rng rng(1);
  auto c = random_cloud(10, rng);
  Rng a(9), b(9);
  CHECK(random_subsample(c, 4, a) == random_subsample(c, 4, b));
  auto full = random_subsample(c, 10, a);
  CHECK(std::set<std::size_t>(full.begin(), full.end()).size() == 10);
  CHECK_THROWS_AS(random_subsample(c, 11, a), ContractError);

  // Each of 4 indices is drawn with probability 1/4; the window is ~5 sigma wide.
  auto four = random_cloud(4, rng);
  std::array<int, 4> counts{};
  for (int i = 0; i < 10000; ++i) ++counts[random_subsample(four, 1, rng)[0]];
  for (int n : counts) {
    CHECK(n >= 2300);
    CHECK(n <= 2700);
  }
}

TEST_CASE("uniform mesh sampling") {
  Rng rng(2);
  Mesh tri;
  tri.vertices = {Point3(0.3, -1, 2), Point3(1, 2, -0.5), Point3(-2, 0.5, 1)};
  tri.triangles = {{0, 1, 2}};
  const Point3 n = (tri.vertices[1] - tri.vertices[0]).cross(tri.vertices[2] - tri.vertices[0]).normalized();
  for (const auto& p : sample_mesh_uniform(tri, 500, rng).points) CHECK(std::abs(n.dot(p - tri.vertices[0])) < 1e-12);

  // Areas 1 and 3: the larger triangle gets 75% of the samples.
  Mesh two;
  two.vertices = {Point3(0, 0, 0), Point3(2, 0, 0), Point3(0, 1, 0), Point3(10, 0, 0), Point3(12, 0, 0),
                  Point3(10, 3, 0)};
  two.triangles = {{0, 1, 2}, {3, 4, 5}};
  auto s = sample_mesh_uniform(two, 10000, rng);
  const auto big = std::count_if(s.points.begin(), s.points.end(), [](const Point3& p) { return p.x() >= 5; });
  CHECK(std::abs(static_cast<double>(big) / 10000.0 - 0.75) <= 0.03);

  auto sq = sample_mesh_uniform(unit_square(), 10000, rng);
  Point3 mean = Point3::Zero();
  for (const auto& p : sq.points) mean += p;
  mean /= 10000.0;
  CHECK((mean - Point3(0.5, 0.5, 0)).norm() <= 0.02);

  Mesh flat;
  flat.vertices = {Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0)};
  flat.triangles = {{0, 1, 2}};
  CHECK_THROWS_AS(sample_mesh_uniform(flat, 10, rng), ContractError);
}

TEST_CASE("poisson-like sampling is more uniform than plain sampling") {
  std::vector<double> fps_min, plain_min;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed + 1000);
    auto thinned = poisson_like_sample(unit_square(), 100, 3, a);
    CHECK(thinned.size() == 100);
    fps_min.push_back(min_pairwise(thinned));
    plain_min.push_back(min_pairwise(sample_mesh_uniform(unit_square(), 100, b)));
  }
  std::nth_element(fps_min.begin(), fps_min.begin() + 10, fps_min.end());
  std::nth_element(plain_min.begin(), plain_min.begin() + 10, plain_min.end());
  CHECK(fps_min[10] > plain_min[10]);
  Rng rng(0);
  CHECK_THROWS_AS(poisson_like_sample(unit_square(), 10, 1, rng), ContractError);
}

TEST_CASE("normalization") {
  PointCloud two({Point3(0, 0, 0), Point3(0, 0, 2)});
  auto [n, rec] = normalize_to_unit_sphere(two);
  CHECK(n[0] == Point3(0, 0, -1));
  CHECK(n[1] == Point3(0, 0, 1));
  CHECK(rec.center == Point3(0, 0, 1));
  CHECK(rec.radius == 1.0);

  PointCloud same({Point3(2, 2, 2), Point3(2, 2, 2)});
  CHECK(normalize_to_unit_sphere(same).second.radius == 1.0);

  Rng rng(3);
  auto c = random_cloud(200, rng, -50, 120);
  auto [nc, r] = normalize_to_unit_sphere(c);
  double max_norm = 0;
  for (const auto& p : nc.points) max_norm = std::max(max_norm, p.norm());
  CHECK(max_norm <= 1.0 + 1e-15);
  auto back = denormalize(nc, r);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK((back[i] - c[i]).norm() <= 1e-12 * c[i].norm() + 1e-12);

  PointCloud centered({Point3(0.5, 0, 0), Point3(-0.5, 0, 0)});
  auto [cn, cr] = normalize_to_unit_sphere(centered);
  CHECK(cr.center.norm() == 0.0);
  CHECK(cr.radius == 0.5);
}

TEST_CASE("augmentation") {
  Rng rng(6);
  auto in = random_cloud(20, rng), gt = random_cloud(40, rng);
  auto id = augment(in, gt, rng, AugmentConfig::identity());
  for (std::size_t i = 0; i < in.size(); ++i) CHECK((id.input[i] - in[i]).norm() <= 1e-15);

  auto a = augment(in, gt, rng, AugmentConfig{});
  CHECK(a.scale >= 0.8);
  CHECK(a.scale <= 1.2);
  CHECK((a.rotation * a.rotation.transpose() - Eigen::Matrix3d::Identity()).norm() <= 1e-12);
  CHECK(a.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double d0 = (gt[i] - gt[j]).norm();
      CHECK(std::abs((a.gt[i] - a.gt[j]).norm() - a.scale * d0) <= 1e-12);
    }
  }
  // The same transform reaches both clouds.
  for (std::size_t i = 0; i < in.size(); ++i) {
    CHECK((a.input[i] - (a.scale * a.rotation * in[i] + a.shift)).norm() <= 1e-12);
  }
  AugmentConfig rot_only{true, 1.0, 1.0, 0.0};
  auto r = augment(in, gt, rng, rot_only);
  CHECK(std::abs((r.input[0] - r.input[1]).norm() - (in[0] - in[1]).norm()) <= 1e-12);
  CHECK_THROWS_AS(augment(in, gt, rng, AugmentConfig{true, 0.0, 1.0, 0.0}), ContractError);
  CHECK_THROWS_AS(augment(in, gt, rng, AugmentConfig{true, 1.0, 1.0, -1.0}), ContractError);
}

TEST_CASE("patch extraction") {
  Rng rng(10);
  auto c = random_cloud(50, rng);
  auto whole = extract_patches(c, 50, 1);
  REQUIRE(whole.size() == 1);
  CHECK(std::set<std::size_t>(whole[0].indices.begin(), whole[0].indices.end()).size() == 50);

  auto sphere = sphere_cloud(1024, rng);
  auto patches = extract_patches(sphere, 256, 8);
  CHECK(patches.size() == 8);
  for (const auto& p : patches) {
    CHECK(p.indices.size() == 256);
    CHECK(p.indices.front() == p.seed);
  }
  CHECK(uncovered_points(patches, sphere.size()).empty());
  CHECK_THROWS_AS(extract_patches(c, 51, 1), ContractError);
  CHECK(default_seed_count(2048, 64) == 96);
  CHECK(default_seed_count(100, 64) == 5);
}

TEST_CASE("merge patches") {
  Rng rng(12);
  auto single = random_cloud(30, rng);
  auto merged = merge_patches({single}, 30);
  CHECK(merged.size() == 30);
  std::set<std::array<double, 3>> orig, got;
  for (const auto& p : single.points) orig.insert({p.x(), p.y(), p.z()});
  for (const auto& p : merged.points) got.insert({p.x(), p.y(), p.z()});
  CHECK(orig == got);

  auto a = random_cloud(100, rng, 0, 0.1), b = random_cloud(100, rng, 5, 5.1);
  auto two = merge_patches({a, b}, 2);
  REQUIRE(two.size() == 2);
  CHECK(((two[0].x() < 1) != (two[1].x() < 1)));
  CHECK_THROWS_AS(merge_patches({a}, 101), ContractError);
}
