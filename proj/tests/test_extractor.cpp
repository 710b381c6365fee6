#include <doctest.h>

#include <cmath>

#include "bimspu/extractor.hpp"

using namespace bimspu;

namespace {

Tensor random_rows(std::size_t n, std::size_t c, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n * c);
  for (auto& x : v) x = u(rng);
  return Tensor({n, c}, std::move(v));
}

Tensor random_points(std::size_t n, Rng& rng) { return random_rows(n, 3, rng); }

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const auto c = t.dim(1);
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = t.at(perm[i], j);
  }
  return Tensor(t.shape(), std::move(out));
}

ExtractorConfig desk() {
  ExtractorConfig c;
  c.entry_channels = 8;
  c.growth = 24;
  c.units = 3;
  c.k = 16;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("edge features") {
  Tape tape;
  auto e = edge_features(tape, Tensor({2, 1}, {1, 3}), IndexTable{{1}, {0}});
  CHECK(e.shape() == Shape{2, 1, 2});
  CHECK(std::vector<double>(e.data().begin(), e.data().end()) == std::vector<double>{2, 1, -2, 3});

  auto self = edge_features(tape, Tensor({2, 2}, {1, 2, 3, 4}), IndexTable{{0}, {1}});
  CHECK(self[0] == 0.0);
  CHECK(self[1] == 0.0);
  CHECK(edge_features(tape, Tensor::zeros({5, 3}), IndexTable(5, 4)).shape() == Shape{5, 4, 6});
}

TEST_CASE("edge conv unit shape and row equivariance") {
  Rng rng(1);
  ParamStore store;
  EdgeConvUnit unit{make_linear(store, "e1", 8, 12, rng), make_linear(store, "e2", 12, 12, rng)};
  const Tensor f = random_rows(10, 4, rng);
  for (std::size_t k : {1u, 3u, 10u}) {
    Tape tape;
    CHECK(dense_edge_conv_unit(tape, f, k, unit, store.values()).shape() == Shape{10, 24});
  }
  std::vector<std::size_t> perm = {3, 7, 0, 9, 1, 5, 2, 8, 6, 4};
  Tape t1, t2;
  auto out = dense_edge_conv_unit(t1, f, 4, unit, store.values());
  auto out_p = dense_edge_conv_unit(t2, permute_rows(f, perm), 4, unit, store.values());
  CHECK(max_abs_diff(out_p, permute_rows(out, perm)) <= 1e-9);
  Tape t3;
  CHECK_THROWS_AS(dense_edge_conv_unit(t3, f, 11, unit, store.values()), ContractError);
}

TEST_CASE("edge conv unit with k = N maxes over every row") {
  Rng rng(2);
  ParamStore store;
  EdgeConvUnit unit{make_linear(store, "e1", 6, 4, rng), make_linear(store, "e2", 4, 4, rng)};
  const Tensor f = random_rows(5, 3, rng);
  Tape tape;
  const auto out = dense_edge_conv_unit(tape, f, 5, unit, store.values());
  REQUIRE(out.shape() == Shape{5, 8});

  auto layer = [&](const Linear& l, const std::vector<double>& x) {
    const auto& w = store.value(l.weight);
    const auto& b = store.value(l.bias);
    std::vector<double> y(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += x[i] * w[i * l.out + o];
      y[o] = std::max(acc, 0.0);
    }
    return y;
  };
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> best(8, -1e300);
    for (std::size_t j = 0; j < 5; ++j) {
      std::vector<double> e(6);
      for (std::size_t c = 0; c < 3; ++c) {
        e[c] = f.at(j, c) - f.at(r, c);
        e[3 + c] = f.at(r, c);
      }
      const auto h1 = layer(unit.edge1, e);
      const auto h2 = layer(unit.edge2, h1);
      for (std::size_t c = 0; c < 4; ++c) {
        best[c] = std::max(best[c], h1[c]);
        best[4 + c] = std::max(best[4 + c], h2[c]);
      }
    }
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out.at(r, c) - best[c]) <= 1e-12);
  }
}

TEST_CASE("extractor channel budget") {
  Rng rng(3);
  ExtractorConfig full;
  CHECK(full.output_channels() == 648);
  CHECK(full.entry_channels + full.units * full.growth == 648);
  CHECK(desk().output_channels() == 80);

  ParamStore store;
  auto ex = make_extractor(store, full, rng);
  Tape tape;
  auto f = extract_features(tape, random_points(20, rng), ex, store.values());
  CHECK(f.shape() == Shape{20, 648});

  ExtractorConfig odd = desk();
  odd.growth = 25;
  ParamStore s2;
  CHECK_THROWS_AS(make_extractor(s2, odd, rng), ContractError);
  ParamStore s3;
  auto small = make_extractor(s3, desk(), rng);
  Tape t2;
  CHECK_THROWS_AS(extract_features(t2, random_points(10, rng), small, s3.values()), ContractError);
}

TEST_CASE("extractor is permutation equivariant") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    ParamStore store;
    auto ex = make_extractor(store, desk(), rng);
    auto p = random_points(48, rng);
    std::vector<std::size_t> perm(48);
    for (std::size_t i = 0; i < 48; ++i) perm[i] = (i * 17 + 5) % 48;
    Tape t1, t2;
    auto f = extract_features(t1, p, ex, store.values());
    auto fp = extract_features(t2, permute_rows(p, perm), ex, store.values());
    CHECK(max_abs_diff(fp, permute_rows(f, perm)) <= 1e-9);
  }
}

TEST_CASE("extractor sees absolute coordinates") {
  Rng rng(4);
  ParamStore store;
  auto ex = make_extractor(store, desk(), rng);
  auto p = random_points(32, rng);
  std::vector<double> shifted(p.data().begin(), p.data().end());
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i % 3 == 0 ? 0.3 : -0.2);
  Tape t1, t2;
  auto a = extract_features(t1, p, ex, store.values());
  auto b = extract_features(t2, Tensor(p.shape(), shifted), ex, store.values());
  CHECK(max_abs_diff(a, b) > 1e-3);
}
