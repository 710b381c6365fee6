#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "bimspu/gradcheck.hpp"
#include "bimspu/tensor.hpp"

using namespace bimspu;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random(Shape shape, std::mt19937_64& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Plain central difference of a scalar function of one tensor.
std::vector<double> numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  std::vector<double> g(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    auto plus = values(x), minus = values(x);
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(Tensor(x.shape(), plus)) - f(Tensor(x.shape(), minus))) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("tensor construction checks shape against data") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ContractError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), ContractError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_FALSE(t.requires_grad());
}

TEST_CASE("linear forward") {
  Tape tape;
  Tensor id = linear(tape, Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}));
  CHECK(values(id) == std::vector<double>{1, 2});
  Tensor y = linear(tape, Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 2}, {2, 0, 0, 3}), Tensor({2}, {1, 1}));
  CHECK(values(y) == std::vector<double>{3, 1, 1, 4});
}

TEST_CASE("linear rejects mismatched shapes naming both") {
  Tape tape;
  try {
    linear(tape, Tensor::zeros({3, 2}), Tensor::zeros({3, 4}), Tensor::zeros({4}));
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3,2]") != std::string::npos);
    CHECK(msg.find("[3,4]") != std::string::npos);
  }
}

TEST_CASE("linear bias gradient counts rows") {
  Tape tape;
  std::mt19937_64 rng(1);
  auto x = random({4, 3}, rng);
  auto w = random({3, 2}, rng);
  auto b = tape.watch(Tensor::zeros({2}));
  auto loss = sum(tape, linear(tape, x, w, b));
  tape.backward(loss);
  CHECK(tape.grad(b) == std::vector<double>{4, 4});
}

TEST_CASE("relu forward and mask") {
  Tape tape;
  auto x = tape.watch(Tensor({3}, {-1, 0, 2}));
  auto y = relu(tape, x);
  CHECK(values(y) == std::vector<double>{0, 0, 2});
  tape.backward(sum(tape, y));
  CHECK(tape.grad(x) == std::vector<double>{0, 0, 1});

  Tape t2;
  auto x2 = t2.watch(Tensor({2}, {-1, 3}));
  t2.backward(sum(t2, relu(t2, x2)));
  CHECK(t2.grad(x2) == std::vector<double>{0, 1});
}

TEST_CASE("concat_channels") {
  Tape tape;
  CHECK(values(concat_channels(tape, Tensor({1, 1}, {1}), Tensor({1, 1}, {2}))) == std::vector<double>{1, 2});
  auto a = tape.watch(Tensor::filled({4, 3}, 1.0));
  auto b = tape.watch(Tensor::filled({4, 5}, 2.0));
  auto c = concat_channels(tape, a, b);
  CHECK(c.shape() == Shape{4, 8});
  tape.backward(sum(tape, c));
  CHECK(tape.grad(a) == std::vector<double>(12, 1.0));
  CHECK(tape.grad(b) == std::vector<double>(20, 1.0));
  Tape t2;
  CHECK_THROWS_AS(concat_channels(t2, Tensor::zeros({2, 1}), Tensor::zeros({3, 1})), ContractError);
}

TEST_CASE("gather_rows") {
  Tape tape;
  auto g = gather_rows(tape, Tensor({1, 2}, {7, 8}), IndexTable{{0}});
  CHECK(g.shape() == Shape{1, 1, 2});
  CHECK(values(g) == std::vector<double>{7, 8});

  auto x = tape.watch(Tensor({2, 2}, {1, 2, 3, 4}));
  auto dup = gather_rows(tape, x, IndexTable{{0, 0}});
  tape.backward(sum(tape, dup));
  CHECK(tape.grad(x) == std::vector<double>{2, 2, 0, 0});

  Tape t2;
  CHECK(values(gather_rows(t2, Tensor({2, 1}, {5, 6}), IndexTable{{1, 0}})) == std::vector<double>{6, 5});
  CHECK_THROWS_AS(gather_rows(t2, Tensor({2, 1}, {5, 6}), IndexTable{{2}}), ContractError);
}

TEST_CASE("reduce_max_axis1") {
  Tape tape;
  CHECK(values(reduce_max_axis1(tape, Tensor({2, 1, 2}, {1, 2, 3, 4}))) == std::vector<double>{1, 2, 3, 4});
  CHECK(values(reduce_max_axis1(tape, Tensor({1, 2, 2}, {1, 5, 3, 2}))) == std::vector<double>{3, 5});
  auto tie = tape.watch(Tensor({1, 2, 1}, {2, 2}));
  tape.backward(sum(tape, reduce_max_axis1(tape, tie)));
  CHECK(tape.grad(tie) == std::vector<double>{1, 0});
}

TEST_CASE("repeat_rows and group_channels layouts") {
  Tape tape;
  auto x = Tensor({2, 1}, {1, 2});
  CHECK(values(repeat_rows(tape, x, 1)) == values(x));
  CHECK(values(repeat_rows(tape, x, 2)) == std::vector<double>{1, 1, 2, 2});
  CHECK_THROWS_AS(repeat_rows(tape, x, 0), ContractError);

  CHECK(values(group_channels(tape, Tensor({4, 1}, {1, 2, 3, 4}), 2)) == std::vector<double>{1, 2, 3, 4});
  CHECK(group_channels(tape, Tensor({4, 1}, {1, 2, 3, 4}), 2).shape() == Shape{2, 2});
  CHECK_THROWS_AS(group_channels(tape, Tensor::zeros({3, 1}), 2), ContractError);

  // Duplicated parents come back as channel blocks.
  std::mt19937_64 rng(3);
  auto f = random({5, 3}, rng);
  auto round = group_channels(tape, repeat_rows(tape, f, 2), 2);
  REQUIRE(round.shape() == Shape{5, 6});
  for (std::size_t m = 0; m < 5; ++m) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(round.at(m, c) == f.at(m, c));
      CHECK(round.at(m, 3 + c) == f.at(m, c));
    }
  }

  Tape t2;
  auto w = t2.watch(Tensor({2, 1}, {1, 2}));
  t2.backward(sum(t2, repeat_rows(t2, w, 3)));
  CHECK(t2.grad(w) == std::vector<double>{3, 3});
}

TEST_CASE("backward accumulates repeated uses") {
  Tape tape;
  auto x = tape.watch(Tensor({3}, {1, 2, 3}));
  tape.backward(add(tape, sum(tape, x), sum(tape, x)));
  CHECK(tape.grad(x) == std::vector<double>{2, 2, 2});
}

TEST_CASE("backward contract") {
  Tape tape;
  auto x = tape.watch(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(tape.backward(relu(tape, x)), ContractError);
  Tape other;
  auto y = other.watch(Tensor({1}, {1}));
  CHECK_THROWS_AS(tape.backward(sum(other, y)), ContractError);
  auto s = sum(tape, x);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), ContractError);
}

TEST_CASE("composite gradient matches central differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random({5, 4}, rng), w = random({4, 3}, rng), b = random({3}, rng);
    auto f = [&](const Tensor& wv) {
      Tape t;
      return sum(t, relu(t, linear(t, x, wv, b))).item();
    };
    Tape tape;
    auto wt = tape.watch(w);
    tape.backward(sum(tape, relu(tape, linear(tape, x, wt, b))));
    const auto analytic = tape.grad(wt);
    const auto numeric = numeric_grad(f, w);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double err = std::abs(analytic[i] - numeric[i]);
      CHECK((err <= 1e-6 * std::max(std::abs(analytic[i]), std::abs(numeric[i])) || err <= 1e-9));
    }
  }
}

TEST_CASE("weighted_fuse examples") {
  Tape tape;
  auto a = Tensor({1, 2}, {0, 0}), b = Tensor({1, 2}, {4, 4});
  CHECK(values(weighted_fuse(tape, {a, b}, Tensor({2}, {1, 1}), 0.0)) == std::vector<double>{2, 2});
  CHECK(values(weighted_fuse(tape, {a, b}, Tensor({2}, {1, 3}), 0.0)) == std::vector<double>{3, 3});
  auto c = Tensor({1, 2}, {1.25, -7.5});
  CHECK(values(weighted_fuse(tape, {a, c}, Tensor({2}, {-5, 2}), 0.0)) == values(c));
  CHECK_THROWS_AS(weighted_fuse(tape, {a, b}, Tensor({3}, {1, 1, 1}), 0.0), ContractError);
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(5);
  auto x = random({16, 8}, rng), w = random({8, 8}, rng), b = random({8}, rng);
  Tape t1, t2;
  CHECK(values(relu(t1, linear(t1, x, w, b))) == values(relu(t2, linear(t2, x, w, b))));
}

TEST_CASE("gradcheck registry covers every recorded op once") {
  const std::vector<std::string> ops = {"linear",  "relu", "concat_channels", "gather_rows",  "reduce_max_axis1",
                                        "repeat_rows", "group_channels", "reshape", "add", "sub", "scale", "sum",
                                        "weighted_sum", "weighted_fuse", "chamfer", "repulsion"};
  std::vector<std::string> prims;
  std::set<std::string> all;
  for (const auto& c : gradcheck_cases()) {
    CHECK(all.insert(c.name).second);
    if (c.primitive) prims.push_back(c.name);
  }
  std::sort(prims.begin(), prims.end());
  auto expected = ops;
  std::sort(expected.begin(), expected.end());
  CHECK(prims == expected);
  CHECK(all.count("joint_loss") == 1);
}

TEST_CASE("gradcheck reports a corrupted op by name") {
  GradCheckOptions opt;
  opt.seeds = 1;
  opt.only = {"relu", "add", "group_channels"};
  opt.corrupt_op = "group_channels";
  const auto results = run_gradcheck(opt);
  REQUIRE(results.size() == 3);
  for (const auto& r : results) CHECK(r.passed == (r.name != "group_channels"));
  const auto report = format_gradcheck_report(results);
  CHECK(report.find("group_channels\t") != std::string::npos);
  CHECK(report.find("FAIL") != std::string::npos);
}
