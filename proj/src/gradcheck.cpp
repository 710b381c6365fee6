#include "bimspu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "bimspu/model.hpp"

namespace bimspu {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(n);
  for (auto& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data));
}

IndexTable random_index(std::size_t rows, std::size_t cols, std::size_t range, Rng& rng) {
  IndexTable t(rows, cols);
  std::uniform_int_distribution<std::size_t> u(0, range - 1);
  for (auto& v : t.data) v = u(rng);
  return t;
}

/// Random-coefficient scalar readout so every output element has a distinct weight.
struct Readout {
  Tensor coeffs;
  Tensor operator()(Tape& tape, const Tensor& x) const { return weighted_sum(tape, x, coeffs); }
};

Readout readout(const Shape& shape, Rng& rng) { return {random_tensor(shape, rng)}; }

/// Parameters of a freshly built structure, jittered so that zero biases and
/// equal fusion weights do not hide anything.
std::vector<Tensor> jittered(const ParamStore& store, Rng& rng) {
  std::vector<Tensor> out;
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (const auto& v : store.values()) {
    std::vector<double> data(v.data().begin(), v.data().end());
    for (auto& x : data) x += u(rng);
    out.emplace_back(v.shape(), std::move(data));
  }
  return out;
}

ExtractorConfig small_extractor() {
  ExtractorConfig c;
  c.entry_channels = 8;
  c.growth = 24;
  c.units = 3;
  c.k = 4;
  return c;
}

ModelConfig small_model() {
  ModelConfig m;
  m.extractor = small_extractor();
  m.channels = 32;
  m.levels = 2;
  m.head_hidden = 32;
  return m;
}

std::span<const Tensor> tail(const std::vector<Tensor>& v, std::size_t from = 1) {
  return std::span<const Tensor>(v).subspan(from);
}

std::vector<GradCheckCase> build_cases() {
  std::vector<GradCheckCase> cases;
  auto prim = [&](std::string name, std::function<GradProblem(std::uint64_t)> fn) {
    cases.push_back({std::move(name), true, std::move(fn)});
  };
  auto comp = [&](std::string name, std::function<GradProblem(std::uint64_t)> fn) {
    cases.push_back({std::move(name), false, std::move(fn)});
  };

  prim("linear", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r1 = readout({6, 4}, rng), r2 = readout({6, 4}, rng);
    return GradProblem{{random_tensor({6, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng),
                        random_tensor({5, 4}, rng)},
                       [r1, r2](Tape& t, const std::vector<Tensor>& in) {
                         return add(t, r1(t, linear(t, in[0], in[1], in[2])), r2(t, linear(t, in[0], in[3])));
                       }};
  });
  prim("relu", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({7, 3}, rng);
    return GradProblem{{random_tensor({7, 3}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, relu(t, in[0])); }};
  });
  prim("concat_channels", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({4, 9}, rng);
    return GradProblem{{random_tensor({4, 3}, rng), random_tensor({4, 5}, rng), random_tensor({4, 1}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, concat_channels(t, in)); }};
  });
  prim("gather_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto idx = random_index(5, 4, 6, rng);
    auto r = readout({5, 4, 3}, rng);
    return GradProblem{{random_tensor({6, 3}, rng)},
                       [r, idx](Tape& t, const std::vector<Tensor>& in) { return r(t, gather_rows(t, in[0], idx)); }};
  });
  prim("reduce_max_axis1", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({5, 3}, rng);
    return GradProblem{{random_tensor({5, 4, 3}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, reduce_max_axis1(t, in[0])); }};
  });
  prim("repeat_rows", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({12, 2}, rng);
    return GradProblem{{random_tensor({4, 2}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, repeat_rows(t, in[0], 3)); }};
  });
  prim("group_channels", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({3, 4}, rng);
    return GradProblem{{random_tensor({6, 2}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, group_channels(t, in[0], 2)); }};
  });
  prim("reshape", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({2, 6}, rng);
    return GradProblem{{random_tensor({4, 3}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, reshape(t, in[0], {2, 6})); }};
  });
  prim("add", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({3, 3}, rng);
    return GradProblem{{random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, add(t, in[0], in[1])); }};
  });
  prim("sub", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({3, 3}, rng);
    return GradProblem{{random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, sub(t, in[0], in[1])); }};
  });
  prim("scale", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({3, 2}, rng);
    return GradProblem{{random_tensor({3, 2}, rng)},
                       [r](Tape& t, const std::vector<Tensor>& in) { return r(t, scale(t, in[0], -1.7)); }};
  });
  prim("sum", [](std::uint64_t seed) {
    Rng rng(seed);
    return GradProblem{{random_tensor({4, 3}, rng)},
                       [](Tape& t, const std::vector<Tensor>& in) { return sum(t, in[0]); }};
  });
  prim("weighted_sum", [](std::uint64_t seed) {
    Rng rng(seed);
    auto c = random_tensor({4, 3}, rng);
    return GradProblem{{random_tensor({4, 3}, rng)},
                       [c](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, in[0], c); }};
  });
  prim("weighted_fuse", [](std::uint64_t seed) {
    Rng rng(seed);
    auto r = readout({4, 3}, rng);
    // One weight sits below zero so the dead relu branch is covered too.
    Tensor w({3}, {0.7, -0.4, 1.3});
    return GradProblem{{random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), w},
                       [r](Tape& t, const std::vector<Tensor>& in) {
                         return r(t, weighted_fuse(t, {in[0], in[1], in[2]}, in[3], 1e-4));
                       }};
  });
  prim("chamfer", [](std::uint64_t seed) {
    Rng rng(seed);
    return GradProblem{{random_tensor({7, 3}, rng), random_tensor({10, 3}, rng)},
                       [](Tape& t, const std::vector<Tensor>& in) { return chamfer(t, in[0], in[1]); }};
  });
  prim("repulsion", [](std::uint64_t seed) {
    Rng rng(seed);
    // Spread comparable to h so the Gaussian weight is not vanishing.
    return GradProblem{{random_tensor({12, 3}, rng, 0.0, 0.06)},
                       [](Tape& t, const std::vector<Tensor>& in) { return repulsion(t, in[0], 5, 0.03); }};
  });

  comp("edge_features", [](std::uint64_t seed) {
    Rng rng(seed);
    auto idx = random_index(6, 3, 6, rng);
    auto r = readout({6, 3, 8}, rng);
    return GradProblem{{random_tensor({6, 4}, rng)},
                       [r, idx](Tape& t, const std::vector<Tensor>& in) { return r(t, edge_features(t, in[0], idx)); }};
  });
  comp("residual_block", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    auto block = make_residual_block(*store, "rb", 4, 5, true, rng);
    auto r = readout({8, 5}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({8, 4}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, block, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, residual_block(t, in[0], block, tail(in)));
    };
    return p;
  });
  comp("up_operator", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    UpOp op{make_residual_block(*store, "up", 7, 6, true, rng)};
    auto r = readout({10, 6}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({5, 6}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, op, r](Tape& t, const std::vector<Tensor>& in) { return r(t, up_operator(t, in[0], op, tail(in))); };
    return p;
  });
  comp("down_operator", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    DownOp op{make_residual_block(*store, "down", 12, 6, true, rng)};
    auto r = readout({4, 6}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({8, 6}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, op, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, down_operator(t, in[0], op, tail(in)));
    };
    return p;
  });
  comp("edge_conv_unit", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    EdgeConvUnit unit{make_linear(*store, "e1", 8, 6, rng), make_linear(*store, "e2", 6, 6, rng)};
    auto r = readout({8, 12}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({8, 4}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, unit, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, dense_edge_conv_unit(t, in[0], 4, unit, tail(in)));
    };
    return p;
  });
  comp("extract_features", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    auto ex = make_extractor(*store, small_extractor(), rng);
    auto r = readout({16, small_extractor().output_channels()}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({16, 3}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, ex, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, extract_features(t, in[0], ex, tail(in)));
    };
    return p;
  });
  comp("fuse", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    FusionNode node{store->add("w", Tensor({2}, {1.0, 1.0})), 2};
    auto r = readout({5, 4}, rng);
    GradProblem p;
    p.inputs = {random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)};
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, node, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, fuse(t, {in[0], in[1]}, node, tail(in, 2), 1e-4));
    };
    return p;
  });
  comp("expand", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    BimsConfig bc;
    bc.in_channels = 10;
    bc.channels = 6;
    bc.levels = 2;
    auto bims = make_bims(*store, bc, rng);
    auto r1 = readout({16, 6}, rng), r2 = readout({32, 6}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({8, 10}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, bims, r1, r2](Tape& t, const std::vector<Tensor>& in) {
      auto out = expand(t, in[0], bims, tail(in));
      return add(t, r1(t, out[0]), r2(t, out[1]));
    };
    return p;
  });
  comp("reconstruct", [](std::uint64_t seed) {
    Rng rng(seed);
    auto store = std::make_shared<ParamStore>();
    auto heads = make_heads(*store, 6, 5, 1, rng);
    auto r = readout({9, 3}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({9, 6}, rng));
    for (auto& v : jittered(*store, rng)) p.inputs.push_back(v);
    p.loss = [store, heads, r](Tape& t, const std::vector<Tensor>& in) {
      return r(t, reconstruct(t, in[0], heads[0], tail(in)));
    };
    return p;
  });
  comp("joint_loss", [](std::uint64_t seed) {
    Rng rng(seed);
    auto model = std::make_shared<Model>(small_model(), seed);
    auto gt = random_tensor({32, 3}, rng);
    GradProblem p;
    p.inputs.push_back(random_tensor({8, 3}, rng));
    for (auto& v : jittered(model->params(), rng)) p.inputs.push_back(v);
    p.loss = [model, gt](Tape& t, const std::vector<Tensor>& in) {
      LossConfig cfg;
      cfg.alphas = default_alphas(2);
      // Predictions of a random model are far from the unit-sphere scale of h;
      // a wide radius keeps the repulsion gradient non-trivial.
      cfg.repulsion_h = 0.5;
      cfg.lambda = 0.5;
      return joint_loss(t, gt, model->forward(t, tail(in), in[0]), cfg).total;
    };
    return p;
  });
  return cases;
}

double evaluate(const GradProblem& problem, const std::vector<Tensor>& inputs) {
  Tape tape;
  return problem.loss(tape, inputs).item();
}

std::vector<Tensor> with_value(const std::vector<Tensor>& inputs, std::size_t t, std::size_t e, double v) {
  std::vector<Tensor> out = inputs;
  std::vector<double> data(inputs[t].data().begin(), inputs[t].data().end());
  data[e] = v;
  out[t] = Tensor(inputs[t].shape(), std::move(data));
  return out;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_cases() {
  static const std::vector<GradCheckCase> cases = build_cases();
  return cases;
}

GradCheckResult check_gradients(const std::string& name, const GradProblem& problem, const GradCheckOptions& options,
                                std::uint64_t seed) {
  GradCheckResult res;
  res.name = name;

  Tape tape;
  if (!options.corrupt_op.empty()) tape.corrupt_op(options.corrupt_op);
  std::vector<Tensor> watched;
  for (const auto& x : problem.inputs) watched.push_back(tape.watch(x));
  const Tensor loss = problem.loss(tape, watched);
  tape.backward(loss);
  const double f0 = loss.item();

  Rng pick = derive_rng(seed, 7);
  const double h = options.step;
  for (std::size_t t = 0; t < problem.inputs.size(); ++t) {
    const auto analytic = tape.grad(watched[t]);
    const auto n = problem.inputs[t].numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t e = 0; e < n; ++e) coords[e] = e;
    if (n > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (auto e : coords) {
      const double x = problem.inputs[t][e];
      const double fp = evaluate(problem, with_value(problem.inputs, t, e, x + h));
      const double fm = evaluate(problem, with_value(problem.inputs, t, e, x - h));
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[e];
      const double err = std::abs(a - numeric);
      const double rel = err / std::max({std::abs(a), std::abs(numeric), 1e-300});
      ++res.checked;
      if (rel <= options.rel_tol || err <= options.abs_tol) {
        if (std::max(std::abs(a), std::abs(numeric)) > 10.0 * options.abs_tol) res.max_rel = std::max(res.max_rel, rel);
        res.max_abs = std::max(res.max_abs, err);
        continue;
      }
      // A kink (relu, max, nearest-neighbor switch) between x-h and x+h makes
      // the one-sided slopes disagree; a wrong analytic gradient does not.
      const double forward = (fp - f0) / h;
      const double backward = (f0 - fm) / h;
      const double gap = std::abs(forward - backward);
      if (gap > 1e-3 * std::max(std::abs(forward), std::abs(backward)) && gap > options.abs_tol) {
        ++res.skipped;
        --res.checked;
        continue;
      }
      res.max_rel = std::max(res.max_rel, rel);
      res.max_abs = std::max(res.max_abs, err);
      if (res.passed) {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "input %zu element %zu: analytic %.9g numeric %.9g", t, e, a, numeric);
        res.worst = buf;
      }
      res.passed = false;
    }
  }
  const auto total = res.checked + res.skipped;
  if (total == 0 || static_cast<double>(res.skipped) > options.max_skip_fraction * static_cast<double>(total)) {
    if (res.passed) res.worst = "too many kink-skipped coordinates";
    res.passed = false;
  }
  return res;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  for (const auto& c : gradcheck_cases()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), c.name) == options.only.end()) {
      continue;
    }
    GradCheckResult agg;
    agg.name = c.name;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      const auto seed = options.base_seed + s;
      auto r = check_gradients(c.name, c.build(seed), options, seed);
      agg.checked += r.checked;
      agg.skipped += r.skipped;
      agg.max_rel = std::max(agg.max_rel, r.max_rel);
      agg.max_abs = std::max(agg.max_abs, r.max_abs);
      if (!r.passed && agg.passed) agg.worst = "seed " + std::to_string(seed) + ", " + r.worst;
      agg.passed = agg.passed && r.passed;
    }
    results.push_back(std::move(agg));
  }
  return results;
}

std::string format_gradcheck_report(const std::vector<GradCheckResult>& results) {
  std::string out = "check\tcoords\tskipped\tmax_rel_err\tstatus\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%s\t%zu\t%zu\t%.3e\t%s", r.name.c_str(), r.checked, r.skipped, r.max_rel,
                  r.passed ? "PASS" : "FAIL");
    out += buf;
    if (!r.passed) out += "\t" + r.worst;
    out += "\n";
  }
  return out;
}

}  // namespace bimspu
