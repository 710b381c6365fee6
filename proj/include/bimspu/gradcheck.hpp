#pragma once

// Central finite-difference verification of every differentiable op and of
// the composed network loss.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bimspu/tensor.hpp"

namespace bimspu {

/// A scalar function of some input tensors, all of which are differentiated.
struct GradProblem {
  std::vector<Tensor> inputs;
  std::function<Tensor(Tape&, const std::vector<Tensor>&)> loss;
};

struct GradCheckCase {
  std::string name;
  bool primitive = false;  ///< a single tape op (name == recorded op name)
  std::function<GradProblem(std::uint64_t seed)> build;
};

/// Every registered check, primitives first.
const std::vector<GradCheckCase>& gradcheck_cases();

struct GradCheckOptions {
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;
  std::size_t max_coords = 16;  ///< sampled coordinates per input tensor
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
  /// Coordinates sitting on a relu/max/argmin kink are skipped; more than
  /// this fraction of skips fails the check.
  double max_skip_fraction = 0.05;
  std::string corrupt_op;          ///< test hook, see Tape::corrupt_op
  std::vector<std::string> only;   ///< restrict to these checks when non-empty
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel = 0.0;  ///< over coordinates with gradient magnitude above 10 * abs_tol
  double max_abs = 0.0;
  bool passed = true;
  std::string worst;  ///< description of the worst failing coordinate
};

GradCheckResult check_gradients(const std::string& name, const GradProblem& problem,
                                const GradCheckOptions& options, std::uint64_t seed);

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options = {});

/// One line per check: name, coordinates, skipped, max rel error, PASS/FAIL.
std::string format_gradcheck_report(const std::vector<GradCheckResult>& results);

}  // namespace bimspu
