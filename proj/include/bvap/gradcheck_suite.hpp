// Finite-difference checks of every differentiable block at tiny shapes.
#pragma once

#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "bvap/gradcheck.hpp"

namespace bvap {

struct GradCase {
  std::string name;
  std::function<GradCheckResult()> run;
};

std::vector<GradCase> default_grad_cases();

struct GradSuiteReport {
  std::size_t passed = 0;
  std::size_t failed = 0;
  double worst_error = 0.0;
  bool ok() const { return failed == 0; }
};

/// One line per case: "PASS|FAIL <name> max_rel_err=... checked=... skipped=...",
/// failures adding the worst element with its analytic and numeric values.
/// A case that checks no element fails.
GradSuiteReport run_grad_cases(std::span<const GradCase> cases, std::ostream& out,
                               double tolerance = 1e-4);

}  // namespace bvap
