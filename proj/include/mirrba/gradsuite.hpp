#pragma once

// Finite-difference verification of every differentiable operator and loss
// term, used by the `gradcheck` command and the test suite.

#include <functional>
#include <string>
#include <vector>

namespace mirrba {

struct GradSuiteEntry {
  std::string name;
  int seeds = 0;
  double worst_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

std::vector<std::string> gradient_suite_names();

// Runs every check over `seeds` random draws with extents at most 6^3.
GradSuiteReport run_gradient_suite(int seeds = 10, double tolerance = 1e-3,
                                   const std::function<void(const GradSuiteEntry&)>& on_entry = {});

}  // namespace mirrba
