#pragma once

#include <string>
#include <vector>

namespace condgan {

struct SuiteCheck {
  std::string group;  // op, layer, loss or model
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

// Finite-difference checks at 64-bit, h = 1e-5: every differentiable op and
// layer against kOpTolerance, the miniature networks against kModelTolerance.
// `inject_bug` adds a tanh whose backward rule drops the square, which must fail.
std::vector<SuiteCheck> gradient_suite(bool inject_bug = false);

bool all_passed(const std::vector<SuiteCheck>& checks);

}  // namespace condgan
