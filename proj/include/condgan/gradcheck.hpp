#pragma once

// Central finite-difference checks of analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "condgan/tensor.hpp"

namespace condgan {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor),
  // so vanishing gradients are compared in absolute terms.
  double abs_floor = 1e-3;
  // 0 checks every element; otherwise a seeded random subset per leaf.
  std::size_t max_entries_per_leaf = 0;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::vector<double> rel_errors;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

using NamedLeaf = std::pair<std::string, Tensor<double>>;

// `f` rebuilds the graph from the given leaves on every call (their values are
// perturbed in place) and returns a scalar. Throws DeterminismError when two
// unperturbed evaluations disagree.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedLeaf>& leaves,
                           const GradCheckOptions& options = {});

// Single-input form.
GradCheckReport grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double step, double tolerance);

}  // namespace condgan
