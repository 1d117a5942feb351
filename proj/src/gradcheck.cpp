#include "condgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "condgan/errors.hpp"
#include "condgan/random.hpp"

namespace condgan {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedLeaf>& leaves,
                           const GradCheckOptions& options) {
  if (options.step <= 0.0) throw PreconditionError("grad_check: step must be positive");
  auto params = leaves;
  for (auto& [name, t] : params) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const Tensor<double> out = f();
  if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  const double base = out.item();
  backward(out);
  if (f().item() != base) {
    throw DeterminismError("grad_check: two forward passes at the same point disagree");
  }

  Rng rng(options.seed);
  GradCheckReport report;
  report.passed = true;
  for (auto& [name, t] : params) {
    GradCheckEntry entry;
    entry.name = name;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> indices(t.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_leaf > 0 && indices.size() > options.max_entries_per_leaf) {
      for (std::size_t i = 0; i < options.max_entries_per_leaf; ++i) {
        std::swap(indices[i], indices[i + rng.uniform_index(indices.size() - i)]);
      }
      indices.resize(options.max_entries_per_leaf);
      std::sort(indices.begin(), indices.end());
    }
    auto values = t.mutable_data();
    for (auto i : indices) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = f().item();
      values[i] = saved - options.step;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      entry.rel_errors.push_back(rel);
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    entry.checked = indices.size();
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    if (!(entry.max_rel_error < options.tolerance)) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  for (auto& [name, t] : params) t.zero_grad();
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double step, double tolerance) {
  GradCheckOptions options;
  options.step = step;
  options.tolerance = tolerance;
  return grad_check([&] { return f(x); }, {{"x", x}}, options);
}

}  // namespace condgan
