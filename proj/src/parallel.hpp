#pragma once

#include <cstddef>

namespace condgan {

// Below this many elements the OpenMP fork costs more than the loop.
inline constexpr long long kParallelThreshold = 1 << 15;

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (count > kParallelThreshold)
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace condgan
