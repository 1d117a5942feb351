#pragma once

// Hot numeric kernels behind the tensor ops. Convolutions are lowered to
// im2col + GEMM; the batch loop is OpenMP-parallel and every output element is
// owned by exactly one thread, so results do not depend on the thread count.
// Straight nested-loop versions with identical signatures live in the
// condgan_reference library and are used by the tests and the benchmark.

#include <cstddef>
#include <span>

namespace condgan {

// Geometry of a forward convolution x[N, C, H, W] * w[F, C, k, k].
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  bool valid() const {
    return batch > 0 && in_channels > 0 && out_channels > 0 && kernel > 0 &&
           stride > 0 && kernel <= in_h + 2 * pad && kernel <= in_w + 2 * pad;
  }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const {
    return batch * out_channels * out_h() * out_w();
  }
  std::size_t weight_size() const {
    return out_channels * in_channels * kernel * kernel;
  }
};

namespace kernels {

// c[M, N] (+)= a[M, K] * b[K, N], row-major.
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[M, N] (+)= a[M, K] * b[N, K]^T
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// c[M, N] (+)= a[K, M]^T * b[K, N]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x,
                    std::span<const T> w, std::span<T> y);

// dx (+)= conv2d_forward adjoint applied to dy.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx,
                           bool accumulate);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw,
                            bool accumulate);

}  // namespace kernels
}  // namespace condgan
