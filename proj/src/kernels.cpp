#include "condgan/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace condgan::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

using Index = Eigen::Index;

// cols[(c * k + ki) * k + kj, n * P + p] for every sample, zero outside the
// padded input.
template <typename T>
void im2col_batch(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  const std::size_t row_stride = g.batch * plane;
  const long long batch = static_cast<long long>(g.batch);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < batch; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* src = x.data() + (n * g.in_channels + c) * g.in_h * g.in_w;
      for (std::size_t ki = 0; ki < g.kernel; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const std::size_t r = (c * g.kernel + ki) * g.kernel + kj;
          T* dst = cols.data() + r * row_stride + n * plane;
          for (std::size_t i = 0; i < oh; ++i) {
            const long long ih = static_cast<long long>(i * g.stride + ki) -
                                 static_cast<long long>(g.pad);
            T* out = dst + i * ow;
            if (ih < 0 || ih >= static_cast<long long>(g.in_h)) {
              for (std::size_t j = 0; j < ow; ++j) out[j] = T(0);
              continue;
            }
            const T* row = src + static_cast<std::size_t>(ih) * g.in_w;
            for (std::size_t j = 0; j < ow; ++j) {
              const long long iw = static_cast<long long>(j * g.stride + kj) -
                                   static_cast<long long>(g.pad);
              out[j] = (iw < 0 || iw >= static_cast<long long>(g.in_w))
                           ? T(0)
                           : row[static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_batch(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = oh * ow;
  const std::size_t row_stride = g.batch * plane;
  const long long batch = static_cast<long long>(g.batch);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < batch; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      T* dst = dx.data() + (n * g.in_channels + c) * g.in_h * g.in_w;
      for (std::size_t ki = 0; ki < g.kernel; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const std::size_t r = (c * g.kernel + ki) * g.kernel + kj;
          const T* src = cols.data() + r * row_stride + n * plane;
          for (std::size_t i = 0; i < oh; ++i) {
            const long long ih = static_cast<long long>(i * g.stride + ki) -
                                 static_cast<long long>(g.pad);
            if (ih < 0 || ih >= static_cast<long long>(g.in_h)) continue;
            T* row = dst + static_cast<std::size_t>(ih) * g.in_w;
            const T* in = src + i * ow;
            for (std::size_t j = 0; j < ow; ++j) {
              const long long iw = static_cast<long long>(j * g.stride + kj) -
                                   static_cast<long long>(g.pad);
              if (iw < 0 || iw >= static_cast<long long>(g.in_w)) continue;
              row[static_cast<std::size_t>(iw)] += in[j];
            }
          }
        }
      }
    }
  }
}

// [N, F, P] <-> [F, N * P]
template <typename T>
void batch_to_channel_major(std::span<const T> src, std::span<T> dst, std::size_t batch,
                            std::size_t channels, std::size_t plane) {
  const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < nb; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t f = 0; f < channels; ++f) {
      const T* s = src.data() + (n * channels + f) * plane;
      T* d = dst.data() + f * batch * plane + n * plane;
      for (std::size_t p = 0; p < plane; ++p) d[p] = s[p];
    }
  }
}

template <typename T>
void channel_major_to_batch(std::span<const T> src, std::span<T> dst, std::size_t batch,
                            std::size_t channels, std::size_t plane) {
  const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static)
  for (long long nn = 0; nn < nb; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t f = 0; f < channels; ++f) {
      const T* s = src.data() + f * batch * plane + n * plane;
      T* d = dst.data() + (n * channels + f) * plane;
      for (std::size_t p = 0; p < plane; ++p) d[p] = s[p];
    }
  }
}

}  // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n, bool accumulate) {
  ConstMapMat<T> A(a.data(), Index(m), Index(k));
  ConstMapMat<T> B(b.data(), Index(k), Index(n));
  MapMat<T> C(c.data(), Index(m), Index(n));
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  ConstMapMat<T> A(a.data(), Index(m), Index(k));
  ConstMapMat<T> B(b.data(), Index(n), Index(k));
  MapMat<T> C(c.data(), Index(m), Index(n));
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  ConstMapMat<T> A(a.data(), Index(k), Index(m));
  ConstMapMat<T> B(b.data(), Index(k), Index(n));
  MapMat<T> C(c.data(), Index(m), Index(n));
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t cols_n = g.batch * plane;
  std::vector<T> cols(ckk * cols_n);
  im2col_batch<T>(g, x, cols);
  std::vector<T> out(g.out_channels * cols_n);
  matmul<T>(w, cols, out, g.out_channels, ckk, cols_n, false);
  channel_major_to_batch<T>(out, y, g.batch, g.out_channels, plane);
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx, bool accumulate) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t cols_n = g.batch * plane;
  std::vector<T> dy_cm(g.out_channels * cols_n);
  batch_to_channel_major<T>(dy, dy_cm, g.batch, g.out_channels, plane);
  std::vector<T> dcols(ckk * cols_n);
  matmul_tn<T>(w, dy_cm, dcols, ckk, g.out_channels, cols_n, false);
  if (!accumulate) std::fill(dx.begin(), dx.end(), T(0));
  col2im_batch<T>(g, dcols, dx);
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw, bool accumulate) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t cols_n = g.batch * plane;
  std::vector<T> cols(ckk * cols_n);
  im2col_batch<T>(g, x, cols);
  std::vector<T> dy_cm(g.out_channels * cols_n);
  batch_to_channel_major<T>(dy, dy_cm, g.batch, g.out_channels, plane);
  matmul_nt<T>(dy_cm, cols, dw, g.out_channels, cols_n, ckk, accumulate);
}

#define CONDGAN_INSTANTIATE_KERNELS(T)                                                   \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>,          \
                          std::size_t, std::size_t, std::size_t, bool);                  \
  template void matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,       \
                             std::size_t, std::size_t, std::size_t, bool);               \
  template void matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,       \
                             std::size_t, std::size_t, std::size_t, bool);               \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,               \
                                  std::span<const T>, std::span<T>);                     \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,        \
                                         std::span<const T>, std::span<T>, bool);        \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,       \
                                          std::span<const T>, std::span<T>, bool);

CONDGAN_INSTANTIATE_KERNELS(float)
CONDGAN_INSTANTIATE_KERNELS(double)

#undef CONDGAN_INSTANTIATE_KERNELS

}  // namespace condgan::kernels
