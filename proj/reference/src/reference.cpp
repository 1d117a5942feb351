#include "condgan/reference.hpp"

#include <algorithm>

namespace condgan::reference {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<T> y) {
  const long long oh = static_cast<long long>(g.out_h());
  const long long ow = static_cast<long long>(g.out_w());
  const long long ih = static_cast<long long>(g.in_h);
  const long long iw = static_cast<long long>(g.in_w);
  const long long k = static_cast<long long>(g.kernel);
  const long long s = static_cast<long long>(g.stride);
  const long long p = static_cast<long long>(g.pad);
  const long long nc = static_cast<long long>(g.in_channels);
  const long long nf = static_cast<long long>(g.out_channels);
  for (long long n = 0; n < static_cast<long long>(g.batch); ++n)
    for (long long f = 0; f < nf; ++f)
      for (long long i = 0; i < oh; ++i)
        for (long long j = 0; j < ow; ++j) {
          T acc = 0;
          for (long long c = 0; c < nc; ++c)
            for (long long a = 0; a < k; ++a)
              for (long long b = 0; b < k; ++b) {
                const long long r = i * s + a - p;
                const long long q = j * s + b - p;
                if (r < 0 || r >= ih || q < 0 || q >= iw) continue;
                acc += x[((n * nc + c) * ih + r) * iw + q] * w[((f * nc + c) * k + a) * k + b];
              }
          y[((n * nf + f) * oh + i) * ow + j] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx) {
  const long long oh = static_cast<long long>(g.out_h());
  const long long ow = static_cast<long long>(g.out_w());
  const long long ih = static_cast<long long>(g.in_h);
  const long long iw = static_cast<long long>(g.in_w);
  const long long k = static_cast<long long>(g.kernel);
  const long long s = static_cast<long long>(g.stride);
  const long long p = static_cast<long long>(g.pad);
  const long long nc = static_cast<long long>(g.in_channels);
  const long long nf = static_cast<long long>(g.out_channels);
  std::fill(dx.begin(), dx.end(), T(0));
  for (long long n = 0; n < static_cast<long long>(g.batch); ++n)
    for (long long f = 0; f < nf; ++f)
      for (long long i = 0; i < oh; ++i)
        for (long long j = 0; j < ow; ++j) {
          const T up = dy[((n * nf + f) * oh + i) * ow + j];
          for (long long c = 0; c < nc; ++c)
            for (long long a = 0; a < k; ++a)
              for (long long b = 0; b < k; ++b) {
                const long long r = i * s + a - p;
                const long long q = j * s + b - p;
                if (r < 0 || r >= ih || q < 0 || q >= iw) continue;
                dx[((n * nc + c) * ih + r) * iw + q] += up * w[((f * nc + c) * k + a) * k + b];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw) {
  const long long oh = static_cast<long long>(g.out_h());
  const long long ow = static_cast<long long>(g.out_w());
  const long long ih = static_cast<long long>(g.in_h);
  const long long iw = static_cast<long long>(g.in_w);
  const long long k = static_cast<long long>(g.kernel);
  const long long s = static_cast<long long>(g.stride);
  const long long p = static_cast<long long>(g.pad);
  const long long nc = static_cast<long long>(g.in_channels);
  const long long nf = static_cast<long long>(g.out_channels);
  std::fill(dw.begin(), dw.end(), T(0));
  for (long long n = 0; n < static_cast<long long>(g.batch); ++n)
    for (long long f = 0; f < nf; ++f)
      for (long long i = 0; i < oh; ++i)
        for (long long j = 0; j < ow; ++j) {
          const T up = dy[((n * nf + f) * oh + i) * ow + j];
          for (long long c = 0; c < nc; ++c)
            for (long long a = 0; a < k; ++a)
              for (long long b = 0; b < k; ++b) {
                const long long r = i * s + a - p;
                const long long q = j * s + b - p;
                if (r < 0 || r >= ih || q < 0 || q >= iw) continue;
                dw[((f * nc + c) * k + a) * k + b] += up * x[((n * nc + c) * ih + r) * iw + q];
              }
        }
}

template <typename T>
void deconv2d_forward(std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                      std::size_t in_h, std::size_t in_w, std::size_t kernel,
                      std::size_t stride, std::size_t pad, std::span<const T> x,
                      std::span<const T> w, std::span<T> y) {
  const long long k = static_cast<long long>(kernel);
  const long long s = static_cast<long long>(stride);
  const long long p = static_cast<long long>(pad);
  const long long h = static_cast<long long>(in_h);
  const long long wd = static_cast<long long>(in_w);
  const long long oh = (h - 1) * s - 2 * p + k;
  const long long ow = (wd - 1) * s - 2 * p + k;
  const long long nc = static_cast<long long>(in_channels);
  const long long nf = static_cast<long long>(out_channels);
  std::fill(y.begin(), y.end(), T(0));
  for (long long n = 0; n < static_cast<long long>(batch); ++n)
    for (long long c = 0; c < nc; ++c)
      for (long long i = 0; i < h; ++i)
        for (long long j = 0; j < wd; ++j) {
          const T v = x[((n * nc + c) * h + i) * wd + j];
          for (long long f = 0; f < nf; ++f)
            for (long long a = 0; a < k; ++a)
              for (long long b = 0; b < k; ++b) {
                const long long r = i * s + a - p;
                const long long q = j * s + b - p;
                if (r < 0 || r >= oh || q < 0 || q >= ow) continue;
                y[((n * nf + f) * oh + r) * ow + q] += v * w[((c * nf + f) * k + a) * k + b];
              }
        }
}

#define CONDGAN_INSTANTIATE_REFERENCE(T)                                                 \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<T>,          \
                          std::size_t, std::size_t, std::size_t);                        \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,               \
                                  std::span<const T>, std::span<T>);                     \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,        \
                                         std::span<const T>, std::span<T>);              \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,       \
                                          std::span<const T>, std::span<T>);             \
  template void deconv2d_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,  \
                                    std::size_t, std::size_t, std::size_t, std::size_t,  \
                                    std::span<const T>, std::span<const T>, std::span<T>);

CONDGAN_INSTANTIATE_REFERENCE(float)
CONDGAN_INSTANTIATE_REFERENCE(double)

#undef CONDGAN_INSTANTIATE_REFERENCE

}  // namespace condgan::reference
