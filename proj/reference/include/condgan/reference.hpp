#pragma once

// Serial nested-loop kernels. Same contracts as condgan::kernels, written in
// the most direct form possible so they can serve as oracles and as the
// baseline in the benchmark. Not linked into the library or the CLI.

#include <cstddef>
#include <span>

#include "condgan/kernels.hpp"

namespace condgan::reference {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x,
                    std::span<const T> w, std::span<T> y);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy,
                           std::span<const T> w, std::span<T> dx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x,
                            std::span<const T> dy, std::span<T> dw);

// Transposed convolution by direct scatter: every input pixel adds
// x * w[c, f] into the output window it maps to.
template <typename T>
void deconv2d_forward(std::size_t batch, std::size_t in_channels,
                      std::size_t out_channels, std::size_t in_h,
                      std::size_t in_w, std::size_t kernel, std::size_t stride,
                      std::size_t pad, std::span<const T> x,
                      std::span<const T> w, std::span<T> y);

}  // namespace condgan::reference
