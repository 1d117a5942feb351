#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "condgan/data.hpp"
#include "condgan/models.hpp"

namespace condgan {

struct Frame {
  std::size_t height = 0, width = 0;
  std::vector<float> rgb;   // [3, H, W] in [-1, 1]
  std::vector<float> mask;  // [H, W]; empty without a mask head
};

// Noise vector for partial generators, N(0, 1) from `seed`.
std::vector<float> noise_vector(std::size_t dim, std::uint64_t seed);

// One generator evaluation at batch size 1. `classes` is a (blend of)
// one-hot; `z` is ignored by absolute generators.
Frame generate_frame(Generator<float>& g, const ModelConfig& model, const std::vector<double>& classes,
                     const ViewPoint& view, const Transform& tr, const std::vector<float>& z);

// Frames laid out row-major on a rows x cols grid, [3, rows*H, cols*W].
// Throws ConfigError when the counts disagree.
Frame tile(const std::vector<Frame>& frames, std::size_t rows, std::size_t cols);

// "RxC" -> {R, C}. Throws ConfigError on anything else.
std::pair<std::size_t, std::size_t> parse_grid(const std::string& spec);

// Azimuths 2 pi k / n for k < n.
std::vector<double> rotation_azimuths(std::size_t n);

// (1 - l) * onehot(from) + l * onehot(to) for l = k / (n - 1); the endpoints
// are exact one-hots.
std::vector<std::vector<double>> class_blends(std::size_t from, std::size_t to, std::size_t n,
                                              std::size_t num_classes);

// Mask as a grey P6 image.
std::string encode_mask_ppm(const Frame& frame);

}  // namespace condgan
