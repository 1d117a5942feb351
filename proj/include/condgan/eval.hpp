#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "condgan/data.hpp"
#include "condgan/models.hpp"

namespace condgan {

// Mean squared RGB error over the pixels where `mask` is set, averaged over
// the three channels. 0 when the mask is empty.
double masked_l2(std::span<const float> rgb, std::span<const float> target_rgb, std::span<const float> mask,
                 std::size_t height, std::size_t width);

// Mean forward-difference gradient magnitude sqrt(dx^2 + dy^2) over every
// channel of a [C, H, W] image.
double sharpness(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width);

struct DiscriminatorAccuracy {
  double matched = 0;     // fraction of true pairs scored above 0.5
  double mismatched = 0;  // fraction of wrong-class pairs scored below 0.5
  double overall = 0;     // mean of the two
  double pairwise = 0;    // fraction where the true pair outscores the wrong one
};

struct EvalReport {
  std::size_t train_samples = 0, test_samples = 0;
  double l2_train = 0, l2_test = 0;
  double sharpness_generated = 0, sharpness_ground_truth = 0;
  bool has_discriminator = false;
  DiscriminatorAccuracy d_test;
};

// Generator outputs for the given samples, in order, as [3, H, W] images.
// Partial generators draw z from `seed`.
std::vector<std::vector<float>> generate_for(Generator<float>& g, const ModelConfig& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& indices, std::uint64_t seed);

// Matched pairs use each sample's own conditions; mismatched pairs swap in a
// uniformly drawn wrong class from `seed`.
DiscriminatorAccuracy discriminator_accuracy(Discriminator<float>& d, const ModelConfig& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& indices, std::uint64_t seed);

EvalReport evaluate(Generator<float>& g, Discriminator<float>* d, const ModelConfig& model,
                    const std::vector<Sample>& samples, const Split& split, std::uint64_t seed);

std::string report_json(const EvalReport& report);

}  // namespace condgan
