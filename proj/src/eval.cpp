#include "condgan/eval.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "condgan/errors.hpp"
#include "condgan/losses.hpp"

namespace condgan {

namespace {

constexpr std::size_t kChunk = 64;

template <typename F>
void for_chunks(const std::vector<std::size_t>& indices, F&& body) {
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t end = std::min(indices.size(), start + kChunk);
    body(std::vector<std::size_t>(indices.begin() + start, indices.begin() + end));
  }
}

double mean_l2(const std::vector<std::vector<float>>& generated, const std::vector<Sample>& samples,
               const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = samples[indices[i]];
    total += masked_l2(generated[i], s.rgb, s.mask, s.height, s.width);
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

double masked_l2(std::span<const float> rgb, std::span<const float> target_rgb, std::span<const float> mask,
                 std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (rgb.size() != 3 * plane || target_rgb.size() != 3 * plane || mask.size() != plane)
    throw ShapeError("masked_l2: expected [3, H, W] images and an [H, W] mask");
  double sum = 0.0, count = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (mask[p] < 0.5f) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double d = static_cast<double>(rgb[ch * plane + p]) - target_rgb[ch * plane + p];
      sum += d * d;
    }
    count += 3.0;
  }
  return count > 0 ? sum / count : 0.0;
}

double sharpness(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width) {
  if (image.size() != channels * height * width) throw ShapeError("sharpness: size does not match [C, H, W]");
  if (height < 2 || width < 2) return 0.0;
  double total = 0.0;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const float* x = image.data() + ch * height * width;
    for (std::size_t i = 0; i + 1 < height; ++i)
      for (std::size_t j = 0; j + 1 < width; ++j) {
        const double dx = x[i * width + j + 1] - x[i * width + j];
        const double dy = x[(i + 1) * width + j] - x[i * width + j];
        total += std::sqrt(dx * dx + dy * dy);
      }
  }
  return total / static_cast<double>(channels * (height - 1) * (width - 1));
}

std::vector<std::vector<float>> generate_for(Generator<float>& g, const ModelConfig& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& indices, std::uint64_t seed) {
  std::vector<std::vector<float>> out;
  Rng rng(seed);
  FreezeGuard<float> freeze(g.params());
  for_chunks(indices, [&](const std::vector<std::size_t>& chunk) {
    auto batch = make_batch<float>(samples, chunk, model.num_classes);
    if (model.mode == Mode::Partial) {
      std::vector<float> z(chunk.size() * model.noise_dim);
      for (auto& e : z) e = static_cast<float>(rng.normal());
      batch.cond.z = Tensor<float>::from({chunk.size(), model.noise_dim}, std::move(z));
    }
    const auto rgb = g.synthesize(batch.cond).rgb;
    const std::size_t per = rgb.numel() / chunk.size();
    const auto data = rgb.data();
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out.emplace_back(data.begin() + i * per, data.begin() + (i + 1) * per);
  });
  return out;
}

DiscriminatorAccuracy discriminator_accuracy(Discriminator<float>& d, const ModelConfig& model,
                                             const std::vector<Sample>& samples,
                                             const std::vector<std::size_t>& indices, std::uint64_t seed) {
  DiscriminatorAccuracy acc;
  if (indices.empty()) return acc;
  Rng rng(seed);
  FreezeGuard<float> freeze(d.params());
  std::size_t matched = 0, mismatched = 0, ranked = 0;
  for_chunks(indices, [&](const std::vector<std::size_t>& chunk) {
    const auto batch = make_batch<float>(samples, chunk, model.num_classes);
    const auto image =
        discriminator_input(batch.rgb, model.mode == Mode::Absolute ? batch.mask : Tensor<float>());
    Conditions<float> wrong = batch.cond;
    wrong.c = negative_classes(batch.cond.c, rng);
    const auto good = d.score(batch.cond, image, nullptr);
    const auto bad = d.score(wrong, image, nullptr);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      matched += good[i] > 0.5f;
      mismatched += bad[i] < 0.5f;
      ranked += good[i] > bad[i];
    }
  });
  const double n = static_cast<double>(indices.size());
  acc.matched = matched / n;
  acc.mismatched = mismatched / n;
  acc.overall = 0.5 * (acc.matched + acc.mismatched);
  acc.pairwise = ranked / n;
  return acc;
}

EvalReport evaluate(Generator<float>& g, Discriminator<float>* d, const ModelConfig& model,
                    const std::vector<Sample>& samples, const Split& split, std::uint64_t seed) {
  EvalReport r;
  r.train_samples = split.train.size();
  r.test_samples = split.test.size();
  const auto gen_train = generate_for(g, model, samples, split.train, Rng::derive(seed, 1));
  const auto gen_test = generate_for(g, model, samples, split.test, Rng::derive(seed, 2));
  r.l2_train = mean_l2(gen_train, samples, split.train);
  r.l2_test = mean_l2(gen_test, samples, split.test);

  const std::size_t h = model.image_size, w = model.image_size;
  double sharp = 0.0, truth = 0.0;
  std::size_t count = 0;
  for (const auto* set : {&gen_train, &gen_test})
    for (const auto& img : *set) sharp += sharpness(img, 3, h, w), ++count;
  for (const auto& s : samples) truth += sharpness(s.rgb, 3, s.height, s.width);
  r.sharpness_generated = count ? sharp / count : 0.0;
  r.sharpness_ground_truth = samples.empty() ? 0.0 : truth / samples.size();

  if (d) {
    r.has_discriminator = true;
    r.d_test = discriminator_accuracy(*d, model, samples, split.test, Rng::derive(seed, 3));
  }
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["train_samples"] = r.train_samples;
  j["test_samples"] = r.test_samples;
  j["masked_l2_train"] = r.l2_train;
  j["masked_l2_test"] = r.l2_test;
  j["sharpness_generated"] = r.sharpness_generated;
  j["sharpness_ground_truth"] = r.sharpness_ground_truth;
  if (r.has_discriminator) {
    j["d_accuracy_test"] = {{"matched", r.d_test.matched},
                            {"mismatched", r.d_test.mismatched},
                            {"overall", r.d_test.overall},
                            {"pairwise", r.d_test.pairwise}};
  }
  return j.dump(2) + "\n";
}

}  // namespace condgan
