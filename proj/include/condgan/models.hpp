#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "condgan/layers.hpp"
#include "condgan/random.hpp"
#include "condgan/tensor.hpp"

namespace condgan {

enum class Mode { Absolute, Partial };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

struct ModelConfig {
  Mode mode = Mode::Absolute;
  std::size_t num_classes = 10;
  std::size_t view_dim = 4;
  std::size_t transform_dim = 3;
  std::size_t noise_dim = 16;
  std::size_t image_size = 32;

  std::size_t encoder_width = 128;
  std::size_t encoder_layers = 2;
  std::size_t fused_width = 256;
  std::size_t base_channels = 64;
  // Channels of the hidden deconvolutions; each doubles the spatial size and
  // the output heads add one more doubling.
  std::vector<std::size_t> deconv_channels{32, 16};

  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t hidden_dim = 128;  // D_h
  std::size_t head_width = 128;
  double dropout_rate = 0.0;

  bool weight_norm = true;
  bool instance_norm = true;
  // Gaussian std sqrt(gain / fan_in) per layer; false uses the flat kInitStd.
  bool fan_in_init = true;

  double init_std(std::size_t fan_in, double gain = 2.0) const;

  std::size_t base_size() const;
  std::size_t image_channels() const { return mode == Mode::Absolute ? 4 : 3; }
  // Throws ConfigError when the geometry does not close.
  void validate() const;
};

// Small geometry used by the end-to-end gradient checks: 8x8 images, D_h = 8.
ModelConfig miniature_config(Mode mode);

template <typename T>
struct Conditions {
  Tensor<T> c;  // [N, K] one-hot (or a blend of one-hots)
  Tensor<T> v;  // [N, 4]
  Tensor<T> t;  // [N, T]
  Tensor<T> z;  // [N, Z], partial mode only

  std::size_t batch() const { return c.dim(0); }
};

// Stacks condition batches along the batch axis.
template <typename T>
Conditions<T> concat_conditions(const std::vector<Conditions<T>>& parts);

template <typename T>
struct GeneratorOutput {
  Tensor<T> rgb;     // [N, 3, H, W] in (-1, 1)
  Tensor<T> mask;    // [N, 1, H, W] in (0, 1); undefined without a mask head
  Tensor<T> hidden;  // fused hidden vector right after normalization
};

// What the discriminator sees for a generator output or a dataset sample:
// rgb with the mask appended as a fourth channel when present.
template <typename T>
Tensor<T> discriminator_input(const Tensor<T>& rgb, const Tensor<T>& mask);

template <typename T>
class Generator {
 public:
  virtual ~Generator() = default;
  virtual GeneratorOutput<T> synthesize(const Conditions<T>& cond) = 0;
  virtual ParamStore<T>& params() = 0;
};

template <typename T>
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  // [N, 1] scores in (0, 1). `rng` drives dropout; nullptr disables it.
  virtual Tensor<T> score(const Conditions<T>& cond, const Tensor<T>& image, Rng* rng) = 0;
  virtual ParamStore<T>& params() = 0;
};

template <typename T>
class AbsoluteGenerator final : public Generator<T> {
 public:
  AbsoluteGenerator(const ModelConfig& config, std::uint64_t seed);
  GeneratorOutput<T> synthesize(const Conditions<T>& cond) override;
  ParamStore<T>& params() override { return store_; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  std::vector<Dense<T>> enc_c_, enc_v_, enc_t_;
  Dense<T> fuse_, project_;
  std::vector<Deconv2d<T>> deconvs_;
  Deconv2d<T> rgb_head_, mask_head_;
};

template <typename T>
class PartialGenerator final : public Generator<T> {
 public:
  PartialGenerator(const ModelConfig& config, std::uint64_t seed);
  GeneratorOutput<T> synthesize(const Conditions<T>& cond) override;
  ParamStore<T>& params() override { return store_; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  std::vector<Dense<T>> enc_c_;
  Dense<T> label_project_, noise_project_;
  std::vector<Deconv2d<T>> deconvs_;
  Deconv2d<T> rgb_head_;
};

template <typename T>
class ConditionalDiscriminator final : public Discriminator<T> {
 public:
  ConditionalDiscriminator(const ModelConfig& config, std::uint64_t seed);

  Tensor<T> score(const Conditions<T>& cond, const Tensor<T>& image, Rng* rng) override;
  ParamStore<T>& params() override { return store_; }
  const ModelConfig& config() const { return config_; }

  // [N, D_h]
  Tensor<T> encode_info(const Conditions<T>& cond);
  // [N, D_h]. `features`, when given, receives the flattened activations
  // that enter the projection.
  Tensor<T> encode_image(const Tensor<T>& image, Rng* rng, Tensor<T>* features = nullptr);

  Dense<T>& output_layer() { return head_out_; }
  Dense<T>& fusion_layer() { return info_fuse_; }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  std::vector<Dense<T>> info_c_, info_v_, info_t_;
  Dense<T> info_fuse_;
  std::vector<Conv2d<T>> convs_;
  Dense<T> img_project_;
  Dense<T> head_hidden_, head_out_;
};

// x_corr = concat(info * img, info, img) along the feature axis.
template <typename T>
Tensor<T> combine(const Tensor<T>& x_info, const Tensor<T>& x_img);

template <typename T>
std::unique_ptr<Generator<T>> make_generator(const ModelConfig& config, std::uint64_t seed);

// mean((rgb - target_rgb)^2) + mean((mask - target_mask)^2); the mask term is
// skipped when `mask` is undefined.
template <typename T>
Tensor<T> l2_baseline_loss(const Tensor<T>& rgb, const Tensor<T>& mask,
                           const Tensor<T>& target_rgb, const Tensor<T>& target_mask);

}  // namespace condgan
