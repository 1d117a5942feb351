#include "condgan/models.hpp"

#include <cmath>

#include "condgan/errors.hpp"

namespace condgan {

std::string mode_name(Mode mode) { return mode == Mode::Absolute ? "absolute" : "partial"; }

Mode parse_mode(const std::string& name) {
  if (name == "absolute") return Mode::Absolute;
  if (name == "partial") return Mode::Partial;
  throw ConfigError("unknown mode '" + name + "' (expected absolute or partial)");
}

std::size_t ModelConfig::base_size() const {
  const std::size_t doublings = deconv_channels.size() + 1;
  return image_size >> doublings;
}

double ModelConfig::init_std(std::size_t fan_in, double gain) const {
  return fan_in_init ? std::sqrt(gain / static_cast<double>(fan_in)) : kInitStd;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (view_dim == 0 || transform_dim == 0) throw ConfigError("model: empty condition vector");
  if (encoder_layers == 0 || encoder_width == 0 || fused_width == 0 || hidden_dim == 0 ||
      head_width == 0 || base_channels == 0)
    throw ConfigError("model: layer widths must be positive");
  const std::size_t s = base_size();
  if (s == 0 || (s << (deconv_channels.size() + 1)) != image_size)
    throw ConfigError("model: image_size " + std::to_string(image_size) + " is not base * 2^" +
                      std::to_string(deconv_channels.size() + 1));
  if (conv_channels.empty()) throw ConfigError("model: discriminator needs a conv layer");
  if ((image_size >> conv_channels.size()) == 0 ||
      ((image_size >> conv_channels.size()) << conv_channels.size()) != image_size)
    throw ConfigError("model: image_size must be divisible by 2^conv layers");
  if (mode == Mode::Partial && (noise_dim == 0 || base_channels < 2))
    throw ConfigError("model: partial mode needs noise_dim > 0 and base_channels >= 2");
  if (dropout_rate < 0.0 || dropout_rate > 1.0) throw ConfigError("model: dropout_rate outside [0, 1]");
}

ModelConfig miniature_config(Mode mode) {
  ModelConfig c;
  c.mode = mode;
  c.num_classes = 3;
  c.transform_dim = 3;
  c.noise_dim = 3;
  c.image_size = 8;
  c.encoder_width = 4;
  c.encoder_layers = 1;
  c.fused_width = 6;
  c.base_channels = 4;
  c.deconv_channels = {3};
  c.conv_channels = {2, 3};
  c.hidden_dim = 8;
  c.head_width = 5;
  return c;
}

template <typename T>
Conditions<T> concat_conditions(const std::vector<Conditions<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_conditions: no parts");
  auto gather = [&](auto member) {
    std::vector<Tensor<T>> xs;
    for (const auto& p : parts) {
      if (!(p.*member).defined()) return Tensor<T>();
      xs.push_back(p.*member);
    }
    return concat(xs, 0);
  };
  return {gather(&Conditions<T>::c), gather(&Conditions<T>::v), gather(&Conditions<T>::t),
          gather(&Conditions<T>::z)};
}

template <typename T>
Tensor<T> discriminator_input(const Tensor<T>& rgb, const Tensor<T>& mask) {
  return mask.defined() ? concat<T>({rgb, mask}, 1) : rgb;
}

namespace {

template <typename T>
std::vector<Dense<T>> make_encoder(ParamStore<T>& store, const std::string& name, std::size_t in,
                                   const ModelConfig& cfg, Rng& rng) {
  std::vector<Dense<T>> layers;
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::size_t fan_in = i == 0 ? in : cfg.encoder_width;
    layers.emplace_back(store, name + "." + std::to_string(i), fan_in, cfg.encoder_width, false,
                        rng, cfg.init_std(fan_in));
  }
  return layers;
}

template <typename T, typename Act>
Tensor<T> run_encoder(const std::vector<Dense<T>>& layers, Tensor<T> x, Act act) {
  for (const auto& l : layers) x = act(l.forward(x));
  return x;
}

template <typename T>
Tensor<T> relu_fn(const Tensor<T>& x) { return relu(x); }

template <typename T>
Tensor<T> leaky_fn(const Tensor<T>& x) { return leaky_relu(x); }

template <typename T>
void expect_columns(const char* what, const Tensor<T>& x, std::size_t batch, std::size_t width) {
  if (!x.defined()) throw ShapeError(std::string(what) + " is missing");
  if (x.rank() != 2 || x.dim(0) != batch || x.dim(1) != width)
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(batch) + "x" +
                     std::to_string(width) + "], got " + shape_string(x.shape()));
}

template <typename T>
std::vector<Deconv2d<T>> make_deconvs(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng,
                                      std::size_t& channels) {
  std::vector<Deconv2d<T>> layers;
  for (std::size_t i = 0; i < cfg.deconv_channels.size(); ++i) {
    // Each output pixel of a k4 s2 transposed conv sees 2x2 taps per input channel.
    layers.emplace_back(store, "deconv." + std::to_string(i), channels, cfg.deconv_channels[i], 4,
                        2, 1, cfg.weight_norm, rng, cfg.init_std(channels * 4));
    channels = cfg.deconv_channels[i];
  }
  return layers;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
AbsoluteGenerator<T>::AbsoluteGenerator(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  enc_c_ = make_encoder(store_, "enc_c", c.num_classes, c, rng);
  enc_v_ = make_encoder(store_, "enc_v", c.view_dim, c, rng);
  enc_t_ = make_encoder(store_, "enc_t", c.transform_dim, c, rng);
  fuse_ = Dense<T>(store_, "fuse", 3 * c.encoder_width, c.fused_width, false, rng,
                   c.init_std(3 * c.encoder_width));
  const std::size_t s = c.base_size();
  project_ = Dense<T>(store_, "project", c.fused_width, c.base_channels * s * s, false, rng,
                      c.init_std(c.fused_width));
  std::size_t channels = c.base_channels;
  deconvs_ = make_deconvs(store_, c, rng, channels);
  rgb_head_ = Deconv2d<T>(store_, "rgb", channels, 3, 4, 2, 1, c.weight_norm, rng,
                          c.init_std(channels * 4, 1.0));
  mask_head_ = Deconv2d<T>(store_, "mask", channels, 1, 4, 2, 1, c.weight_norm, rng,
                           c.init_std(channels * 4, 1.0));
}

template <typename T>
GeneratorOutput<T> AbsoluteGenerator<T>::synthesize(const Conditions<T>& cond) {
  const auto& c = config_;
  const std::size_t n = cond.batch();
  expect_columns("generator: c", cond.c, n, c.num_classes);
  expect_columns("generator: v", cond.v, n, c.view_dim);
  expect_columns("generator: t", cond.t, n, c.transform_dim);

  auto hc = run_encoder(enc_c_, cond.c, relu_fn<T>);
  auto hv = run_encoder(enc_v_, cond.v, relu_fn<T>);
  auto ht = run_encoder(enc_t_, cond.t, relu_fn<T>);
  auto h = relu(fuse_.forward(concat<T>({hc, hv, ht}, 1)));
  h = project_.forward(h);
  if (c.instance_norm) h = instance_norm_vec(h);
  GeneratorOutput<T> out;
  out.hidden = h;
  const std::size_t s = c.base_size();
  auto x = reshape(relu(h), {n, c.base_channels, s, s});
  for (const auto& d : deconvs_) x = relu(d.forward(x));
  out.rgb = tanh(rgb_head_.forward(x));
  out.mask = sigmoid(mask_head_.forward(x));
  return out;
}

template <typename T>
PartialGenerator<T>::PartialGenerator(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  const std::size_t s = c.base_size();
  const std::size_t half = c.base_channels / 2;
  enc_c_ = make_encoder(store_, "enc_c", c.num_classes, c, rng);
  label_project_ = Dense<T>(store_, "label_project", c.encoder_width, half * s * s, false, rng,
                            c.init_std(c.encoder_width));
  noise_project_ = Dense<T>(store_, "noise_project", c.noise_dim,
                            (c.base_channels - half) * s * s, false, rng, c.init_std(c.noise_dim));
  std::size_t channels = c.base_channels;
  deconvs_ = make_deconvs(store_, c, rng, channels);
  rgb_head_ = Deconv2d<T>(store_, "rgb", channels, 3, 4, 2, 1, c.weight_norm, rng,
                          c.init_std(channels * 4, 1.0));
}

template <typename T>
GeneratorOutput<T> PartialGenerator<T>::synthesize(const Conditions<T>& cond) {
  const auto& c = config_;
  const std::size_t n = cond.batch();
  expect_columns("generator: c", cond.c, n, c.num_classes);
  expect_columns("generator: z", cond.z, n, c.noise_dim);
  const std::size_t s = c.base_size();
  const std::size_t half = c.base_channels / 2;

  auto label = label_project_.forward(run_encoder(enc_c_, cond.c, relu_fn<T>));
  auto noise = noise_project_.forward(cond.z);
  if (c.instance_norm) {
    label = instance_norm_vec(label);
    noise = instance_norm_vec(noise);
  }
  GeneratorOutput<T> out;
  out.hidden = concat<T>({label, noise}, 1);
  auto x = concat<T>({reshape(relu(label), {n, half, s, s}),
                      reshape(relu(noise), {n, c.base_channels - half, s, s})},
                     1);
  for (const auto& d : deconvs_) x = relu(d.forward(x));
  out.rgb = tanh(rgb_head_.forward(x));
  return out;
}

template <typename T>
std::unique_ptr<Generator<T>> make_generator(const ModelConfig& config, std::uint64_t seed) {
  if (config.mode == Mode::Absolute) return std::make_unique<AbsoluteGenerator<T>>(config, seed);
  return std::make_unique<PartialGenerator<T>>(config, seed);
}

// ---------------------------------------------------------------------------

template <typename T>
ConditionalDiscriminator<T>::ConditionalDiscriminator(const ModelConfig& config,
                                                      std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  std::size_t info_width = c.encoder_width;
  info_c_ = make_encoder(store_, "info_c", c.num_classes, c, rng);
  if (c.mode == Mode::Absolute) {
    info_v_ = make_encoder(store_, "info_v", c.view_dim, c, rng);
    info_t_ = make_encoder(store_, "info_t", c.transform_dim, c, rng);
    info_width *= 3;
  }
  info_fuse_ = Dense<T>(store_, "info_fuse", info_width, c.hidden_dim, false, rng,
                        c.init_std(info_width));

  std::size_t channels = c.image_channels();
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    convs_.emplace_back(store_, "conv." + std::to_string(i), channels, c.conv_channels[i], 4, 2, 1,
                        c.weight_norm, rng, c.init_std(channels * 16));
    channels = c.conv_channels[i];
  }
  const std::size_t side = c.image_size >> c.conv_channels.size();
  const std::size_t flat = channels * side * side;
  img_project_ = Dense<T>(store_, "img_project", flat, c.hidden_dim, false, rng, c.init_std(flat));
  head_hidden_ = Dense<T>(store_, "head.0", 3 * c.hidden_dim, c.head_width, false, rng,
                          c.init_std(3 * c.hidden_dim));
  head_out_ = Dense<T>(store_, "head.1", c.head_width, 1, false, rng, c.init_std(c.head_width, 1.0));
}

template <typename T>
Tensor<T> ConditionalDiscriminator<T>::encode_info(const Conditions<T>& cond) {
  const auto& c = config_;
  const std::size_t n = cond.batch();
  expect_columns("discriminator: c", cond.c, n, c.num_classes);
  std::vector<Tensor<T>> parts{run_encoder(info_c_, cond.c, leaky_fn<T>)};
  if (c.mode == Mode::Absolute) {
    expect_columns("discriminator: v", cond.v, n, c.view_dim);
    expect_columns("discriminator: t", cond.t, n, c.transform_dim);
    parts.push_back(run_encoder(info_v_, cond.v, leaky_fn<T>));
    parts.push_back(run_encoder(info_t_, cond.t, leaky_fn<T>));
  }
  return leaky_relu(info_fuse_.forward(concat(parts, 1)));
}

template <typename T>
Tensor<T> ConditionalDiscriminator<T>::encode_image(const Tensor<T>& image, Rng* rng,
                                                    Tensor<T>* features) {
  const auto& c = config_;
  if (image.rank() != 4 || image.dim(1) != c.image_channels() || image.dim(2) != c.image_size ||
      image.dim(3) != c.image_size)
    throw ShapeError("discriminator: expected image [N x " + std::to_string(c.image_channels()) +
                     " x " + std::to_string(c.image_size) + " x " + std::to_string(c.image_size) +
                     "], got " + shape_string(image.shape()));
  auto x = image;
  for (const auto& conv : convs_) {
    x = leaky_relu(conv.forward(x));
    if (rng != nullptr && c.dropout_rate > 0.0) x = dropout(x, c.dropout_rate, *rng);
  }
  const std::size_t n = x.dim(0);
  x = reshape(x, {n, x.numel() / n});
  if (features != nullptr) *features = x;
  return leaky_relu(img_project_.forward(x));
}

template <typename T>
Tensor<T> ConditionalDiscriminator<T>::score(const Conditions<T>& cond, const Tensor<T>& image,
                                             Rng* rng) {
  if (image.rank() < 1 || image.dim(0) != cond.batch())
    throw ShapeError("discriminator: image batch " + shape_string(image.shape()) +
                     " does not match condition batch " + std::to_string(cond.batch()));
  auto x = combine(encode_info(cond), encode_image(image, rng));
  return sigmoid(head_out_.forward(leaky_relu(head_hidden_.forward(x))));
}

template <typename T>
Tensor<T> combine(const Tensor<T>& x_info, const Tensor<T>& x_img) {
  if (x_info.shape() != x_img.shape() || x_info.rank() != 2)
    throw ShapeError("combine: information and image vectors must be of the same dimension [N x D_h], got " +
                     shape_string(x_info.shape()) + " and " + shape_string(x_img.shape()));
  return concat<T>({hadamard(x_info, x_img), x_info, x_img}, 1);
}

template <typename T>
Tensor<T> l2_baseline_loss(const Tensor<T>& rgb, const Tensor<T>& mask,
                           const Tensor<T>& target_rgb, const Tensor<T>& target_mask) {
  if (rgb.shape() != target_rgb.shape())
    throw ShapeError("l2_baseline_loss: rgb " + shape_string(rgb.shape()) + " vs target " +
                     shape_string(target_rgb.shape()));
  auto d = sub(rgb, target_rgb);
  auto loss = mean(hadamard(d, d));
  if (mask.defined()) {
    if (!target_mask.defined() || mask.shape() != target_mask.shape())
      throw ShapeError("l2_baseline_loss: mask shape mismatch");
    auto m = sub(mask, target_mask);
    loss = add(loss, mean(hadamard(m, m)));
  }
  return loss;
}

#define CONDGAN_INSTANTIATE_MODELS(T)                                                          \
  template Conditions<T> concat_conditions<T>(const std::vector<Conditions<T>>&);             \
  template Tensor<T> discriminator_input<T>(const Tensor<T>&, const Tensor<T>&);              \
  template class AbsoluteGenerator<T>;                                                        \
  template class PartialGenerator<T>;                                                         \
  template class ConditionalDiscriminator<T>;                                                 \
  template std::unique_ptr<Generator<T>> make_generator<T>(const ModelConfig&, std::uint64_t); \
  template Tensor<T> combine<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> l2_baseline_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const Tensor<T>&);

CONDGAN_INSTANTIATE_MODELS(float)
CONDGAN_INSTANTIATE_MODELS(double)

#undef CONDGAN_INSTANTIATE_MODELS

}  // namespace condgan
