#include "condgan/figures.hpp"

#include "condgan/errors.hpp"

namespace condgan {

std::vector<float> noise_vector(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> z(dim);
  for (auto& e : z) e = static_cast<float>(rng.normal());
  return z;
}

Frame generate_frame(Generator<float>& g, const ModelConfig& model, const std::vector<double>& classes,
                     const ViewPoint& view, const Transform& tr, const std::vector<float>& z) {
  if (classes.size() != model.num_classes)
    throw ConfigError("class vector has " + std::to_string(classes.size()) + " entries, model has " +
                      std::to_string(model.num_classes) + " classes");
  auto cond = make_conditions<float>({classes}, {view}, {tr});
  if (model.mode == Mode::Partial) {
    if (z.size() != model.noise_dim) throw ConfigError("noise vector has the wrong size");
    cond.z = Tensor<float>::from({1, model.noise_dim}, z);
  }
  FreezeGuard<float> freeze(g.params());
  const auto out = g.synthesize(cond);
  Frame f;
  f.height = out.rgb.dim(2);
  f.width = out.rgb.dim(3);
  f.rgb.assign(out.rgb.data().begin(), out.rgb.data().end());
  if (out.mask.defined()) f.mask.assign(out.mask.data().begin(), out.mask.data().end());
  return f;
}

Frame tile(const std::vector<Frame>& frames, std::size_t rows, std::size_t cols) {
  if (frames.empty() || rows * cols != frames.size())
    throw ConfigError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not hold " +
                      std::to_string(frames.size()) + " frames");
  const std::size_t h = frames[0].height, w = frames[0].width;
  Frame out;
  out.height = rows * h;
  out.width = cols * w;
  out.rgb.assign(3 * out.height * out.width, 0.0f);
  const bool masks = !frames[0].mask.empty();
  if (masks) out.mask.assign(out.height * out.width, 0.0f);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& f = frames[k];
    if (f.height != h || f.width != w) throw ShapeError("tile: frames differ in size");
    const std::size_t r0 = (k / cols) * h, c0 = (k % cols) * w;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          out.rgb[(ch * out.height + r0 + i) * out.width + c0 + j] = f.rgb[(ch * h + i) * w + j];
    if (masks)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) out.mask[(r0 + i) * out.width + c0 + j] = f.mask[i * w + j];
  }
  return out;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& spec) {
  const auto x = spec.find('x');
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("grid '" + spec + "' is not ROWSxCOLS");
    return static_cast<std::size_t>(std::stoul(s));
  };
  if (x == std::string::npos) throw ConfigError("grid '" + spec + "' is not ROWSxCOLS");
  const auto rows = number(spec.substr(0, x)), cols = number(spec.substr(x + 1));
  if (rows == 0 || cols == 0) throw ConfigError("grid '" + spec + "' has an empty side");
  return {rows, cols};
}

std::vector<double> rotation_azimuths(std::size_t n) {
  std::vector<double> az(n);
  for (std::size_t k = 0; k < n; ++k) az[k] = kTwoPi * static_cast<double>(k) / static_cast<double>(n);
  return az;
}

std::vector<std::vector<double>> class_blends(std::size_t from, std::size_t to, std::size_t n,
                                              std::size_t num_classes) {
  if (from >= num_classes || to >= num_classes) throw ConfigError("class id out of range");
  if (from == to) throw ConfigError("interpolation needs two different classes");
  if (n < 2) throw ConfigError("interpolation needs at least 2 steps");
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> c(num_classes, 0.0);
    if (k == 0) {
      c[from] = 1.0;
    } else if (k + 1 == n) {
      c[to] = 1.0;
    } else {
      const double l = static_cast<double>(k) / static_cast<double>(n - 1);
      c[from] = 1.0 - l;
      c[to] = l;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string encode_mask_ppm(const Frame& frame) {
  std::vector<float> grey(3 * frame.mask.size());
  const std::size_t plane = frame.mask.size();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) grey[ch * plane + p] = 2.0f * frame.mask[p] - 1.0f;
  return encode_ppm(grey, frame.height, frame.width);
}

}  // namespace condgan
