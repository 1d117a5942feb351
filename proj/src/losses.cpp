#include "condgan/losses.hpp"

#include "condgan/errors.hpp"
#include "condgan/layers.hpp"

namespace condgan {

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma_c, gamma_v, gamma_t})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw ConfigError("loss weights: alpha and beta are both zero");
}

template <typename T>
Tensor<T> bce(const Tensor<T>& p, double target) {
  auto y = Tensor<T>::full(p.shape(), static_cast<T>(target));
  return mean(binary_cross_entropy(p, y, T(kProbabilityClamp)));
}

template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& p, double target, const std::vector<T>& weights) {
  const std::size_t n = p.rank() == 0 ? 1 : p.dim(0);
  if (p.numel() != n || weights.size() != n)
    throw ShapeError("weighted_bce: " + std::to_string(weights.size()) + " weights for scores " +
                     shape_string(p.shape()));
  auto y = Tensor<T>::full(p.shape(), static_cast<T>(target));
  auto per_sample = binary_cross_entropy(p, y, T(kProbabilityClamp));
  return mean(hadamard(per_sample, Tensor<T>::from(p.shape(), weights)));
}

template <typename T>
std::vector<T> squared_distances(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() != 2)
    throw ShapeError("squared_distances: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const T diff = a[i * d + j] - b[i * d + j];
      out[i] += diff * diff;
    }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows: expected a matrix, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1);
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < k; ++j)
      if (x[i * k + j] > x[i * k + out[i]]) out[i] = j;
  return out;
}

template <typename T>
Tensor<T> negative_classes(const Tensor<T>& c, Rng& rng) {
  if (c.rank() != 2) throw ShapeError("negative_classes: expected [N, K], got " + shape_string(c.shape()));
  const std::size_t n = c.dim(0), k = c.dim(1);
  if (k < 2) throw PreconditionError("negative_classes: need at least 2 classes");
  const auto truth = argmax_rows(c);
  std::vector<T> out(n * k, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t wrong = rng.uniform_index(k - 1);
    if (wrong >= truth[i]) ++wrong;
    out[i * k + wrong] = T(1);
  }
  return Tensor<T>::from(c.shape(), std::move(out));
}

template <typename T>
Tensor<T> loss_g(Discriminator<T>& d, Generator<T>& g, const Conditions<T>& cond, Rng* rng) {
  auto out = g.synthesize(cond);
  FreezeGuard<T> frozen(d.params());
  return bce(d.score(cond, discriminator_input(out.rgb, out.mask), rng), 1.0);
}

template <typename T>
Tensor<T> loss_d_gen(Discriminator<T>& d, Generator<T>& g, const Conditions<T>& cond, Rng* rng) {
  GeneratorOutput<T> out;
  {
    FreezeGuard<T> frozen(g.params());
    out = g.synthesize(cond);
  }
  return bce(d.score(cond, discriminator_input(out.rgb, out.mask), rng), 0.0);
}

template <typename T>
Tensor<T> loss_d_real(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& image,
                      Rng* rng) {
  return bce(d.score(cond, image, rng), 1.0);
}

template <typename T>
Tensor<T> loss_d_neg_c(Discriminator<T>& d, const Conditions<T>& wrong, const Tensor<T>& image,
                       Rng* rng) {
  return bce(d.score(wrong, image, rng), 0.0);
}

template <typename T>
Tensor<T> loss_d_neg_v(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& v_wrong,
                       const Tensor<T>& image, Rng* rng) {
  auto wrong = cond;
  wrong.v = v_wrong;
  return weighted_bce(d.score(wrong, image, rng), 0.0, squared_distances(cond.v, v_wrong));
}

template <typename T>
Tensor<T> loss_d_neg_t(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& t_wrong,
                       const Tensor<T>& image, Rng* rng) {
  auto wrong = cond;
  wrong.t = t_wrong;
  return weighted_bce(d.score(wrong, image, rng), 0.0, squared_distances(cond.t, t_wrong));
}

template <typename T>
Tensor<T> loss_d_total(const DiscriminatorLosses<T>& parts, const LossWeights& weights) {
  weights.validate();
  Tensor<T> total;
  auto accumulate = [&](const Tensor<T>& term, double w, const char* name) {
    if (w == 0.0) return;
    if (!term.defined()) throw PreconditionError(std::string("loss_d_total: missing ") + name);
    auto weighted = w == 1.0 ? term : scale(term, static_cast<T>(w));
    total = total.defined() ? add(total, weighted) : weighted;
  };
  accumulate(parts.real, weights.alpha, "real");
  accumulate(parts.gen, weights.beta, "gen");
  accumulate(parts.neg_c, weights.gamma_c, "neg_c");
  accumulate(parts.neg_v, weights.gamma_v, "neg_v");
  accumulate(parts.neg_t, weights.gamma_t, "neg_t");
  return total;
}

#define CONDGAN_INSTANTIATE_LOSSES(T)                                                            \
  template Tensor<T> bce<T>(const Tensor<T>&, double);                                          \
  template Tensor<T> weighted_bce<T>(const Tensor<T>&, double, const std::vector<T>&);          \
  template std::vector<T> squared_distances<T>(const Tensor<T>&, const Tensor<T>&);             \
  template std::vector<std::size_t> argmax_rows<T>(const Tensor<T>&);                           \
  template Tensor<T> negative_classes<T>(const Tensor<T>&, Rng&);                               \
  template Tensor<T> loss_g<T>(Discriminator<T>&, Generator<T>&, const Conditions<T>&, Rng*);   \
  template Tensor<T> loss_d_gen<T>(Discriminator<T>&, Generator<T>&, const Conditions<T>&,      \
                                   Rng*);                                                       \
  template Tensor<T> loss_d_real<T>(Discriminator<T>&, const Conditions<T>&, const Tensor<T>&,  \
                                    Rng*);                                                      \
  template Tensor<T> loss_d_neg_c<T>(Discriminator<T>&, const Conditions<T>&, const Tensor<T>&, \
                                     Rng*);                                                     \
  template Tensor<T> loss_d_neg_v<T>(Discriminator<T>&, const Conditions<T>&, const Tensor<T>&, \
                                     const Tensor<T>&, Rng*);                                   \
  template Tensor<T> loss_d_neg_t<T>(Discriminator<T>&, const Conditions<T>&, const Tensor<T>&, \
                                     const Tensor<T>&, Rng*);                                   \
  template Tensor<T> loss_d_total<T>(const DiscriminatorLosses<T>&, const LossWeights&);

CONDGAN_INSTANTIATE_LOSSES(float)
CONDGAN_INSTANTIATE_LOSSES(double)

#undef CONDGAN_INSTANTIATE_LOSSES

}  // namespace condgan
