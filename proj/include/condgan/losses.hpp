#pragma once

#include <vector>

#include "condgan/models.hpp"
#include "condgan/random.hpp"
#include "condgan/tensor.hpp"

namespace condgan {

inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights {
  double alpha = 1.0;    // real
  double beta = 1.0;     // generated
  double gamma_c = 1.0;  // wrong class
  double gamma_v = 0.5;  // wrong view point
  double gamma_t = 0.5;  // wrong transformation

  // Throws ConfigError for a negative weight or alpha == beta == 0.
  void validate() const;
};

// Mean over the batch of -(y log p + (1 - y) log(1 - p)), p clamped to
// [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> bce(const Tensor<T>& p, double target);

// Mean over the batch of weights[i] * bce(p[i], target). p is [N] or [N, 1].
template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& p, double target, const std::vector<T>& weights);

// Row-wise squared Euclidean distances between two [N, D] tensors.
template <typename T>
std::vector<T> squared_distances(const Tensor<T>& a, const Tensor<T>& b);

// Replaces each one-hot row of c[N, K] with a one-hot of a uniformly drawn
// different class. Throws PreconditionError when K < 2.
template <typename T>
Tensor<T> negative_classes(const Tensor<T>& c, Rng& rng);

// Index of the largest entry in each row.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x);

// bce(D(c, v, t, G(c, v, t)), 1). D is frozen while the graph is built, so
// only G receives gradients.
template <typename T>
Tensor<T> loss_g(Discriminator<T>& d, Generator<T>& g, const Conditions<T>& cond, Rng* rng);

// bce(D(c, v, t, G(c, v, t)), 0) with G frozen.
template <typename T>
Tensor<T> loss_d_gen(Discriminator<T>& d, Generator<T>& g, const Conditions<T>& cond, Rng* rng);

// bce(D(c, v, t, x), 1) for dataset images x.
template <typename T>
Tensor<T> loss_d_real(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& image,
                      Rng* rng);

// bce(D(c', v, t, x), 0) where cond.c already holds the wrong classes.
template <typename T>
Tensor<T> loss_d_neg_c(Discriminator<T>& d, const Conditions<T>& wrong, const Tensor<T>& image,
                       Rng* rng);

// mean_i ||v_i - v'_i||^2 * bce(D(c, v', t, x)_i, 0)
template <typename T>
Tensor<T> loss_d_neg_v(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& v_wrong,
                       const Tensor<T>& image, Rng* rng);

// mean_i ||t_i - t'_i||^2 * bce(D(c, v, t', x)_i, 0)
template <typename T>
Tensor<T> loss_d_neg_t(Discriminator<T>& d, const Conditions<T>& cond, const Tensor<T>& t_wrong,
                       const Tensor<T>& image, Rng* rng);

template <typename T>
struct DiscriminatorLosses {
  Tensor<T> real, gen, neg_c, neg_v, neg_t;
};

// alpha * real + beta * gen + gamma_c * neg_c + gamma_v * neg_v + gamma_t * neg_t.
// Components with a zero weight may be left undefined.
template <typename T>
Tensor<T> loss_d_total(const DiscriminatorLosses<T>& parts, const LossWeights& weights);

}  // namespace condgan
