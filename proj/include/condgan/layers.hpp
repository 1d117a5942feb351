#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "condgan/random.hpp"
#include "condgan/tensor.hpp"

namespace condgan {

// Named, ordered collection of trainable tensors for one network.
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  // Registers a parameter leaf. Throws ConfigError on a duplicate name.
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values);

  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  // Toggles gradient tracking on every parameter; frozen parameters act as
  // constants in any graph built while frozen.
  void set_trainable(bool on);
  bool trainable() const { return trainable_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  bool trainable_ = true;
};

// Keeps a parameter store frozen for the guard's lifetime.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(ParamStore<T>& store) : store_(store), was_(store.trainable()) {
    store_.set_trainable(false);
  }
  ~FreezeGuard() { store_.set_trainable(was_); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamStore<T>& store_;
  bool was_;
};

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kWeightNormEps = 1e-8;
inline constexpr double kInstanceNormEps = 1e-5;

// Splits `raw` into groups along `axis` (0 for dense rows and conv filters,
// 1 for transposed-conv output channels) and returns
//   g_i * raw_i / sqrt(sum_j raw_ij^2 + eps)
// for each group i. `g` has one entry per group.
template <typename T>
Tensor<T> weight_normalize(const Tensor<T>& raw, const Tensor<T>& g, std::size_t axis,
                           T eps = T(kWeightNormEps));

// Per-group L2 norms along `axis`, matching weight_normalize's grouping.
template <typename T>
std::vector<T> group_norms(std::span<const T> raw, const Shape& shape, std::size_t axis);

// x[N, C, H, W]: each (n, c) plane is shifted to zero mean and scaled to unit
// variance using its own statistics. No affine parameters.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(kInstanceNormEps));

// x[N, D]: the same normalization applied to each row.
template <typename T>
Tensor<T> instance_norm_vec(const Tensor<T>& x, T eps = T(kInstanceNormEps));

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNormState create(ParamStore<T>& store, const std::string& name,
                               std::size_t channels);
};

// x[N, C] or x[N, C, H, W], statistics per channel over the batch and spatial
// axes. Training mode normalizes with batch statistics and blends them into
// the running statistics (running = (1 - momentum) * running + momentum * batch,
// biased variance). Eval mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, bool training);

// Zeroes each element with probability `rate` and scales survivors by
// 1 / (1 - rate). rate == 1 zeroes everything.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng);

// ---------------------------------------------------------------------------
// Parameterized layers

inline constexpr double kInitStd = 0.02;

// Gaussian(0, std) draws for a raw weight tensor.
template <typename T>
std::vector<T> gaussian_init(std::size_t count, Rng& rng, double stddev = kInitStd);

template <typename T>
struct Dense {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]
  Tensor<T> gain;    // [out], defined iff weight-normalized

  Dense() = default;
  Dense(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
        bool weight_norm, Rng& rng, double init_std = kInitStd);

  bool weight_normed() const { return gain.defined(); }
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor<T> effective_weight() const;
  // x[N, in] -> [N, out]
  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [F, C, k, k]
  Tensor<T> bias;    // [F]
  Tensor<T> gain;    // [F] when weight-normalized
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t pad,
         bool weight_norm, Rng& rng, double init_std = kInitStd);

  bool weight_normed() const { return gain.defined(); }
  Tensor<T> effective_weight() const;
  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct Deconv2d {
  Tensor<T> weight;  // [C, F, k, k]
  Tensor<T> bias;    // [F]
  Tensor<T> gain;    // [F] when weight-normalized
  std::size_t stride = 1;
  std::size_t pad = 0;

  Deconv2d() = default;
  Deconv2d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
           std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t pad,
           bool weight_norm, Rng& rng, double init_std = kInitStd);

  bool weight_normed() const { return gain.defined(); }
  Tensor<T> effective_weight() const;
  Tensor<T> forward(const Tensor<T>& x) const;
};

}  // namespace condgan
