#include "condgan/layers.hpp"

#include <cmath>

#include "condgan/errors.hpp"

namespace condgan {

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  if (index_.count(name)) throw ConfigError("parameter '" + name + "' registered twice");
  auto t = Tensor<T>::parameter(std::move(shape), std::move(values));
  t.set_requires_grad(trainable_);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
void ParamStore<T>::set_trainable(bool on) {
  trainable_ = on;
  for (auto& [name, t] : entries_) t.set_requires_grad(on);
}

// ---------------------------------------------------------------------------

namespace {

struct Grouping {
  std::size_t outer = 1;
  std::size_t groups = 1;
  std::size_t inner = 1;
};

Grouping grouping_for(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("weight_normalize: group axis out of range");
  Grouping g;
  for (std::size_t d = 0; d < axis; ++d) g.outer *= shape[d];
  g.groups = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) g.inner *= shape[d];
  return g;
}

template <typename T>
std::vector<T> group_sums(const Grouping& gr, std::span<const T> a, std::span<const T> b) {
  std::vector<T> sums(gr.groups, T(0));
  for (std::size_t o = 0; o < gr.outer; ++o)
    for (std::size_t k = 0; k < gr.groups; ++k) {
      const std::size_t base = (o * gr.groups + k) * gr.inner;
      T acc = 0;
      for (std::size_t i = 0; i < gr.inner; ++i) acc += a[base + i] * b[base + i];
      sums[k] += acc;
    }
  return sums;
}

// Normalizes consecutive blocks of `group` elements to zero mean, unit variance.
template <typename T>
Tensor<T> normalize_blocks(const char* op, const Tensor<T>& x, std::size_t group, T eps) {
  if (group == 0 || x.numel() % group != 0) throw ShapeError(std::string(op) + ": bad grouping");
  const std::size_t blocks = x.numel() / group;
  const auto in = x.data();
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    const T* src = in.data() + b * group;
    T mu = 0;
    for (std::size_t i = 0; i < group; ++i) mu += src[i];
    mu /= static_cast<T>(group);
    T var = 0;
    for (std::size_t i = 0; i < group; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(group);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[b] = inv;
    for (std::size_t i = 0; i < group; ++i) out[b * group + i] = (src[i] - mu) * inv;
  }
  return make_op<T>(op, x.shape(), std::move(out), {x},
                    [group, blocks, inv_std = std::move(inv_std)](Node<T>& self) {
                      auto& X = *self.inputs[0];
                      if (!self.wants(X)) return;
                      auto g = X.ensure_grad();
                      const T m = static_cast<T>(group);
                      for (std::size_t b = 0; b < blocks; ++b) {
                        const T* dy = self.grad.data() + b * group;
                        const T* y = self.value.data() + b * group;
                        T sum_dy = 0, sum_dy_y = 0;
                        for (std::size_t i = 0; i < group; ++i) {
                          sum_dy += dy[i];
                          sum_dy_y += dy[i] * y[i];
                        }
                        const T mean_dy = sum_dy / m, mean_dy_y = sum_dy_y / m;
                        for (std::size_t i = 0; i < group; ++i)
                          g[b * group + i] += inv_std[b] * (dy[i] - mean_dy - y[i] * mean_dy_y);
                      }
                    });
}

}  // namespace

template <typename T>
std::vector<T> group_norms(std::span<const T> raw, const Shape& shape, std::size_t axis) {
  const auto gr = grouping_for(shape, axis);
  auto sq = group_sums<T>(gr, raw, raw);
  for (auto& v : sq) v = std::sqrt(v);
  return sq;
}

template <typename T>
Tensor<T> weight_normalize(const Tensor<T>& raw, const Tensor<T>& g, std::size_t axis, T eps) {
  const auto gr = grouping_for(raw.shape(), axis);
  if (g.rank() != 1 || g.dim(0) != gr.groups) {
    throw ShapeError("weight_normalize: scale " + shape_string(g.shape()) + " does not match " +
                     std::to_string(gr.groups) + " groups of " + shape_string(raw.shape()));
  }
  const auto v = raw.data();
  const auto gv = g.data();
  auto norms = group_sums<T>(gr, v, v);
  for (auto& n : norms) n = std::sqrt(n + eps);
  std::vector<T> out(raw.numel());
  for (std::size_t o = 0; o < gr.outer; ++o)
    for (std::size_t k = 0; k < gr.groups; ++k) {
      const std::size_t base = (o * gr.groups + k) * gr.inner;
      const T factor = gv[k] / norms[k];
      for (std::size_t i = 0; i < gr.inner; ++i) out[base + i] = v[base + i] * factor;
    }
  return make_op<T>(
      "weight_normalize", raw.shape(), std::move(out), {raw, g},
      [gr, norms = std::move(norms)](Node<T>& self) {
        auto& V = *self.inputs[0];
        auto& G = *self.inputs[1];
        // s_k = <dw_k, v_k>; dv = g/n (dw - v s / n^2); dg = s / n
        const auto s = group_sums<T>(gr, self.grad, V.value);
        if (self.wants(V)) {
          auto dv = V.ensure_grad();
          for (std::size_t o = 0; o < gr.outer; ++o)
            for (std::size_t k = 0; k < gr.groups; ++k) {
              const std::size_t base = (o * gr.groups + k) * gr.inner;
              const T n = norms[k];
              const T a = G.value[k] / n;
              const T b = s[k] / (n * n);
              for (std::size_t i = 0; i < gr.inner; ++i)
                dv[base + i] += a * (self.grad[base + i] - V.value[base + i] * b);
            }
        }
        if (self.wants(G)) {
          auto dg = G.ensure_grad();
          for (std::size_t k = 0; k < gr.groups; ++k) dg[k] += s[k] / norms[k];
        }
      });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  if (x.rank() != 4) throw ShapeError("instance_norm: expected [N, C, H, W], got " + shape_string(x.shape()));
  return normalize_blocks<T>("instance_norm", x, x.dim(2) * x.dim(3), eps);
}

template <typename T>
Tensor<T> instance_norm_vec(const Tensor<T>& x, T eps) {
  if (x.rank() != 2) throw ShapeError("instance_norm_vec: expected [N, D], got " + shape_string(x.shape()));
  return normalize_blocks<T>("instance_norm_vec", x, x.dim(1), eps);
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(ParamStore<T>& store, const std::string& name,
                                            std::size_t channels) {
  BatchNormState s;
  s.gamma = store.add(name + ".gamma", {channels}, std::vector<T>(channels, T(1)));
  s.beta = store.add(name + ".beta", {channels}, std::vector<T>(channels, T(0)));
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  return s;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, bool training) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batch_norm: expected [N, C] or [N, C, H, W], got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), channels = x.dim(1);
  if (state.gamma.dim(0) != channels) throw ShapeError("batch_norm: channel count mismatch");
  if (training && n < 2) throw PreconditionError("batch_norm: training mode needs a batch of at least 2");
  const std::size_t plane = x.numel() / (n * channels);
  const std::size_t count = n * plane;
  const auto in = x.data();
  auto at = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * channels + c) * plane + i; };

  std::vector<T> mu(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (training) {
      T m = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) m += in[at(b, c, i)];
      m /= static_cast<T>(count);
      T v = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) v += (in[at(b, c, i)] - m) * (in[at(b, c, i)] - m);
      v /= static_cast<T>(count);
      mu[c] = m;
      inv_std[c] = T(1) / std::sqrt(v + state.eps);
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * v;
    } else {
      mu[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  const auto gamma = state.gamma.data(), beta = state.beta.data();
  std::vector<T> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const auto k = at(b, c, i);
        xhat[k] = (in[k] - mu[c]) * inv_std[c];
        out[k] = gamma[c] * xhat[k] + beta[c];
      }
  return make_op<T>(
      training ? "batch_norm_train" : "batch_norm_eval", x.shape(), std::move(out),
      {x, state.gamma, state.beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& Gm = *self.inputs[1];
        auto& Bt = *self.inputs[2];
        auto idx = [&](std::size_t b, std::size_t c, std::size_t i) { return (b * channels + c) * plane + i; };
        std::vector<T> sum_dy(channels, T(0)), sum_dy_xhat(channels, T(0));
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              const auto k = idx(b, c, i);
              sum_dy[c] += self.grad[k];
              sum_dy_xhat[c] += self.grad[k] * xhat[k];
            }
        if (self.wants(Gm)) {
          auto g = Gm.ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) g[c] += sum_dy_xhat[c];
        }
        if (self.wants(Bt)) {
          auto g = Bt.ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) g[c] += sum_dy[c];
        }
        if (self.wants(X)) {
          auto g = X.ensure_grad();
          const T m = static_cast<T>(count);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < channels; ++c) {
              const T scale_c = Gm.value[c] * inv_std[c];
              for (std::size_t i = 0; i < plane; ++i) {
                const auto k = idx(b, c, i);
                if (training) {
                  g[k] += scale_c * (self.grad[k] - sum_dy[c] / m - xhat[k] * sum_dy_xhat[c] / m);
                } else {
                  g[k] += scale_c * self.grad[k];
                }
              }
            }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate > 1.0) throw ConfigError("dropout: rate must lie in [0, 1]");
  if (rate == 0.0) return x;
  const T keep_scale = rate >= 1.0 ? T(0) : static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  return hadamard(x, Tensor<T>::from(x.shape(), std::move(mask)));
}

template <typename T>
std::vector<T> gaussian_init(std::size_t count, Rng& rng, double stddev) {
  std::vector<T> v(count);
  for (auto& e : v) e = static_cast<T>(rng.normal(0.0, stddev));
  return v;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> make_gain(ParamStore<T>& store, const std::string& name, const Tensor<T>& weight,
                    std::size_t axis) {
  auto norms = group_norms<T>(weight.data(), weight.shape(), axis);
  const std::size_t n = norms.size();
  return store.add(name + ".g", {n}, std::move(norms));
}

}  // namespace

template <typename T>
Dense<T>::Dense(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                bool weight_norm, Rng& rng, double init_std) {
  weight = store.add(name + ".w", {out, in}, gaussian_init<T>(out * in, rng, init_std));
  bias = store.add(name + ".b", {out}, std::vector<T>(out, T(0)));
  if (weight_norm) gain = make_gain(store, name, weight, 0);
}

template <typename T>
Tensor<T> Dense<T>::effective_weight() const {
  return weight_normed() ? weight_normalize(weight, gain, 0) : weight;
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) const {
  return bias_add(matmul(x, transpose(effective_weight())), bias);
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
                  std::size_t out_channels, std::size_t kernel, std::size_t stride_,
                  std::size_t pad_, bool weight_norm, Rng& rng, double init_std)
    : stride(stride_), pad(pad_) {
  const std::size_t count = out_channels * in_channels * kernel * kernel;
  weight = store.add(name + ".w", {out_channels, in_channels, kernel, kernel},
                     gaussian_init<T>(count, rng, init_std));
  bias = store.add(name + ".b", {out_channels}, std::vector<T>(out_channels, T(0)));
  if (weight_norm) gain = make_gain(store, name, weight, 0);
}

template <typename T>
Tensor<T> Conv2d<T>::effective_weight() const {
  return weight_normed() ? weight_normalize(weight, gain, 0) : weight;
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  return bias_add(conv2d(x, effective_weight(), stride, pad), bias);
}

template <typename T>
Deconv2d<T>::Deconv2d(ParamStore<T>& store, const std::string& name, std::size_t in_channels,
                      std::size_t out_channels, std::size_t kernel, std::size_t stride_,
                      std::size_t pad_, bool weight_norm, Rng& rng, double init_std)
    : stride(stride_), pad(pad_) {
  const std::size_t count = out_channels * in_channels * kernel * kernel;
  weight = store.add(name + ".w", {in_channels, out_channels, kernel, kernel},
                     gaussian_init<T>(count, rng, init_std));
  bias = store.add(name + ".b", {out_channels}, std::vector<T>(out_channels, T(0)));
  if (weight_norm) gain = make_gain(store, name, weight, 1);
}

template <typename T>
Tensor<T> Deconv2d<T>::effective_weight() const {
  return weight_normed() ? weight_normalize(weight, gain, 1) : weight;
}

template <typename T>
Tensor<T> Deconv2d<T>::forward(const Tensor<T>& x) const {
  return bias_add(deconv2d(x, effective_weight(), stride, pad), bias);
}

#define CONDGAN_INSTANTIATE_LAYERS(T)                                                         \
  template class ParamStore<T>;                                                              \
  template std::vector<T> group_norms<T>(std::span<const T>, const Shape&, std::size_t);     \
  template Tensor<T> weight_normalize<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, T); \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> instance_norm_vec<T>(const Tensor<T>&, T);                              \
  template struct BatchNormState<T>;                                                         \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, BatchNormState<T>&, bool);              \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&);                             \
  template std::vector<T> gaussian_init<T>(std::size_t, Rng&, double);                       \
  template struct Dense<T>;                                                                  \
  template struct Conv2d<T>;                                                                 \
  template struct Deconv2d<T>;

CONDGAN_INSTANTIATE_LAYERS(float)
CONDGAN_INSTANTIATE_LAYERS(double)

#undef CONDGAN_INSTANTIATE_LAYERS

}  // namespace condgan
