#include "condgan/gradsuite.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "condgan/gradcheck.hpp"
#include "condgan/layers.hpp"
#include "condgan/losses.hpp"
#include "condgan/models.hpp"

namespace condgan {

namespace {

using T = Tensor<double>;

std::vector<double> draws(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return v;
}

T leaf(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return T::parameter(s, draws(shape_numel(s), rng, lo, hi));
}

T constant(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return T::from(s, draws(shape_numel(s), rng, lo, hi));
}

class Suite {
 public:
  void run(const std::string& group, const std::string& name, const std::vector<NamedLeaf>& leaves,
           const std::function<T()>& f, double tolerance) {
    GradCheckOptions opt;
    opt.tolerance = tolerance;
    const auto r = grad_check(f, leaves, opt);
    checks.push_back({group, name, r.max_rel_error, tolerance, r.passed});
  }
  std::vector<SuiteCheck> checks;
};

void op_checks(Suite& s, Rng& rng) {
  const double tol = kOpTolerance;
  {
    auto a = leaf({3, 4}, rng), b = leaf({4, 2}, rng);
    auto u = constant({3, 2}, rng);
    s.run("op", "matmul", {{"a", a}, {"b", b}}, [=] { return sum(hadamard(matmul(a, b), u)); }, tol);
  }
  {
    auto a = leaf({3, 4}, rng);
    auto u = constant({4, 3}, rng);
    s.run("op", "transpose", {{"a", a}}, [=] { return sum(hadamard(transpose(a), u)); }, tol);
  }
  for (auto [stride, pad, k] : {std::array<std::size_t, 3>{1, 0, 3}, {2, 1, 4}, {2, 0, 3}}) {
    auto x = leaf({2, 2, 7, 7}, rng), w = leaf({3, 2, k, k}, rng);
    const std::size_t out = (7 + 2 * pad - k) / stride + 1;
    auto u = constant({2, 3, out, out}, rng);
    s.run("op", "conv2d s" + std::to_string(stride) + " p" + std::to_string(pad) + " k" + std::to_string(k),
          {{"x", x}, {"w", w}}, [=] { return sum(hadamard(conv2d(x, w, stride, pad), u)); }, tol);
  }
  for (auto [stride, pad, k] : {std::array<std::size_t, 3>{1, 0, 3}, {2, 1, 4}, {2, 0, 3}}) {
    auto x = leaf({2, 2, 3, 3}, rng), w = leaf({2, 3, k, k}, rng);
    const std::size_t out = (3 - 1) * stride + k - 2 * pad;
    auto u = constant({2, 3, out, out}, rng);
    s.run("op", "deconv2d s" + std::to_string(stride) + " p" + std::to_string(pad) + " k" + std::to_string(k),
          {{"x", x}, {"w", w}}, [=] { return sum(hadamard(deconv2d(x, w, stride, pad), u)); }, tol);
  }
  {
    auto a = leaf({2, 3}, rng), b = leaf({2, 3}, rng);
    auto u = constant({2, 3}, rng);
    s.run("op", "add", {{"a", a}, {"b", b}}, [=] { return sum(hadamard(add(a, b), u)); }, tol);
    s.run("op", "sub", {{"a", a}, {"b", b}}, [=] { return sum(hadamard(sub(a, b), u)); }, tol);
    s.run("op", "hadamard", {{"a", a}, {"b", b}}, [=] { return sum(hadamard(hadamard(a, b), u)); }, tol);
    s.run("op", "scale", {{"a", a}}, [=] { return sum(hadamard(scale(a, -1.7), u)); }, tol);
  }
  {
    auto x = leaf({2, 3, 2, 2}, rng), b = leaf({3}, rng);
    auto u = constant(x.shape(), rng);
    s.run("op", "bias_add", {{"x", x}, {"b", b}}, [=] { return sum(hadamard(bias_add(x, b), u)); }, tol);
  }
  for (std::size_t axis : {0u, 1u}) {
    auto a = leaf({2, 3}, rng), b = leaf({2, 3}, rng);
    Shape joined = axis == 0 ? Shape{4, 3} : Shape{2, 6};
    auto u = constant(joined, rng);
    s.run("op", "concat axis " + std::to_string(axis), {{"a", a}, {"b", b}},
          [=] { return sum(hadamard(concat<double>({a, b}, axis), u)); }, tol);
  }
  {
    auto x = leaf({5, 3}, rng);
    auto u = constant({2, 3}, rng);
    s.run("op", "slice", {{"x", x}}, [=] { return sum(hadamard(slice(x, 0, 1, 3), u)); }, tol);
    auto r = constant({3, 5}, rng);
    s.run("op", "reshape", {{"x", x}}, [=] { return sum(hadamard(reshape(x, {3, 5}), r)); }, tol);
    s.run("op", "sum", {{"x", x}}, [=] { return scale(sum(x), 0.3); }, tol);
    s.run("op", "mean", {{"x", x}}, [=] { return scale(mean(x), 2.0); }, tol);
  }
  {
    // Inputs kept away from the kink at 0.
    std::vector<double> v = draws(12, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    auto x = T::parameter({3, 4}, v);
    auto u = constant({3, 4}, rng);
    s.run("op", "relu", {{"x", x}}, [=] { return sum(hadamard(relu(x), u)); }, tol);
    s.run("op", "leaky_relu", {{"x", x}}, [=] { return sum(hadamard(leaky_relu(x), u)); }, tol);
  }
  {
    auto x = leaf({3, 4}, rng, -2.0, 2.0);
    auto u = constant({3, 4}, rng);
    s.run("op", "tanh", {{"x", x}}, [=] { return sum(hadamard(tanh(x), u)); }, tol);
    s.run("op", "sigmoid", {{"x", x}}, [=] { return sum(hadamard(sigmoid(x), u)); }, tol);
  }
  {
    auto p = leaf({6}, rng, 0.05, 0.95);
    auto y = T::from({6}, {0, 1, 0.3, 1, 0, 0.8});
    s.run("op", "binary_cross_entropy", {{"p", p}},
          [=] { return sum(binary_cross_entropy(p, y)); }, tol);
  }
}

void layer_checks(Suite& s, Rng& rng) {
  const double tol = kOpTolerance;
  for (std::size_t axis : {0u, 1u}) {
    auto raw = leaf({3, 2, 2, 2}, rng);
    auto g = leaf({raw.dim(axis)}, rng);
    auto u = constant(raw.shape(), rng);
    s.run("layer", "weight_normalize axis " + std::to_string(axis), {{"raw", raw}, {"g", g}},
          [=] { return sum(hadamard(weight_normalize(raw, g, axis), u)); }, tol);
  }
  {
    auto x = leaf({2, 2, 3, 3}, rng);
    auto u = constant(x.shape(), rng);
    s.run("layer", "instance_norm", {{"x", x}}, [=] { return sum(hadamard(instance_norm(x), u)); }, tol);
    auto xv = leaf({3, 6}, rng);
    auto uv = constant(xv.shape(), rng);
    s.run("layer", "instance_norm_vec", {{"x", xv}},
          [=] { return sum(hadamard(instance_norm_vec(xv), uv)); }, tol);
  }
  for (bool training : {true, false}) {
    ParamStore<double> store;
    auto state = BatchNormState<double>::create(store, "bn", 3);
    state.gamma.mutable_data()[1] = 1.7;
    state.running_var = {0.5, 2.0, 1.1};
    auto x = leaf({4, 3, 2, 2}, rng);
    auto u = constant(x.shape(), rng);
    s.run("layer", training ? "batch_norm train" : "batch_norm eval",
          {{"x", x}, {"gamma", state.gamma}, {"beta", state.beta}},
          [=] {
            auto copy = state;  // running statistics must not drift between probes
            return sum(hadamard(batch_norm(x, copy, training), u));
          },
          tol);
  }
  {
    auto x = leaf({4, 5}, rng);
    auto u = constant(x.shape(), rng);
    s.run("layer", "dropout", {{"x", x}},
          [=] {
            Rng fixed(3);  // same mask on every probe
            return sum(hadamard(dropout(x, 0.4, fixed), u));
          },
          tol);
  }
  for (bool wn : {true, false}) {
    ParamStore<double> store;
    Dense<double> d(store, "fc", 5, 4, wn, rng);
    Conv2d<double> c(store, "conv", 2, 3, 4, 2, 1, wn, rng);
    Deconv2d<double> t(store, "deconv", 2, 3, 4, 2, 1, wn, rng);
    // Larger weights keep finite-difference probes well above rounding noise.
    for (auto& [name, p] : store.entries()) {
      T handle = p;
      for (auto& e : handle.mutable_data()) e *= 25.0;
    }
    auto xd = constant({3, 5}, rng), xc = constant({2, 2, 6, 6}, rng), xt = constant({2, 2, 3, 3}, rng);
    auto ud = constant({3, 4}, rng), uc = constant({2, 3, 3, 3}, rng), ut = constant({2, 3, 6, 6}, rng);
    const std::vector<NamedLeaf> leaves(store.entries().begin(), store.entries().end());
    const std::string suffix = wn ? " (weight-normed)" : " (raw)";
    s.run("layer", "dense" + suffix, leaves, [=] { return sum(hadamard(d.forward(xd), ud)); }, tol);
    s.run("layer", "conv" + suffix, leaves, [=] { return sum(hadamard(c.forward(xc), uc)); }, tol);
    s.run("layer", "deconv" + suffix, leaves, [=] { return sum(hadamard(t.forward(xt), ut)); }, tol);
  }
}

void loss_checks(Suite& s, Rng& rng) {
  const double tol = kOpTolerance;
  auto p = leaf({5, 1}, rng, 0.05, 0.95);
  s.run("loss", "bce", {{"p", p}}, [=] { return bce(p, 1.0); }, tol);
  const std::vector<double> w = draws(5, rng, 0.0, 4.0);
  s.run("loss", "weighted_bce", {{"p", p}}, [=] { return weighted_bce(p, 0.0, w); }, tol);
  auto a = leaf({3, 4}, rng), b = leaf({3, 4}, rng);
  auto u = constant({3, 12}, rng);
  s.run("loss", "combine", {{"info", a}, {"image", b}}, [=] { return sum(hadamard(combine(a, b), u)); }, tol);
  auto rgb = leaf({2, 3, 4, 4}, rng), mask = leaf({2, 1, 4, 4}, rng, 0.0, 1.0);
  auto trgb = constant(rgb.shape(), rng), tmask = constant(mask.shape(), rng, 0.0, 1.0);
  s.run("loss", "l2_baseline_loss", {{"rgb", rgb}, {"mask", mask}},
        [=] { return l2_baseline_loss(rgb, mask, trgb, tmask); }, tol);
}

Conditions<double> miniature_conditions(const ModelConfig& cfg, std::size_t n, Rng& rng) {
  std::vector<double> c(n * cfg.num_classes, 0.0), v, t = draws(n * cfg.transform_dim, rng, -0.15, 0.15);
  for (std::size_t i = 0; i < n; ++i) {
    c[i * cfg.num_classes + rng.uniform_index(cfg.num_classes)] = 1.0;
    const double az = rng.uniform(0.0, 6.283185307179586), alt = rng.uniform(-0.7, 0.7);
    for (double e : {std::sin(az), std::cos(az), std::sin(alt), std::cos(alt)}) v.push_back(e);
  }
  Conditions<double> out{T::from({n, cfg.num_classes}, c), T::from({n, 4}, v),
                         T::from({n, cfg.transform_dim}, t), T()};
  if (cfg.mode == Mode::Partial) {
    std::vector<double> z(n * cfg.noise_dim);
    for (auto& e : z) e = rng.normal();
    out.z = T::from({n, cfg.noise_dim}, z);
  }
  return out;
}

void model_checks(Suite& s, Rng& rng) {
  const double tol = kModelTolerance;
  for (Mode mode : {Mode::Absolute, Mode::Partial}) {
    const auto cfg = miniature_config(mode);
    const std::string tag = " (" + mode_name(mode) + ")";
    std::shared_ptr<Generator<double>> g = make_generator<double>(cfg, 53);
    auto d = std::make_shared<ConditionalDiscriminator<double>>(cfg, 59);
    // Zero biases put dead units exactly on the ReLU kink.
    for (auto* store : {&g->params(), &d->params()})
      for (auto& [name, p] : store->entries())
        if (name.ends_with(".b")) {
          T handle = p;
          for (auto& e : handle.mutable_data()) e = rng.uniform(-0.3, 0.3);
        }
    const auto cond = miniature_conditions(cfg, 2, rng);
    const auto up_rgb = constant({2, 3, cfg.image_size, cfg.image_size}, rng);
    const auto up_mask = constant({2, 1, cfg.image_size, cfg.image_size}, rng);
    const std::vector<NamedLeaf> g_leaves(g->params().entries().begin(), g->params().entries().end());
    s.run("model", "generator" + tag, g_leaves,
          [=] {
            auto out = g->synthesize(cond);
            auto l = sum(hadamard(out.rgb, up_rgb));
            return out.mask.defined() ? add(l, sum(hadamard(out.mask, up_mask))) : l;
          },
          tol);

    auto image = leaf({2, cfg.image_channels(), cfg.image_size, cfg.image_size}, rng);
    std::vector<NamedLeaf> d_leaves(d->params().entries().begin(), d->params().entries().end());
    d_leaves.emplace_back("image", image);
    s.run("model", "discriminator" + tag, d_leaves, [=] { return bce(d->score(cond, image, nullptr), 1.0); },
          tol);
    s.run("model", "loss_g through frozen discriminator" + tag, g_leaves,
          [=] { return loss_g<double>(*d, *g, cond, nullptr); }, tol);

    Rng neg_rng(71);
    Conditions<double> wrong = cond;
    wrong.c = negative_classes(cond.c, neg_rng);
    const auto v2 = miniature_conditions(cfg, 2, neg_rng).v;
    const auto t2 = miniature_conditions(cfg, 2, neg_rng).t;
    std::vector<NamedLeaf> dd_leaves(d->params().entries().begin(), d->params().entries().end());
    s.run("model", "loss_d_total" + tag, dd_leaves,
          [=] {
            DiscriminatorLosses<double> parts;
            parts.real = loss_d_real<double>(*d, cond, image, nullptr);
            parts.gen = loss_d_gen<double>(*d, *g, cond, nullptr);
            parts.neg_c = loss_d_neg_c<double>(*d, wrong, image, nullptr);
            parts.neg_v = loss_d_neg_v<double>(*d, cond, v2, image, nullptr);
            parts.neg_t = loss_d_neg_t<double>(*d, cond, t2, image, nullptr);
            return loss_d_total(parts, LossWeights{});
          },
          tol);
  }
}

// tanh whose backward rule uses 1 - y instead of 1 - y^2.
T broken_tanh(const T& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& e : out) e = std::tanh(e);
  return make_op<double>("broken_tanh", x.shape(), out, {x}, [](Node<double>& self) {
    auto& in = *self.inputs[0];
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - self.value[i]);
  });
}

}  // namespace

std::vector<SuiteCheck> gradient_suite(bool inject_bug) {
  Suite s;
  Rng rng(2024);
  op_checks(s, rng);
  layer_checks(s, rng);
  loss_checks(s, rng);
  model_checks(s, rng);
  if (inject_bug) {
    auto x = leaf({3, 4}, rng, -2.0, 2.0);
    auto u = constant({3, 4}, rng);
    s.run("op", "tanh (injected bug)", {{"x", x}}, [=] { return sum(hadamard(broken_tanh(x), u)); },
          kOpTolerance);
  }
  return s.checks;
}

bool all_passed(const std::vector<SuiteCheck>& checks) {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

}  // namespace condgan
