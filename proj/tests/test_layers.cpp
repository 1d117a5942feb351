#include <cmath>

#include "condgan/errors.hpp"
#include "condgan/gradcheck.hpp"
#include "condgan/layers.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condgan;
using condgan::testing::max_abs_diff;
using condgan::testing::random_param;
using condgan::testing::random_tensor;
using condgan::testing::random_values;
using T = Tensor<double>;

namespace {

std::vector<double> values(const T& t) { return {t.data().begin(), t.data().end()}; }

double plane_mean(std::span<const double> v, std::size_t start, std::size_t n) {
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m += v[start + i];
  return m / static_cast<double>(n);
}

double plane_var(std::span<const double> v, std::size_t start, std::size_t n) {
  const double m = plane_mean(v, start, n);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (v[start + i] - m) * (v[start + i] - m);
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("weight_normalize examples") {
  auto raw = T::from({1, 2}, {3, 4});
  auto unit = weight_normalize(raw, T::from({1}, {1.0}), 0);
  CHECK(unit[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(unit[1] == doctest::Approx(0.8).epsilon(1e-9));
  auto back = weight_normalize(raw, T::from({1}, {5.0}), 0);
  CHECK(back[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(back[1] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK_THROWS_AS(weight_normalize(raw, T::from({2}, {1.0, 1.0}), 0), ShapeError);
}

TEST_CASE("weight_normalize group norms equal |g| and ignore positive rescaling") {
  Rng rng(31);
  for (std::size_t axis : {0u, 1u}) {
    auto raw = random_tensor({3, 4, 2, 2}, rng);
    const std::size_t groups = raw.dim(axis);
    auto g = random_tensor({groups}, rng, -2.0, 2.0);
    auto w = weight_normalize(raw, g, axis);
    auto norms = group_norms<double>(w.data(), w.shape(), axis);
    for (std::size_t k = 0; k < groups; ++k) CHECK(std::abs(norms[k] - std::abs(g[k])) < 1e-6);
    for (double factor : {0.5, 7.0, 300.0}) {
      auto scaled = weight_normalize(scale(raw, factor), g, axis);
      CHECK(max_abs_diff(scaled.data(), w.data()) < 1e-6);
    }
  }
}

TEST_CASE("weight-normalized projection keeps unit variance") {
  // Monte-Carlo check: x ~ iid unit variance, rows with unit norm give y with
  // variance sum_j w_j^2 = 1.
  Rng rng(37);
  const std::size_t d = 32, samples = 100000;
  auto raw = random_tensor({4, d}, rng);
  auto w = weight_normalize(raw, T::full({4}, 1.0), 0);
  const auto wv = w.data();
  std::vector<double> sum(4, 0.0), sum_sq(4, 0.0);
  std::vector<double> x(d);
  for (std::size_t s = 0; s < samples; ++s) {
    for (auto& e : x) e = rng.normal();
    for (std::size_t r = 0; r < 4; ++r) {
      double y = 0;
      for (std::size_t j = 0; j < d; ++j) y += x[j] * wv[r * d + j];
      sum[r] += y;
      sum_sq[r] += y * y;
    }
  }
  for (std::size_t r = 0; r < 4; ++r) {
    const double m = sum[r] / samples;
    const double var = sum_sq[r] / samples - m * m;
    CHECK(std::abs(var - 1.0) < 0.05);
  }
}

TEST_CASE("instance_norm") {
  SUBCASE("constant plane becomes zero") {
    auto y = instance_norm(T::full({1, 1, 3, 3}, 7.0));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("two-point plane") {
    auto y = instance_norm(T::from({1, 1, 1, 2}, {1, -1}));
    const double a = 1.0 / std::sqrt(1.0 + kInstanceNormEps);
    CHECK(y[0] == doctest::Approx(a).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(-a).epsilon(1e-12));
  }
  SUBCASE("per-plane statistics") {
    Rng rng(41);
    auto y = instance_norm(random_tensor({4, 8, 5, 5}, rng));
    for (std::size_t p = 0; p < 32; ++p) {
      CHECK(std::abs(plane_mean(y.data(), p * 25, 25)) < 1e-6);
      CHECK(std::abs(plane_var(y.data(), p * 25, 25) - 1.0) < 1e-3);
    }
  }
  SUBCASE("invariant to per-plane affine maps up to sign") {
    Rng rng(43);
    auto x = random_tensor({2, 3, 4, 4}, rng, -3.0, 3.0);
    auto base = instance_norm(x);
    std::vector<double> shifted(values(x));
    std::vector<double> signs;
    for (std::size_t p = 0; p < 6; ++p) {
      const double a = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.0, 4.0);
      const double b = rng.uniform(-10.0, 10.0);
      signs.push_back(a > 0 ? 1.0 : -1.0);
      for (std::size_t i = 0; i < 16; ++i) shifted[p * 16 + i] = a * shifted[p * 16 + i] + b;
    }
    auto y = instance_norm(T::from(x.shape(), shifted));
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t i = 0; i < 16; ++i)
        CHECK(std::abs(y[p * 16 + i] - signs[p] * base[p * 16 + i]) < 1e-5);
  }
  CHECK_THROWS_AS(instance_norm(T::zeros({2, 3})), ShapeError);
}

TEST_CASE("instance_norm_vec") {
  auto z = instance_norm_vec(T::full({1, 4}, 2.0));
  for (double v : z.data()) CHECK(v == 0.0);
  auto y = instance_norm_vec(T::from({1, 2}, {0, 2}));
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-4));
  Rng rng(47);
  auto r = instance_norm_vec(random_tensor({16, 64}, rng));
  for (std::size_t row = 0; row < 16; ++row) {
    CHECK(std::abs(plane_mean(r.data(), row * 64, 64)) < 1e-6);
    CHECK(std::abs(plane_var(r.data(), row * 64, 64) - 1.0) < 1e-3);
  }
}

TEST_CASE("batch_norm") {
  ParamStore<double> store;
  auto state = BatchNormState<double>::create(store, "bn", 2);
  SUBCASE("standardized input passes through") {
    // Per channel: values {-1, 1} -> mean 0, biased variance 1.
    auto x = T::from({2, 2}, {-1, 1, 1, -1});
    auto y = batch_norm(x, state, true);
    CHECK(max_abs_diff(y.data(), x.data()) < 1e-5);
  }
  SUBCASE("beta sets the output mean") {
    state.beta.mutable_data()[0] = 3.0;
    state.beta.mutable_data()[1] = 3.0;
    Rng rng(53);
    auto y = batch_norm(random_tensor({5, 2, 3, 3}, rng), state, true);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0;
      for (std::size_t n = 0; n < 5; ++n)
        for (std::size_t i = 0; i < 9; ++i) m += y[(n * 2 + c) * 9 + i];
      CHECK(m / 45 == doctest::Approx(3.0).epsilon(1e-9));
    }
  }
  SUBCASE("eval mode uses frozen running statistics") {
    auto x = T::from({2, 2}, {1, 4, 3, 8});  // channel means 2 and 6, variances 1 and 4
    batch_norm(x, state, true);
    CHECK(state.running_mean[0] == doctest::Approx(0.2));
    CHECK(state.running_mean[1] == doctest::Approx(0.6));
    CHECK(state.running_var[0] == doctest::Approx(0.9 + 0.1));
    CHECK(state.running_var[1] == doctest::Approx(0.9 + 0.4));
    auto shifted = T::from({1, 2}, {10, -5});
    auto y = batch_norm(shifted, state, false);
    CHECK(y[0] == doctest::Approx((10 - 0.2) / std::sqrt(1.0 + 1e-5)));
    CHECK(y[1] == doctest::Approx((-5 - 0.6) / std::sqrt(1.3 + 1e-5)));
    CHECK(state.running_mean[0] == doctest::Approx(0.2));  // untouched in eval
  }
  SUBCASE("training needs two samples") {
    CHECK_THROWS_AS(batch_norm(T::zeros({1, 2}), state, true), PreconditionError);
    CHECK_NOTHROW(batch_norm(T::zeros({1, 2}), state, false));
  }
}

TEST_CASE("activations") {
  CHECK(leaky_relu(T::from({1}, {-1.0}), 0.2).item() == doctest::Approx(-0.2));
  CHECK(sigmoid(T::from({1}, {0.0})).item() == 0.5);
  CHECK(relu(T::from({2}, {-3.0, 2.0}))[0] == 0.0);
  auto x = T::parameter({1}, {0.0});
  backward(sum(tanh(x)));
  CHECK(x.grad()[0] == 1.0);
  // sigmoid stays finite and inside (0, 1) for large arguments
  auto s = sigmoid(T::from({2}, {-40.0, 40.0}));
  CHECK(s[0] > 0.0);
  CHECK(s[1] <= 1.0);
}

TEST_CASE("dropout") {
  Rng rng(3);
  auto x = random_tensor({4, 5}, rng);
  CHECK(max_abs_diff(dropout(x, 0.0, rng).data(), x.data()) == 0.0);
  auto dropped = dropout(x, 1.0, rng);
  for (double v : dropped.data()) CHECK(v == 0.0);
  auto half = dropout(x, 0.5, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK((half[i] == 0.0 || half[i] == doctest::Approx(2 * x[i])));
  CHECK_THROWS_AS(dropout(x, 1.5, rng), ConfigError);
}

TEST_CASE("parameter initialization") {
  auto build = [](std::uint64_t seed) {
    ParamStore<float> store;
    Rng rng(seed);
    Dense<float> d(store, "fc", 7, 5, true, rng);
    Conv2d<float> c(store, "conv", 3, 4, 4, 2, 1, true, rng);
    Deconv2d<float> t(store, "deconv", 4, 3, 4, 2, 1, true, rng);
    return store;
  };
  auto a = build(99), b = build(99), c = build(100);
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i].second;
    const auto& y = b.entries()[i].second;
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    const auto& z = c.entries()[i].second;
    differs = differs || !std::equal(x.data().begin(), x.data().end(), z.data().begin());
  }
  CHECK(differs);

  SUBCASE("gain equals the initial group norms") {
    const std::pair<const char*, std::size_t> groups[] = {{"fc", 0}, {"conv", 0}, {"deconv", 1}};
    for (auto [w, axis] : groups) {
      const auto& weight = a.get(std::string(w) + ".w");
      const auto norms = group_norms<float>(weight.data(), weight.shape(), axis);
      const auto& g = a.get(std::string(w) + ".g");
      for (std::size_t k = 0; k < norms.size(); ++k) CHECK(g[k] == norms[k]);
    }
    ParamStore<double> store;
    Rng rng(5);
    Dense<double> d(store, "fc", 16, 8, true, rng);
    CHECK(max_abs_diff(d.effective_weight().data(), d.weight.data()) < 1e-6);
    for (double v : d.bias.data()) CHECK(v == 0.0);
  }
  SUBCASE("draws have the configured spread") {
    Rng rng(61);
    auto v = gaussian_init<double>(100000, rng);
    double m = 0, s = 0;
    for (double e : v) m += e;
    m /= v.size();
    for (double e : v) s += (e - m) * (e - m);
    const double stddev = std::sqrt(s / v.size());
    CHECK(std::abs(stddev - 0.02) < 0.05 * 0.02);
  }
}

TEST_CASE("layer forwards pass finite differences") {
  Rng rng(71);
  GradCheckOptions opt;
  auto expect_pass = [&](const char* name, const GradCheckReport& r) {
    INFO(name << " max rel error " << r.max_rel_error);
    CHECK(r.passed);
  };
  for (std::size_t axis : {0u, 1u}) {
    auto raw = random_param({3, 2, 2, 2}, rng);
    auto g = random_param({raw.dim(axis)}, rng);
    auto up = random_tensor(raw.shape(), rng);
    expect_pass("weight_normalize",
                grad_check([&] { return sum(hadamard(weight_normalize(raw, g, axis), up)); },
                           {{"raw", raw}, {"g", g}}, opt));
  }
  {
    auto x = random_param({2, 2, 3, 3}, rng);
    auto up = random_tensor(x.shape(), rng);
    expect_pass("instance_norm",
                grad_check([&] { return sum(hadamard(instance_norm(x), up)); }, {{"x", x}}, opt));
  }
  {
    auto x = random_param({3, 6}, rng);
    auto up = random_tensor(x.shape(), rng);
    expect_pass("instance_norm_vec",
                grad_check([&] { return sum(hadamard(instance_norm_vec(x), up)); }, {{"x", x}}, opt));
  }
  for (bool training : {true, false}) {
    ParamStore<double> store;
    auto state = BatchNormState<double>::create(store, "bn", 3);
    state.gamma.mutable_data()[1] = 1.7;
    state.running_var = {0.5, 2.0, 1.1};
    auto x = random_param({4, 3, 2, 2}, rng);
    auto up = random_tensor(x.shape(), rng);
    auto frozen = state;
    expect_pass(training ? "batch_norm_train" : "batch_norm_eval",
                grad_check(
                    [&] {
                      auto s = frozen;  // running statistics must not drift between probes
                      return sum(hadamard(batch_norm(x, s, training), up));
                    },
                    {{"x", x}, {"gamma", state.gamma}, {"beta", state.beta}}, opt));
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
    auto xd = random_tensor({3, 5}, rng);
    auto xc = random_tensor({2, 2, 6, 6}, rng);
    auto xt = random_tensor({2, 2, 3, 3}, rng);
    auto ud = random_tensor({3, 4}, rng);
    auto uc = random_tensor({2, 3, 3, 3}, rng);
    auto ut = random_tensor({2, 3, 6, 6}, rng);
    std::vector<NamedLeaf> leaves(store.entries().begin(), store.entries().end());
    expect_pass(wn ? "layers (weight-normed)" : "layers (raw)",
                grad_check(
                    [&] {
                      return add(add(sum(hadamard(d.forward(xd), ud)), sum(hadamard(c.forward(xc), uc))),
                                 sum(hadamard(t.forward(xt), ut)));
                    },
                    leaves, opt));
  }
}
