#include <cmath>
#include <numbers>

#include "condgan/errors.hpp"
#include "condgan/gradcheck.hpp"
#include "condgan/losses.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace condgan;
using condgan::testing::random_conditions;
using condgan::testing::random_image;
using condgan::testing::random_tensor;
using T = Tensor<double>;

namespace {

// Scores every sample with the same probability.
class ConstantDiscriminator final : public Discriminator<double> {
 public:
  explicit ConstantDiscriminator(double p) : p_(p) {}
  T score(const Conditions<double>& cond, const T&, Rng*) override {
    return T::full({cond.batch(), 1}, p_);
  }
  ParamStore<double>& params() override { return store_; }

 private:
  double p_;
  ParamStore<double> store_;
};

std::vector<double> grads_of(ParamStore<double>& store) {
  std::vector<double> out;
  for (const auto& [name, p] : store.entries()) {
    if (p.grad().empty()) {
      out.insert(out.end(), p.numel(), 0.0);
    } else {
      out.insert(out.end(), p.grad().begin(), p.grad().end());
    }
  }
  return out;
}

bool all_zero(const std::vector<double>& v) {
  for (double e : v)
    if (e != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("bce") {
  CHECK(std::abs(bce(T::from({1}, {0.5}), 1.0).item() - std::numbers::ln2) < 1e-9);
  CHECK(std::abs(bce(T::from({1}, {0.5}), 0.0).item() - std::numbers::ln2) < 1e-9);
  CHECK(bce(T::from({1}, {0.9}), 0.0).item() == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(bce(T::from({1}, {1.0}), 1.0).item() == doctest::Approx(-std::log1p(-1e-7)).epsilon(1e-6));
  CHECK(std::isfinite(bce(T::from({1}, {0.0}), 1.0).item()));
  // mean over the batch
  CHECK(bce(T::from({2, 1}, {0.5, 0.9}), 0.0).item() ==
        doctest::Approx((std::numbers::ln2 - std::log(0.1)) / 2));
}

TEST_CASE("weight validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.gamma_v = -0.1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  LossWeights none{0, 0, 1, 1, 1};
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("generator and discriminator losses against a constant discriminator") {
  auto cfg = miniature_config(Mode::Absolute);
  AbsoluteGenerator<double> g(cfg, 3);
  Rng rng(5);
  auto cond = random_conditions(cfg, 4, rng);
  auto image = random_image(cfg, 4, rng);
  ConstantDiscriminator half(0.5);
  CHECK(loss_g<double>(half, g, cond, nullptr).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(loss_d_gen<double>(half, g, cond, nullptr).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(loss_d_real<double>(half, cond, image, nullptr).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

  double previous = 1e9;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    ConstantDiscriminator d(p);
    const double l = loss_g<double>(d, g, cond, nullptr).item();
    CHECK(l < previous);
    CHECK(l >= 0.0);
    previous = l;
  }
  // A discriminator that is right everywhere.
  ConstantDiscriminator sure_real(1.0), sure_fake(0.0);
  CHECK(loss_d_real<double>(sure_real, cond, image, nullptr).item() < 1e-6);
  CHECK(loss_d_gen<double>(sure_fake, g, cond, nullptr).item() < 1e-6);
}

TEST_CASE("loss_g and loss_d_gen both equal ln 2 only for an indifferent discriminator") {
  auto cfg = miniature_config(Mode::Absolute);
  AbsoluteGenerator<double> g(cfg, 3);
  Rng rng(7);
  auto cond = random_conditions(cfg, 4, rng);
  for (double p : {0.2, 0.5, 0.8}) {
    ConstantDiscriminator d(p);
    const bool both = std::abs(loss_g<double>(d, g, cond, nullptr).item() - std::numbers::ln2) < 1e-12 &&
                      std::abs(loss_d_gen<double>(d, g, cond, nullptr).item() - std::numbers::ln2) < 1e-12;
    CHECK(both == (p == 0.5));
  }
}

TEST_CASE("stop-gradient contracts") {
  for (Mode mode : {Mode::Absolute, Mode::Partial}) {
    auto cfg = miniature_config(mode);
    auto g = make_generator<double>(cfg, 11);
    ConditionalDiscriminator<double> d(cfg, 13);
    Rng rng(17);
    auto cond = random_conditions(cfg, 3, rng);

    g->params().zero_grad();
    d.params().zero_grad();
    backward(loss_g<double>(d, *g, cond, nullptr));
    CHECK(all_zero(grads_of(d.params())));
    CHECK_FALSE(all_zero(grads_of(g->params())));
    CHECK(d.params().trainable());

    g->params().zero_grad();
    d.params().zero_grad();
    backward(loss_d_gen<double>(d, *g, cond, nullptr));
    CHECK(all_zero(grads_of(g->params())));
    CHECK_FALSE(all_zero(grads_of(d.params())));
    CHECK(g->params().trainable());
  }
}

TEST_CASE("negative classes") {
  Rng rng(19);
  auto cfg = miniature_config(Mode::Absolute);
  cfg.num_classes = 6;
  auto cond = random_conditions(cfg, 200, rng);
  auto wrong = negative_classes(cond.c, rng);
  const auto truth = argmax_rows(cond.c), drawn = argmax_rows(wrong);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    CHECK(truth[i] != drawn[i]);
    double row = 0;
    for (std::size_t k = 0; k < 6; ++k) row += wrong[i * 6 + k];
    CHECK(row == 1.0);
  }

  auto two = T::from({3, 2}, {1, 0, 0, 1, 1, 0});
  auto flipped = negative_classes(two, rng);
  CHECK(argmax_rows(flipped) == std::vector<std::size_t>{1, 0, 1});
  CHECK_THROWS_AS(negative_classes(T::from({2, 1}, {1, 1}), rng), PreconditionError);

  SUBCASE("uniform over the wrong classes") {
    // Pearson chi-square with 3 degrees of freedom; 11.345 is the 1% point.
    const std::size_t draws = 10000, k = 5;
    std::vector<double> one_hot(draws * k, 0.0);
    for (std::size_t i = 0; i < draws; ++i) one_hot[i * k + 2] = 1.0;
    auto counts = std::vector<double>(k, 0.0);
    for (auto c : argmax_rows(negative_classes(T::from({draws, k}, one_hot), rng))) counts[c] += 1;
    CHECK(counts[2] == 0.0);
    const double expected = static_cast<double>(draws) / (k - 1);
    double chi2 = 0;
    for (std::size_t c = 0; c < k; ++c)
      if (c != 2) chi2 += std::pow(counts[c] - expected, 2) / expected;
    INFO("chi2 " << chi2);
    CHECK(chi2 < 11.345);
  }
}

TEST_CASE("distance-weighted negative losses") {
  auto cfg = miniature_config(Mode::Absolute);
  Rng rng(23);
  auto cond = random_conditions(cfg, 4, rng);
  auto image = random_image(cfg, 4, rng);
  ConstantDiscriminator d(0.3);
  const double per_sample = -std::log(0.7);

  SUBCASE("identical replacement contributes nothing") {
    CHECK(loss_d_neg_v<double>(d, cond, cond.v, image, nullptr).item() == 0.0);
    CHECK(loss_d_neg_t<double>(d, cond, cond.t, image, nullptr).item() == 0.0);
    ConditionalDiscriminator<double> real_d(cfg, 1);
    CHECK(loss_d_neg_v<double>(real_d, cond, cond.v, image, nullptr).item() == 0.0);
  }
  SUBCASE("antipodal azimuth gives weight 4") {
    std::vector<double> flipped(cond.v.data().begin(), cond.v.data().end());
    for (std::size_t i = 0; i < 4; ++i) {
      flipped[i * 4 + 0] = -flipped[i * 4 + 0];
      flipped[i * 4 + 1] = -flipped[i * 4 + 1];
    }
    auto v_wrong = T::from({4, 4}, flipped);
    for (double w : squared_distances(cond.v, v_wrong)) CHECK(w == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(loss_d_neg_v<double>(d, cond, v_wrong, image, nullptr).item() ==
          doctest::Approx(4.0 * per_sample).epsilon(1e-9));
  }
  SUBCASE("hand-computed transform distance") {
    Conditions<double> one{T::from({1, 2}, {1, 0}), T::from({1, 4}, {0, 1, 0, 1}), T::from({1, 2}, {0, 0}), T()};
    auto img = T::zeros({1, 1});
    CHECK(loss_d_neg_t<double>(d, one, T::from({1, 2}, {3, 4}), img, nullptr).item() ==
          doctest::Approx(25.0 * per_sample).epsilon(1e-9));
  }
  SUBCASE("linearity and batch averaging") {
    auto p = T::from({3, 1}, {0.2, 0.6, 0.9});
    std::vector<double> w{0.5, 2.0, 1.5};
    const double base = weighted_bce(p, 0.0, w).item();
    double manual = 0;
    for (std::size_t i = 0; i < 3; ++i) manual += w[i] * -std::log(1.0 - p[i]);
    CHECK(base == doctest::Approx(manual / 3).epsilon(1e-12));
    std::vector<double> scaled{1.5, 6.0, 4.5};
    CHECK(weighted_bce(p, 0.0, scaled).item() == doctest::Approx(3.0 * base).epsilon(1e-12));
    CHECK_THROWS_AS(weighted_bce(p, 0.0, std::vector<double>{1.0}), ShapeError);
  }
  SUBCASE("weights vanish quadratically") {
    auto t_far = random_tensor({4, 3}, rng, -0.3, 0.3);
    std::vector<double> near(cond.t.data().begin(), cond.t.data().end());
    for (std::size_t i = 0; i < near.size(); ++i) near[i] = (near[i] + t_far[i]) / 2;
    const double far_loss = loss_d_neg_t<double>(d, cond, t_far, image, nullptr).item();
    const double near_loss = loss_d_neg_t<double>(d, cond, T::from({4, 3}, near), image, nullptr).item();
    CHECK(near_loss == doctest::Approx(far_loss / 4).epsilon(1e-9));
  }
}

TEST_CASE("total discriminator loss") {
  auto cfg = miniature_config(Mode::Absolute);
  auto g = make_generator<double>(cfg, 29);
  ConditionalDiscriminator<double> d(cfg, 31);
  Rng rng(37);
  auto cond = random_conditions(cfg, 3, rng);
  auto image = random_image(cfg, 3, rng);
  auto wrong = cond;
  wrong.c = negative_classes(cond.c, rng);
  auto v_wrong = random_conditions(cfg, 3, rng).v;
  auto t_wrong = random_tensor({3, 3}, rng, -0.15, 0.15);

  auto components = [&] {
    return DiscriminatorLosses<double>{loss_d_real<double>(d, cond, image, nullptr),
                                       loss_d_gen<double>(d, *g, cond, nullptr),
                                       loss_d_neg_c<double>(d, wrong, image, nullptr),
                                       loss_d_neg_v<double>(d, cond, v_wrong, image, nullptr),
                                       loss_d_neg_t<double>(d, cond, t_wrong, image, nullptr)};
  };
  auto parts = components();
  for (const T* p : {&parts.real, &parts.gen, &parts.neg_c, &parts.neg_v, &parts.neg_t}) CHECK(p->item() >= 0.0);

  const double standard = loss_d_total(parts, {1, 1, 0, 0, 0}).item();
  CHECK(std::abs(standard - (parts.real.item() + parts.gen.item())) <= 1e-12);

  ConstantDiscriminator half(0.5);
  DiscriminatorLosses<double> flat{loss_d_real<double>(half, cond, image, nullptr),
                                   loss_d_gen<double>(half, *g, cond, nullptr), T(), T(), T()};
  CHECK(loss_d_total(flat, {1, 1, 0, 0, 0}).item() == doctest::Approx(2 * std::numbers::ln2).epsilon(1e-12));
  CHECK_THROWS_AS(loss_d_total(flat, {1, 1, 1, 0, 0}), PreconditionError);
  CHECK_THROWS_AS(loss_d_total(parts, {1, -1, 0, 0, 0}), ConfigError);

  SUBCASE("gradient is the weighted sum of component gradients") {
    const LossWeights w{0.7, 1.3, 1.0, 0.5, 0.25};
    d.params().zero_grad();
    backward(loss_d_total(components(), w));
    const auto total = grads_of(d.params());

    std::vector<double> expected(total.size(), 0.0);
    const double ws[] = {w.alpha, w.beta, w.gamma_c, w.gamma_v, w.gamma_t};
    for (int k = 0; k < 5; ++k) {
      d.params().zero_grad();
      auto c = components();
      const T* terms[] = {&c.real, &c.gen, &c.neg_c, &c.neg_v, &c.neg_t};
      backward(*terms[k]);
      const auto gk = grads_of(d.params());
      for (std::size_t i = 0; i < gk.size(); ++i) expected[i] += ws[k] * gk[i];
    }
    CHECK(testing::max_abs_diff(total, expected) < 1e-12);

    std::vector<NamedLeaf> leaves(d.params().entries().begin(), d.params().entries().end());
    GradCheckOptions opt;
    opt.tolerance = 1e-3;
    opt.max_entries_per_leaf = 6;
    auto report = grad_check([&] { return loss_d_total(components(), w); }, leaves, opt);
    INFO("max rel error " << report.max_rel_error);
    CHECK(report.passed);
  }
}
