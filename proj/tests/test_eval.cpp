#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "condgan/errors.hpp"
#include "condgan/eval.hpp"
#include "condgan/figures.hpp"
#include "condgan/gradsuite.hpp"
#include "doctest.h"

using namespace condgan;

namespace {

DatasetConfig tiny_data() {
  DatasetConfig c;
  c.num_classes = 3;
  c.azimuths = 6;
  c.altitudes = 2;
  c.transforms = 1;
  c.image_size = 8;
  return c;
}

// Returns the rendered ground truth for whichever sample carries the
// requested conditions.
class LookupGenerator final : public Generator<float> {
 public:
  explicit LookupGenerator(const std::vector<Sample>& samples) : samples_(samples) {}

  GeneratorOutput<float> synthesize(const Conditions<float>& cond) override {
    const std::size_t n = cond.batch(), k = cond.c.dim(1);
    const std::size_t h = samples_[0].height, w = samples_[0].width;
    std::vector<float> rgb, mask;
    for (std::size_t i = 0; i < n; ++i) {
      const Sample* hit = nullptr;
      for (const auto& s : samples_) {
        const auto v = encode_view(s.view.azimuth, s.view.altitude);
        const auto t = s.transform.vector();
        bool same = cond.c[i * k + s.class_id] == 1.0f;
        for (std::size_t j = 0; j < 4; ++j) same = same && cond.v[i * 4 + j] == static_cast<float>(v[j]);
        for (std::size_t j = 0; j < 3; ++j) same = same && cond.t[i * 3 + j] == static_cast<float>(t[j]);
        if (same) hit = &s;
      }
      REQUIRE(hit != nullptr);
      rgb.insert(rgb.end(), hit->rgb.begin(), hit->rgb.end());
      mask.insert(mask.end(), hit->mask.begin(), hit->mask.end());
    }
    return {Tensor<float>::from({n, 3, h, w}, rgb), Tensor<float>::from({n, 1, h, w}, mask), Tensor<float>()};
  }
  ParamStore<float>& params() override { return store_; }

 private:
  const std::vector<Sample>& samples_;
  ParamStore<float> store_;
};

// Scores 0.9 when the claimed class is the object's class, 0.1 otherwise, by
// reading the class off a lookup table of images.
class OracleDiscriminator final : public Discriminator<float> {
 public:
  explicit OracleDiscriminator(const std::vector<Sample>& samples) : samples_(samples) {}
  Tensor<float> score(const Conditions<float>& cond, const Tensor<float>& image, Rng*) override {
    const std::size_t n = cond.batch(), k = cond.c.dim(1), per = image.numel() / n;
    std::vector<float> out;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t truth = k;
      for (const auto& s : samples_)
        if (std::equal(s.rgb.begin(), s.rgb.end(), image.data().begin() + i * per)) truth = s.class_id;
      out.push_back(truth < k && cond.c[i * k + truth] == 1.0f ? 0.9f : 0.1f);
    }
    return Tensor<float>::from({n, 1}, out);
  }
  ParamStore<float>& params() override { return store_; }

 private:
  const std::vector<Sample>& samples_;
  ParamStore<float> store_;
};

}  // namespace

TEST_CASE("masked l2") {
  const std::vector<float> a{0, 0, 1, 1, -1, -1, 0.5f, 0.5f, 0, 0, 0, 0};  // [3, 2, 2]
  std::vector<float> b = a;
  const std::vector<float> mask{1, 0, 0, 1};
  CHECK(masked_l2(a, b, mask, 2, 2) == 0.0);
  b[1] = 5;  // outside the mask
  CHECK(masked_l2(a, b, mask, 2, 2) == 0.0);
  b[0] = 1;  // inside: one squared error of 1 over 2 pixels x 3 channels
  CHECK(masked_l2(a, b, mask, 2, 2) == doctest::Approx(1.0 / 6.0));
  CHECK(masked_l2(a, b, std::vector<float>(4, 0.0f), 2, 2) == 0.0);
  CHECK_THROWS_AS(masked_l2(a, b, std::vector<float>(3, 1.0f), 2, 2), ShapeError);
}

TEST_CASE("sharpness") {
  CHECK(sharpness(std::vector<float>(3 * 16, 0.4f), 3, 4, 4) == 0.0);
  // Horizontal ramp with step 0.1: every forward difference is (0.1, 0).
  std::vector<float> ramp(16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) ramp[i * 4 + j] = 0.1f * j;
  CHECK(sharpness(ramp, 1, 4, 4) == doctest::Approx(0.1).epsilon(1e-6));
  // Checkerboard of +-1: both differences are 2 in magnitude.
  std::vector<float> checker(16);
  for (std::size_t i = 0; i < 16; ++i) checker[i] = ((i / 4 + i % 4) % 2) ? 1.0f : -1.0f;
  CHECK(sharpness(checker, 1, 4, 4) == doctest::Approx(std::sqrt(8.0)));
  // Averaging blurs: a 2x2 box filter of the checkerboard is flat.
  CHECK(sharpness(std::vector<float>(9, 0.0f), 1, 3, 3) == 0.0);
  CHECK_THROWS_AS(sharpness(ramp, 2, 4, 4), ShapeError);
}

TEST_CASE("evaluation with ground-truth generator and oracle discriminator") {
  Dataset data(tiny_data());
  const auto samples = data.render_all();
  const auto split = holdout_split(data);
  ModelConfig model = miniature_config(Mode::Absolute);
  LookupGenerator g(samples);
  OracleDiscriminator d(samples);
  const auto r = evaluate(g, &d, model, samples, split, 1);
  CHECK(r.train_samples == split.train.size());
  CHECK(r.test_samples == split.test.size());
  CHECK(r.l2_train == 0.0);
  CHECK(r.l2_test == 0.0);
  CHECK(r.sharpness_generated == doctest::Approx(r.sharpness_ground_truth));
  CHECK(r.sharpness_ground_truth > 0.0);
  CHECK(r.d_test.matched == 1.0);
  CHECK(r.d_test.mismatched == 1.0);
  CHECK(r.d_test.overall == 1.0);
  CHECK(r.d_test.pairwise == 1.0);

  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["masked_l2_test"] == 0.0);
  CHECK(j["d_accuracy_test"]["pairwise"] == 1.0);
  const auto no_d = nlohmann::json::parse(report_json(evaluate(g, nullptr, model, samples, split, 1)));
  CHECK_FALSE(no_d.contains("d_accuracy_test"));
}

TEST_CASE("untrained discriminator is near chance") {
  Dataset data(tiny_data());
  const auto samples = data.render_all();
  const auto split = holdout_split(data);
  const auto model = miniature_config(Mode::Absolute);
  ConditionalDiscriminator<float> d(model, 4);
  const auto acc = discriminator_accuracy(d, model, samples, split.test, 2);
  CHECK(acc.pairwise >= 0.0);
  CHECK(acc.pairwise <= 1.0);
  CHECK(acc.overall == doctest::Approx(0.5 * (acc.matched + acc.mismatched)));
}

TEST_CASE("figure helpers") {
  SUBCASE("grid parsing") {
    CHECK(parse_grid("2x3") == std::pair<std::size_t, std::size_t>{2, 3});
    for (const char* bad : {"", "2", "x3", "2x", "0x3", "2*3", "-1x2", "2x3x4"})
      CHECK_THROWS_AS(parse_grid(bad), ConfigError);
  }
  SUBCASE("tiling places frames row-major") {
    std::vector<Frame> frames;
    for (int k = 0; k < 6; ++k) {
      Frame f;
      f.height = 2;
      f.width = 3;
      f.rgb.assign(18, static_cast<float>(k));
      f.mask.assign(6, static_cast<float>(k));
      frames.push_back(f);
    }
    const auto strip = tile(frames, 1, 6);
    CHECK(strip.width == 18);
    CHECK(strip.height == 2);
    const auto grid = tile(frames, 2, 3);
    CHECK(grid.width == 9);
    CHECK(grid.height == 4);
    // frame 4 sits at row 1, column 1: pixel (2, 3) of every channel
    for (std::size_t ch = 0; ch < 3; ++ch) CHECK(grid.rgb[(ch * 4 + 2) * 9 + 3] == 4.0f);
    CHECK(grid.mask[3 * 9 + 8] == 5.0f);
    CHECK_THROWS_AS(tile(frames, 2, 2), ConfigError);
  }
  SUBCASE("rotation spacing covers held-out azimuths") {
    const auto az = rotation_azimuths(36);
    Dataset data{DatasetConfig{}};
    for (std::size_t k = 0; k < 36; ++k) CHECK(az[k] == doctest::Approx(data.azimuth(k)).epsilon(1e-12));
    CHECK(rotation_azimuths(4)[1] == doctest::Approx(kPi / 2));
  }
  SUBCASE("class blends") {
    const auto b = class_blends(1, 3, 5, 4);
    REQUIRE(b.size() == 5);
    CHECK(b.front() == one_hot(1, 4));
    CHECK(b.back() == one_hot(3, 4));
    CHECK(b[2][1] == doctest::Approx(0.5));
    CHECK(b[2][3] == doctest::Approx(0.5));
    CHECK(b[1][3] == doctest::Approx(0.25));
    CHECK_THROWS_AS(class_blends(1, 1, 5, 4), ConfigError);
    CHECK_THROWS_AS(class_blends(1, 4, 5, 4), ConfigError);
    CHECK_THROWS_AS(class_blends(0, 1, 1, 4), ConfigError);
  }
  SUBCASE("frames") {
    const auto model = miniature_config(Mode::Partial);
    auto g = make_generator<float>(model, 3);
    const auto z = noise_vector(model.noise_dim, 4);
    CHECK(z == noise_vector(model.noise_dim, 4));
    CHECK(z != noise_vector(model.noise_dim, 5));
    const auto a = generate_frame(*g, model, one_hot(0, 3), {0.3, 0.2}, {}, z);
    const auto b = generate_frame(*g, model, one_hot(0, 3), {0.3, 0.2}, {}, z);
    CHECK(a.rgb == b.rgb);
    CHECK(a.mask.empty());
    CHECK(a.height == 8);
    CHECK_THROWS_AS(generate_frame(*g, model, one_hot(0, 4), {0.3, 0.2}, {}, z), ConfigError);
    CHECK_THROWS_AS(generate_frame(*g, model, one_hot(0, 3), {0.3, 0.2}, {}, {1.0f}), ConfigError);
  }
}

TEST_CASE("gradient suite") {
  const auto checks = gradient_suite(false);
  CHECK(all_passed(checks));
  for (const char* op : {"matmul", "transpose", "add", "sub", "hadamard", "scale", "bias_add", "slice", "reshape",
                         "sum", "mean", "relu", "leaky_relu", "tanh", "sigmoid", "binary_cross_entropy"}) {
    const bool found = std::any_of(checks.begin(), checks.end(), [&](const auto& c) { return c.name == op; });
    CHECK_MESSAGE(found, op);
  }
  const auto bugged = gradient_suite(true);
  CHECK_FALSE(all_passed(bugged));
  CHECK_FALSE(bugged.back().passed);
  CHECK(std::count_if(bugged.begin(), bugged.end(), [](const auto& c) { return !c.passed; }) == 1);
}
