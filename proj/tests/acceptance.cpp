// Acceptance run: one PASS/FAIL line per criterion. Criteria 7 and 8 train
// the default desk configuration through the CLI binary and take tens of
// minutes on one core.
//
//   acceptance [work_dir] [--only 1,2,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>

#include "cli_util.hpp"
#include "condgan/gradsuite.hpp"
#include "condgan/losses.hpp"
#include "condgan/reference.hpp"
#include "condgan/train.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace condgan;
using namespace condgan::testing;
using clitest::fs::path;
using nlohmann::json;

namespace {

// Tolerances and thresholds of the criteria.
constexpr double kSuiteSeconds = 120.0;
constexpr std::size_t kOracleGeometries = 60;
constexpr double kOracleTol = 1e-10;
constexpr double kAdjointTol = 1e-8;
constexpr double kWeightNormTol = 1e-6;
constexpr double kRescaleTol = 1e-6;
constexpr double kInstanceMeanTol = 1e-6;
constexpr double kInstanceVarTol = 1e-3;
constexpr double kLn2Tol = 1e-9;
constexpr double kTotalTol = 1e-12;
constexpr double kHeldOutAccuracy = 0.9;
constexpr double kGeneralizationRatio = 1.5;
constexpr double kDeskMinutes = 45.0;
constexpr double kAblationDrop = 0.15;
constexpr std::size_t kDeskSeed = 1;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Verdict gradient_suite_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = gradient_suite(false);
  const double secs = seconds_since(t0);
  double worst_op = 0, worst_model = 0;
  std::size_t failed = 0;
  for (const auto& c : checks) {
    failed += !c.passed;
    (c.tolerance == kOpTolerance ? worst_op : worst_model) =
        std::max(c.tolerance == kOpTolerance ? worst_op : worst_model, c.max_rel_error);
  }
  const bool control_fails = !all_passed(gradient_suite(true));
  return {failed == 0 && worst_op < 1e-4 && worst_model < 1e-3 && secs < kSuiteSeconds && control_fails,
          fmt("%zu checks, %zu failed; worst op %.2e < 1e-4, worst network %.2e < 1e-3; %.1f s < %.0f s; "
              "injected bug %s",
              checks.size(), failed, worst_op, worst_model, secs, kSuiteSeconds,
              control_fails ? "caught" : "NOT caught")};
}

Verdict oracle_equivalence() {
  Rng rng(2024);
  double conv_err = 0, deconv_err = 0, adjoint_err = 0;
  std::size_t n_geo = 0, n_adjoint = 0;
  while (n_geo < kOracleGeometries) {
    const std::size_t n = 1 + rng.uniform_index(3), c = 1 + rng.uniform_index(4), f = 1 + rng.uniform_index(4),
                      k = 1 + rng.uniform_index(5), s = 1 + rng.uniform_index(3), p = rng.uniform_index(k),
                      h = 1 + rng.uniform_index(9), w = 1 + rng.uniform_index(9);
    const ConvGeometry g{n, c, f, h, w, k, s, p};
    if (!g.valid()) continue;
    // The deconvolution maps the conv output extent back; skip when that is empty.
    if ((g.out_h() - 1) * s + k <= 2 * p || (g.out_w() - 1) * s + k <= 2 * p) continue;
    ++n_geo;
    const auto x = random_tensor({n, c, h, w}, rng), kernel = random_tensor({f, c, k, k}, rng);
    const auto y = conv2d(x, kernel, s, p);
    std::vector<double> expect(g.output_size());
    reference::conv2d_forward<double>(g, x.data(), kernel.data(), expect);
    conv_err = std::max(conv_err, max_abs_diff(y.data(), expect));

    // Deconvolution of y's shape back to x's, against the scatter loops.
    const auto b = random_tensor(y.shape(), rng);
    const auto kt = random_tensor({c, f, k, k}, rng);  // deconv: c -> f channels
    const auto xin = random_tensor({n, c, y.dim(2), y.dim(3)}, rng);
    const auto dz = deconv2d(xin, kt, s, p);
    std::vector<double> dexpect(dz.numel());
    reference::deconv2d_forward<double>(n, c, f, y.dim(2), y.dim(3), k, s, p, xin.data(), kt.data(), dexpect);
    deconv_err = std::max(deconv_err, max_abs_diff(dz.data(), dexpect));

    // <conv(a, w), b> = <a, deconv(b, w)>, when deconv restores a's extent.
    const auto back = deconv2d(b, kernel, s, p);
    if (back.shape() == x.shape()) {
      const double lhs = dot(y.data(), b.data()), rhs = dot(x.data(), back.data());
      adjoint_err = std::max(adjoint_err, std::abs(lhs - rhs));
      ++n_adjoint;
    }
  }
  return {conv_err < kOracleTol && deconv_err < kOracleTol && adjoint_err < kAdjointTol && n_adjoint >= 20,
          fmt("%zu geometries; conv2d %.1e, deconv2d %.1e (< %.0e); adjoint on %zu of them %.1e (< %.0e)", n_geo,
              conv_err, deconv_err, kOracleTol, n_adjoint, adjoint_err, kAdjointTol)};
}

Verdict normalization_properties() {
  Rng rng(7);
  double norm_err = 0, rescale_err = 0;
  for (std::size_t axis : {0u, 1u}) {
    const auto raw = random_tensor({5, 6, 3, 3}, rng);
    const std::size_t groups = raw.dim(axis);
    std::vector<double> gv(groups);
    for (auto& e : gv) e = rng.uniform(-3.0, 3.0);
    const auto g = Tensor<double>::from({groups}, gv);
    const auto w = weight_normalize(raw, g, axis);
    const auto norms = group_norms<double>(w.data(), w.shape(), axis);
    for (std::size_t i = 0; i < groups; ++i) norm_err = std::max(norm_err, std::abs(norms[i] - std::abs(gv[i])));
    for (double factor : {0.1, 3.7, 250.0}) {
      const auto scaled = weight_normalize(scale(raw, factor), g, axis);
      rescale_err = std::max(rescale_err, max_abs_diff(scaled.data(), w.data()));
    }
  }
  const auto x = random_tensor({3, 4, 7, 6}, rng);
  const auto y = instance_norm(scale(x, 5.0));
  double mean_err = 0, var_err = 0;
  const std::size_t plane = 42;
  for (std::size_t q = 0; q < 12; ++q) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < plane; ++i) m += y.data()[q * plane + i];
    m /= plane;
    for (std::size_t i = 0; i < plane; ++i) v += (y.data()[q * plane + i] - m) * (y.data()[q * plane + i] - m);
    v /= plane;
    mean_err = std::max(mean_err, std::abs(m));
    var_err = std::max(var_err, std::abs(v - 1.0));
  }
  return {norm_err < kWeightNormTol && rescale_err < kRescaleTol && mean_err < kInstanceMeanTol &&
              var_err < kInstanceVarTol,
          fmt("weight-norm |norm - |g|| %.1e (< %.0e), rescaling %.1e (< %.0e); instance-norm |mean| %.1e (< %.0e), "
              "|var - 1| %.1e (< %.0e)",
              norm_err, kWeightNormTol, rescale_err, kRescaleTol, mean_err, kInstanceMeanTol, var_err, kInstanceVarTol)};
}

bool all_grads_zero(ParamStore<double>& store) {
  for (const auto& [name, p] : store.entries())
    for (double e : p.grad())
      if (e != 0.0) return false;
  return true;
}

Verdict loss_algebra() {
  const auto half = Tensor<double>::from({4, 1}, {0.5, 0.5, 0.5, 0.5});
  const double ln2_err = std::max(std::abs(bce(half, 1.0).item() - std::numbers::ln2),
                                  std::abs(bce(half, 0.0).item() - std::numbers::ln2));

  const auto cfg = miniature_config(Mode::Absolute);
  Rng rng(9);
  auto g = make_generator<double>(cfg, 3);
  ConditionalDiscriminator<double> d(cfg, 4);
  const auto cond = random_conditions(cfg, 5, rng);
  const auto image = random_image(cfg, 5, rng);
  const double neg_v_same = loss_d_neg_v<double>(d, cond, cond.v, image, nullptr).item();

  DiscriminatorLosses<double> parts{loss_d_real<double>(d, cond, image, nullptr),
                                    loss_d_gen<double>(d, *g, cond, nullptr), {}, {}, {}};
  LossWeights plain;
  plain.gamma_c = plain.gamma_v = plain.gamma_t = 0.0;
  const double total_err = std::abs(loss_d_total(parts, plain).item() - (parts.real.item() + parts.gen.item()));

  bool stop_ok = true;
  for (Mode mode : {Mode::Absolute, Mode::Partial}) {
    const auto mc = miniature_config(mode);
    auto mg = make_generator<double>(mc, 5);
    ConditionalDiscriminator<double> md(mc, 6);
    const auto mcond = random_conditions(mc, 3, rng);
    mg->params().zero_grad();
    md.params().zero_grad();
    backward(loss_g<double>(md, *mg, mcond, nullptr));
    stop_ok = stop_ok && all_grads_zero(md.params()) && !all_grads_zero(mg->params());
    mg->params().zero_grad();
    md.params().zero_grad();
    backward(loss_d_gen<double>(md, *mg, mcond, nullptr));
    stop_ok = stop_ok && all_grads_zero(mg->params()) && !all_grads_zero(md.params());
  }
  return {ln2_err < kLn2Tol && neg_v_same == 0.0 && total_err < kTotalTol && stop_ok,
          fmt("|bce(0.5) - ln 2| %.1e (< %.0e); neg_v(v' = v) = %g; |total - (real + gen)| %.1e (< %.0e); "
              "stop-gradient %s",
              ln2_err, kLn2Tol, neg_v_same, total_err, kTotalTol, stop_ok ? "exact" : "VIOLATED")};
}

Verdict combiner_contract() {
  const auto x = combine(Tensor<double>::from({1, 2}, {1, 2}), Tensor<double>::from({1, 2}, {3, 4}));
  const std::vector<double> got(x.data().begin(), x.data().end());
  const bool combine_ok = got == std::vector<double>{3, 8, 1, 2, 3, 4};

  bool half_ok = true;
  for (Mode mode : {Mode::Absolute, Mode::Partial}) {
    const auto cfg = miniature_config(mode);
    Rng rng(13);
    ConditionalDiscriminator<double> d(cfg, 2);
    for (auto& e : d.output_layer().weight.mutable_data()) e = 0.0;
    for (auto& e : d.output_layer().bias.mutable_data()) e = 0.0;
    const auto s = d.score(random_conditions(cfg, 6, rng), random_image(cfg, 6, rng), nullptr);
    for (double v : s.data()) half_ok = half_ok && v == 0.5;
  }
  std::string shown;
  for (double v : got) shown += (shown.empty() ? "" : ",") + fmt("%g", v);
  return {combine_ok && half_ok,
          fmt("combine([1,2],[3,4]) = [%s]; zeroed head scores %s", shown.c_str(),
              half_ok ? "exactly 0.5" : "NOT 0.5")};
}

Verdict cadence_contract() {
  DatasetConfig dc;
  dc.num_classes = 3;
  dc.azimuths = 6;
  dc.altitudes = 2;
  dc.transforms = 1;
  dc.image_size = 8;
  Dataset data(dc);
  const auto samples = data.render_all();
  const auto split = holdout_split(data);
  TrainConfig t;
  t.batch_size = 2;
  t.epochs = 2;
  t.cadence = 3;
  GanTrainer trainer(miniature_config(Mode::Absolute), t, data.altitude_levels());
  const auto run = trainer.run(samples, split.train, {});
  const auto ck = trainer.checkpoint();
  const auto adam_d = static_cast<std::size_t>(find_entry(ck, "adam.D.steps").values[0]);
  const auto adam_g = static_cast<std::size_t>(find_entry(ck, "adam.G.steps").values[0]);
  const std::size_t per_epoch = split.train.size() / t.batch_size;
  return {per_epoch == 9 && run.counts.d_steps == 18 && run.counts.g_steps == 6 && adam_d == 18 && adam_g == 6,
          fmt("%zu batches/epoch, 2 epochs: trainer counted %zu D / %zu G steps, optimizers %zu / %zu "
              "(expected 18 / 6)",
              per_epoch, run.counts.d_steps, run.counts.g_steps, adam_d, adam_g)};
}

// ---------------------------------------------------------------------------
// Desk-scale runs through the CLI.

json read_json(const path& p) { return json::parse(clitest::slurp(p)); }

struct DeskRun {
  path dir;
  json eval;
  double seconds = 0;
  bool ok = false;
};

DeskRun train_and_eval(const path& dir, const std::string& extra) {
  DeskRun r;
  r.dir = dir;
  clitest::fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string seed = " --seed " + std::to_string(kDeskSeed);
  if (clitest::run_cli("train" + seed + extra + " --out " + dir.string(), dir.string() + ".log") != 0) return r;
  if (clitest::run_cli("eval --checkpoint " + (dir / "final.bin").string(), dir.string() + ".eval.log") != 0)
    return r;
  r.seconds = seconds_since(t0);
  r.eval = read_json(dir / "eval.json");
  r.ok = true;
  return r;
}

double adjacent_l2(const clitest::Ppm& strip, std::size_t frame_w, std::size_t a, std::size_t b) {
  const auto x = strip.crop(a * frame_w, frame_w), y = strip.crop(b * frame_w, frame_w);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (double(x[i]) - y[i]) * (double(x[i]) - y[i]);
  return std::sqrt(s);
}

struct DeskResults {
  DeskRun gan, l2, ablation;
};

Verdict desk_training(const path& work, DeskResults& res) {
  res.gan = train_and_eval(work / "gan", " --mode gan-abs");
  res.l2 = train_and_eval(work / "l2", " --mode l2");
  if (!res.gan.ok || !res.l2.ok) return {false, "training or evaluation failed, see logs in " + work.string()};

  const auto cfg = read_json(res.gan.dir / "config.json");
  const std::size_t samples = cfg["num_classes"].get<std::size_t>() * cfg["azimuths"].get<std::size_t>() *
                              cfg["altitudes"].get<std::size_t>() * cfg["transforms"].get<std::size_t>();
  const bool desk = cfg["num_classes"] == 10 && cfg["image_size"] == 32 && samples == 2160 &&
                    cfg["epochs_gan"].get<std::size_t>() <= 200 && cfg["epochs_l2"] == cfg["epochs_gan"] &&
                    cfg["batch_size"] == 16;

  const auto& e = res.gan.eval;
  const double acc = e["d_accuracy_test"]["pairwise"];
  const double l2_train = e["masked_l2_train"], l2_test = e["masked_l2_test"];
  const double sharp_gan = e["sharpness_generated"], sharp_l2 = res.l2.eval["sharpness_generated"];
  const double minutes = (res.gan.seconds + res.l2.seconds) / 60.0;

  // Endpoint identity of the interpolation strip.
  const path fig = work / "figures";
  clitest::fs::create_directories(fig);
  const std::string ck = " --checkpoint " + (res.gan.dir / "final.bin").string();
  bool endpoints = clitest::run_cli("interpolate" + ck + " --from 2 --to 7 --steps 6 --azimuth 50 --out " +
                                    (fig / "interp.ppm").string()) == 0 &&
                   clitest::run_cli("sample" + ck + " --class 2 --azimuth 50 --out " + (fig / "from.ppm").string()) ==
                       0 &&
                   clitest::run_cli("sample" + ck + " --class 7 --azimuth 50 --out " + (fig / "to.ppm").string()) == 0;
  clitest::Ppm strip;
  if (endpoints) {
    strip = clitest::read_ppm(fig / "interp.ppm");
    const std::size_t w = strip.width / 6;
    endpoints = strip.crop(0, w) == clitest::read_ppm(fig / "from.ppm").pixels &&
                strip.crop(5 * w, w) == clitest::read_ppm(fig / "to.ppm").pixels;
  }

  const bool a = acc > kHeldOutAccuracy, b = l2_test < kGeneralizationRatio * l2_train, c = sharp_gan > sharp_l2;
  const bool timely = minutes < kDeskMinutes;
  std::printf("  7a held-out pairwise D accuracy %.4f (> %.2f) %s; threshold accuracy %.4f (matched %.4f, "
              "mismatched %.4f)\n",
              acc, kHeldOutAccuracy, a ? "ok" : "FAIL", e["d_accuracy_test"]["overall"].get<double>(),
              e["d_accuracy_test"]["matched"].get<double>(), e["d_accuracy_test"]["mismatched"].get<double>());
  std::printf("  7b masked L2 test %.4f vs %.1f x train %.4f %s\n", l2_test, kGeneralizationRatio, l2_train,
              b ? "ok" : "FAIL");
  std::printf("  7c sharpness GAN %.4f vs l2 %.4f %s (ground truth %.4f; l2 baseline masked L2 train %.4f, "
              "test %.4f)\n",
              sharp_gan, sharp_l2, c ? "ok" : "FAIL", e["sharpness_ground_truth"].get<double>(),
              res.l2.eval["masked_l2_train"].get<double>(), res.l2.eval["masked_l2_test"].get<double>());
  std::printf("  7d interpolation endpoints %s sample outputs\n", endpoints ? "bit-match" : "DIFFER from");

  // Post-training checks on the figure outputs.
  if (clitest::run_cli("rotate" + ck + " --class 4 --steps 36 --out " + (fig / "rotate.ppm").string()) == 0) {
    const auto rot = clitest::read_ppm(fig / "rotate.ppm");
    std::vector<double> d;
    for (std::size_t k = 0; k < 36; ++k) d.push_back(adjacent_l2(rot, 32, k, (k + 1) % 36));
    auto sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[17] + sorted[18]);
    std::set<unsigned char> values(rot.pixels.begin(), rot.pixels.end());
    std::printf("  rotation strip: max adjacent-frame distance %.1f vs 5 x median %.1f %s; %zu distinct byte values\n",
                sorted.back(), 5 * median, sorted.back() < 5 * median ? "ok" : "exceeded", values.size());
  }
  if (endpoints) {
    bool differ = true;
    const std::size_t w = strip.width / 6;
    for (std::size_t k = 1; k < 5; ++k)
      differ = differ && strip.crop(k * w, w) != strip.crop(0, w) && strip.crop(k * w, w) != strip.crop(5 * w, w);
    std::printf("  interpolation: intermediate frames %s both endpoints\n", differ ? "differ from" : "REPEAT");
  }

  return {desk && a && b && c && endpoints && timely,
          fmt("desk config %s (K=%d, %zu samples, %d epochs, batch %d); 7a %s, 7b %s, 7c %s, 7d %s; "
              "GAN + l2 wall time %.1f min (< %.0f)",
              desk ? "ok" : "WRONG", cfg["num_classes"].get<int>(), samples, cfg["epochs_gan"].get<int>(),
              cfg["batch_size"].get<int>(), a ? "pass" : "FAIL", b ? "pass" : "FAIL", c ? "pass" : "FAIL",
              endpoints ? "pass" : "FAIL", minutes, kDeskMinutes)};
}

Verdict ablation(const path& work, DeskResults& res) {
  if (!res.gan.ok) res.gan = train_and_eval(work / "gan", " --mode gan-abs");
  res.ablation = train_and_eval(work / "ablation", " --mode gan-abs --set gamma_c=0 --set gamma_v=0 --set gamma_t=0");
  if (!res.gan.ok || !res.ablation.ok) return {false, "training or evaluation failed, see logs in " + work.string()};
  const auto& full = res.gan.eval["d_accuracy_test"];
  const auto& abl = res.ablation.eval["d_accuracy_test"];
  const double drop = full["pairwise"].get<double>() - abl["pairwise"].get<double>();
  const double drop_threshold = full["mismatched"].get<double>() - abl["mismatched"].get<double>();
  return {drop >= kAblationDrop,
          fmt("held-out pairwise accuracy %.4f with negatives, %.4f without: drop %.4f (>= %.2f); "
              "mismatched-class threshold accuracy %.4f -> %.4f (drop %.4f)",
              full["pairwise"].get<double>(), abl["pairwise"].get<double>(), drop, kAblationDrop,
              full["mismatched"].get<double>(), abl["mismatched"].get<double>(), drop_threshold)};
}

Verdict determinism(const path& work) {
  const path dir = work / "determinism";
  clitest::fs::remove_all(dir);
  clitest::fs::create_directories(dir);
  clitest::spit(dir / "tiny.json", clitest::kTinyConfig);
  std::size_t files = 0, mismatched = 0;
  for (const char* mode : {"gan-abs", "gan-partial", "l2"}) {
    for (const char* run : {"a", "b"}) {
      const auto out = dir / (std::string(mode) + "_" + run);
      if (clitest::run_cli("train --config " + (dir / "tiny.json").string() + " --mode " + mode +
                           " --seed 42 --set epochs_gan=3 --set epochs_l2=3 --out " + out.string()) != 0)
        return {false, std::string("training failed in mode ") + mode};
    }
    const auto a = dir / (std::string(mode) + "_a"), b = dir / (std::string(mode) + "_b");
    for (const auto& entry : clitest::fs::directory_iterator(a)) {
      const auto name = entry.path().filename();
      if (name == "config.json") continue;
      ++files;
      if (!clitest::fs::exists(b / name) || clitest::slurp(a / name) != clitest::slurp(b / name)) ++mismatched;
    }
  }
  return {files > 0 && mismatched == 0,
          fmt("%zu metrics/checkpoint files over gan-abs, gan-partial and l2 runs, %zu differ", files, mismatched)};
}

}  // namespace

int main(int argc, char** argv) {
  path work = clitest::fs::temp_directory_path() / "condgan_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      work = a;
    }
  }
  clitest::fs::create_directories(work);
  // The desk runs are specified for one thread.
  setenv("OMP_NUM_THREADS", "1", 1);

  DeskResults desk;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient suite", gradient_suite_check},
      {"oracle equivalence", oracle_equivalence},
      {"normalization properties", normalization_properties},
      {"loss algebra", loss_algebra},
      {"combiner contract", combiner_contract},
      {"cadence contract", cadence_contract},
      {"desk-scale training", [&] { return desk_training(work, desk); }},
      {"negative-sampling ablation", [&] { return ablation(work, desk); }},
      {"determinism", [&] { return determinism(work); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d %-28s %s  %s  [%.1f s]\n", id, criteria[i].first.c_str(), v.pass ? "PASS" : "FAIL",
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
