// condgan: dataset export, training, sampling, figure strips, gradient
// checks and evaluation.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "condgan/config.hpp"
#include "condgan/errors.hpp"
#include "condgan/eval.hpp"
#include "condgan/figures.hpp"
#include "condgan/gradsuite.hpp"
#include "condgan/train.hpp"

namespace fs = std::filesystem;
using namespace condgan;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--set", c.sets, "Override a config key, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Training seed");
  cmd->add_option("--out", c.out, out_help);
}

// File, then --set overrides, then --seed. Commands reading a checkpoint fall
// back to the config.json that training left next to it.
RunConfig resolve(const Common& c, const std::string& checkpoint = {}, bool out_is_dir = true) {
  std::optional<fs::path> file;
  if (!c.config.empty()) {
    file = c.config;
  } else if (!checkpoint.empty()) {
    const auto echoed = fs::path(checkpoint).parent_path() / "config.json";
    if (fs::exists(echoed)) file = echoed;
  }
  auto sets = c.sets;
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (out_is_dir && !c.out.empty()) sets.push_back("out=\"" + c.out + "\"");
  return load_run_config(file, sets);
}

std::vector<Sample> render(const Dataset& data) {
  std::fprintf(stderr, "rendering %zu samples\n", data.size());
  return data.render_all();
}

int cmd_dataset(const Common& c) {
  const auto cfg = resolve(c);
  Dataset data(cfg.data);
  export_dataset(data, cfg.out);
  write_file(fs::path(cfg.out) / "config.json", echo_config(cfg));
  std::printf("wrote %zu samples to %s\n", data.size(), cfg.out.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::string& mode, const std::string& resume) {
  auto common = c;
  if (!mode.empty()) common.sets.insert(common.sets.begin(), "train_mode=\"" + mode + "\"");
  const auto cfg = resolve(common);
  const fs::path out = cfg.out;
  fs::create_directories(out);
  write_file(out / "config.json", echo_config(cfg));

  Dataset data(cfg.data);
  const auto samples = render(data);
  const auto split = holdout_split(data);
  const auto model = cfg.effective_model();
  const auto train = cfg.effective_train();
  auto progress = [&](const EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu/%zu  %s\n", m.epoch, train.epochs, metrics_row(m).c_str());
  };

  TrainingRun run;
  if (cfg.train_mode == TrainMode::L2) {
    L2Trainer trainer(model, train);
    if (!resume.empty()) trainer.restore(checkpoint_load(resume));
    run = trainer.run(samples, split.train, out, progress);
  } else {
    GanTrainer trainer(model, train, data.altitude_levels());
    if (!resume.empty()) trainer.restore(checkpoint_load(resume));
    run = trainer.run(samples, split.train, out, progress);
  }
  std::printf("%s: %zu epochs, %zu batches, %zu D steps, %zu G steps -> %s\n",
              train_mode_name(cfg.train_mode).c_str(), run.epochs_done, run.counts.batches, run.counts.d_steps,
              run.counts.g_steps, (out / "final.bin").c_str());
  return 0;
}

struct Loaded {
  RunConfig cfg;
  ModelConfig model;
  std::unique_ptr<Generator<float>> g;
  std::vector<CheckpointEntry> entries;
};

Loaded load(const Common& c, const std::string& checkpoint) {
  Loaded l;
  l.cfg = resolve(c, checkpoint, false);
  l.model = l.cfg.effective_model();
  l.g = make_generator<float>(l.model, 0);
  l.entries = checkpoint_load(checkpoint);
  load_generator(l.entries, *l.g);
  return l;
}

void write_frame(const Frame& f, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, encode_ppm(f.rgb, f.height, f.width));
  std::printf("wrote %s (%zux%zu)\n", path.c_str(), f.width, f.height);
  if (!f.mask.empty()) {
    auto mask_path = path;
    mask_path.replace_filename(path.stem().string() + "_mask" + path.extension().string());
    write_file(mask_path, encode_mask_ppm(f));
    std::printf("wrote %s\n", mask_path.c_str());
  }
}

double radians(double degrees) { return degrees * kPi / 180.0; }

struct ViewArgs {
  double azimuth = 0.0;
  double altitude = 20.0;
  double dx = 0.0, dy = 0.0, log_scale = 0.0;
  std::uint64_t z_seed = 0;

  Transform transform() const { return {dx, dy, log_scale}; }
};

void add_view(CLI::App* cmd, ViewArgs& v, bool with_azimuth) {
  if (with_azimuth) cmd->add_option("--azimuth", v.azimuth, "Azimuth in degrees");
  cmd->add_option("--altitude", v.altitude, "Altitude in degrees");
  cmd->add_option("--dx", v.dx, "Horizontal shift, fraction of the image size");
  cmd->add_option("--dy", v.dy, "Vertical shift, fraction of the image size");
  cmd->add_option("--log-scale", v.log_scale, "Log of the zoom factor");
  cmd->add_option("--z-seed", v.z_seed, "Seed of the noise vector (partial mode)");
}

void check_class(std::size_t k, const ModelConfig& model) {
  if (k >= model.num_classes)
    throw ConfigError("class " + std::to_string(k) + " out of range, model has " +
                      std::to_string(model.num_classes) + " classes");
}

std::vector<Frame> arrange(std::vector<Frame> frames, const std::string& grid) {
  if (grid.empty()) return {tile(frames, 1, frames.size())};
  const auto [rows, cols] = parse_grid(grid);
  return {tile(frames, rows, cols)};
}

int cmd_sample(const Common& c, const std::string& checkpoint, std::size_t klass, const ViewArgs& v) {
  auto l = load(c, checkpoint);
  check_class(klass, l.model);
  const auto frame = generate_frame(*l.g, l.model, one_hot(klass, l.model.num_classes),
                                    {radians(v.azimuth), radians(v.altitude)}, v.transform(),
                                    noise_vector(l.model.noise_dim, v.z_seed));
  write_frame(frame, c.out.empty() ? "sample.ppm" : c.out);
  return 0;
}

int cmd_rotate(const Common& c, const std::string& checkpoint, std::size_t klass, std::size_t steps,
               const ViewArgs& v, const std::string& grid) {
  if (steps < 2) throw ConfigError("rotation needs at least 2 steps");
  auto l = load(c, checkpoint);
  check_class(klass, l.model);
  const auto z = noise_vector(l.model.noise_dim, v.z_seed);
  std::vector<Frame> frames;
  for (double az : rotation_azimuths(steps))
    frames.push_back(generate_frame(*l.g, l.model, one_hot(klass, l.model.num_classes),
                                    {az, radians(v.altitude)}, v.transform(), z));
  write_frame(arrange(std::move(frames), grid).front(), c.out.empty() ? "rotate.ppm" : c.out);
  return 0;
}

int cmd_interpolate(const Common& c, const std::string& checkpoint, std::size_t from, std::size_t to,
                    std::size_t steps, const ViewArgs& v, const std::string& grid) {
  auto l = load(c, checkpoint);
  check_class(from, l.model);
  check_class(to, l.model);
  const auto z = noise_vector(l.model.noise_dim, v.z_seed);
  std::vector<Frame> frames;
  for (const auto& blend : class_blends(from, to, steps, l.model.num_classes))
    frames.push_back(generate_frame(*l.g, l.model, blend, {radians(v.azimuth), radians(v.altitude)},
                                    v.transform(), z));
  write_frame(arrange(std::move(frames), grid).front(), c.out.empty() ? "interpolate.ppm" : c.out);
  return 0;
}

int cmd_gradcheck(bool inject_bug) {
  const auto checks = gradient_suite(inject_bug);
  std::printf("%-6s %-50s %12s %10s\n", "group", "check", "max rel err", "tolerance");
  for (const auto& k : checks)
    std::printf("%-6s %-50s %12.3e %10.0e  %s\n", k.group.c_str(), k.name.c_str(), k.max_rel_error, k.tolerance,
                k.passed ? "pass" : "FAIL");
  const bool ok = all_passed(checks);
  std::printf("%zu checks, %s\n", checks.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : 1;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  auto l = load(c, checkpoint);
  Dataset data(l.cfg.data);
  const auto samples = render(data);
  const auto split = holdout_split(data);

  std::unique_ptr<ConditionalDiscriminator<float>> d;
  const bool has_d = std::any_of(l.entries.begin(), l.entries.end(),
                                 [](const CheckpointEntry& e) { return e.name.starts_with("D."); });
  if (has_d) {
    d = std::make_unique<ConditionalDiscriminator<float>>(l.model, 0);
    restore_store(l.entries, d->params(), "D.");
  }
  const auto report = evaluate(*l.g, d.get(), l.model, samples, split, l.cfg.train.seed);
  auto json = nlohmann::ordered_json::parse(report_json(report));
  nlohmann::ordered_json out;
  out["checkpoint"] = checkpoint;
  out["train_mode"] = train_mode_name(l.cfg.train_mode);
  out.update(json);
  const fs::path path = c.out.empty() ? fs::path(checkpoint).parent_path() / "eval.json" : fs::path(c.out);
  write_file(path, out.dump(2) + "\n");
  std::printf("%s", out.dump(2).c_str());
  std::printf("\nwrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional GAN on procedurally rendered chairs"};
  app.require_subcommand(1);

  Common c_dataset, c_train, c_sample, c_rotate, c_interp, c_eval;

  auto* dataset = app.add_subcommand("dataset", "Render the dataset to PPM/PGM files and a manifest");
  add_common(dataset, c_dataset, "Output directory");

  std::string mode, resume;
  auto* train = app.add_subcommand("train", "Train a model (gan-abs, gan-partial or l2)");
  add_common(train, c_train, "Output directory for config, metrics and checkpoints");
  train->add_option("--mode", mode, "gan-abs | gan-partial | l2");
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  std::string ck_sample, ck_rotate, ck_interp, ck_eval;
  std::size_t klass = 0, from = 0, to = 1, rot_steps = 36, interp_steps = 8;
  ViewArgs v_sample, v_rotate, v_interp;
  std::string grid_rotate, grid_interp;

  auto* sample = app.add_subcommand("sample", "Generate one image (and its mask in absolute mode)");
  add_common(sample, c_sample, "Output PPM path");
  sample->add_option("--checkpoint", ck_sample, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sample->add_option("--class", klass, "Class id")->required();
  add_view(sample, v_sample, true);

  auto* rotate = app.add_subcommand("rotate", "Strip of equally spaced azimuths for one class");
  add_common(rotate, c_rotate, "Output PPM path");
  rotate->add_option("--checkpoint", ck_rotate, "Checkpoint file")->required()->check(CLI::ExistingFile);
  rotate->add_option("--class", klass, "Class id")->required();
  rotate->add_option("--steps", rot_steps, "Number of azimuths");
  rotate->add_option("--grid", grid_rotate, "Lay frames out as ROWSxCOLS");
  add_view(rotate, v_rotate, false);

  auto* interp = app.add_subcommand("interpolate", "Strip of class blends at a fixed view");
  add_common(interp, c_interp, "Output PPM path");
  interp->add_option("--checkpoint", ck_interp, "Checkpoint file")->required()->check(CLI::ExistingFile);
  interp->add_option("--from", from, "First class")->required();
  interp->add_option("--to", to, "Second class")->required();
  interp->add_option("--steps", interp_steps, "Number of frames");
  interp->add_option("--grid", grid_interp, "Lay frames out as ROWSxCOLS");
  add_view(interp, v_interp, true);

  bool inject_bug = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op, layer and network");
  gradcheck->add_flag("--inject-bug", inject_bug, "Add a deliberately wrong backward rule");

  auto* eval = app.add_subcommand("eval", "Masked L2, discriminator accuracy and sharpness as JSON");
  add_common(eval, c_eval, "Report path (default: eval.json next to the checkpoint)");
  eval->add_option("--checkpoint", ck_eval, "Checkpoint file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dataset) return cmd_dataset(c_dataset);
    if (*train) return cmd_train(c_train, mode, resume);
    if (*sample) return cmd_sample(c_sample, ck_sample, klass, v_sample);
    if (*rotate) return cmd_rotate(c_rotate, ck_rotate, klass, rot_steps, v_rotate, grid_rotate);
    if (*interp) return cmd_interpolate(c_interp, ck_interp, from, to, interp_steps, v_interp, grid_interp);
    if (*gradcheck) return cmd_gradcheck(inject_bug);
    if (*eval) return cmd_eval(c_eval, ck_eval);
  } catch (const condgan::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
