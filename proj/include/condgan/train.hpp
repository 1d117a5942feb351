#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "condgan/data.hpp"
#include "condgan/layers.hpp"
#include "condgan/losses.hpp"
#include "condgan/models.hpp"

namespace condgan {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter of one store.
template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& store, AdamConfig config);

  // Applies one update from the gradients currently held by the store.
  // Throws NumericError naming the parameter on a non-finite gradient.
  void step();
  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps(std::size_t n) { steps_ = n; }

 private:
  ParamStore<T>& store_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t steps_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  // One G step per `cadence` D steps; inverted gives `cadence` G steps per D step.
  std::size_t cadence = 3;
  bool cadence_inverted = false;
  LossWeights weights;
  AdamConfig adam;
  std::uint64_t seed = 1;
  double l2_coeff = 0.0;  // discriminator weight decay, added to the D loss
  std::size_t checkpoint_every = 10;

  void validate() const;
};

struct DiscriminatorMetrics {
  double real = 0, gen = 0, neg_c = 0, neg_v = 0, neg_t = 0, total = 0;
};

// One discriminator update. The five evaluations (real, generated, wrong
// class, wrong view, wrong transform) run as one stacked batch; components
// with zero weight are skipped and reported as 0. The generator is frozen.
template <typename T>
DiscriminatorMetrics train_step_d(Generator<T>& g, Discriminator<T>& d, Adam<T>& opt,
                                  const Batch<T>& batch, const Negatives<T>& neg,
                                  const LossWeights& weights, double l2_coeff, Rng* dropout_rng);

// One generator update on loss_g; the discriminator is frozen.
template <typename T>
double train_step_g(Generator<T>& g, Discriminator<T>& d, Adam<T>& opt, const Conditions<T>& cond,
                    Rng* dropout_rng);

// One row of the metrics log, averaged over the epoch's steps.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;  // batches processed so far
  double loss_g = 0;
  DiscriminatorMetrics d;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,loss_g,loss_d_real,loss_d_gen,loss_neg_c,loss_neg_v,loss_neg_t,loss_d_total";
std::string metrics_row(const EpochMetrics& m);

struct StepCounts {
  std::size_t batches = 0;
  std::size_t d_steps = 0;
  std::size_t g_steps = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries);
// Throws FormatError on a wrong magic, unknown version or truncated data.
std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);
void checkpoint_save(const std::vector<CheckpointEntry>& entries, const std::filesystem::path& path);
std::vector<CheckpointEntry> checkpoint_load(const std::filesystem::path& path);

void append_store(std::vector<CheckpointEntry>& out, const ParamStore<float>& store, const std::string& prefix);
// Copies `prefix`-named entries into the store. Throws FormatError on a
// missing name or a shape mismatch.
void restore_store(const std::vector<CheckpointEntry>& entries, ParamStore<float>& store,
                   const std::string& prefix);
const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

// ---------------------------------------------------------------------------
// Training loops

struct TrainingRun {
  std::vector<EpochMetrics> metrics;
  StepCounts counts;
  std::size_t epochs_done = 0;
};

// Observes the run after each epoch; used for progress output.
using EpochCallback = std::function<void(const EpochMetrics&)>;

// Adversarial training over `train` indices of the pre-rendered samples.
// Writes metrics.csv and checkpoints (ckpt_NNNN.bin every checkpoint_every
// epochs, final.bin at the end) when `out_dir` is non-empty. After restore()
// the run continues from the checkpointed epoch.
class GanTrainer {
 public:
  GanTrainer(const ModelConfig& model, const TrainConfig& train, std::vector<double> altitude_levels);

  TrainingRun run(const std::vector<Sample>& samples, const std::vector<std::size_t>& train,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

  std::vector<CheckpointEntry> checkpoint();
  void restore(const std::vector<CheckpointEntry>& entries);

  Generator<float>& generator() { return *g_; }
  ConditionalDiscriminator<float>& discriminator() { return d_; }
  const StepCounts& counts() const { return counts_; }
  std::size_t epoch() const { return epoch_; }

 private:
  ModelConfig model_;
  TrainConfig train_;
  std::vector<double> altitudes_;
  std::unique_ptr<Generator<float>> g_;
  ConditionalDiscriminator<float> d_;
  Adam<float> opt_g_, opt_d_;
  StepCounts counts_;
  std::size_t epoch_ = 0;
};

// Supervised baseline: the absolute generator against rendered targets with
// l2_baseline_loss. Same artifacts as GanTrainer, loss in the loss_g column.
class L2Trainer {
 public:
  L2Trainer(const ModelConfig& model, const TrainConfig& train);

  TrainingRun run(const std::vector<Sample>& samples, const std::vector<std::size_t>& train,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

  std::vector<CheckpointEntry> checkpoint();
  void restore(const std::vector<CheckpointEntry>& entries);
  Generator<float>& generator() { return *g_; }
  std::size_t epoch() const { return epoch_; }

 private:
  ModelConfig model_;
  TrainConfig train_;
  std::unique_ptr<Generator<float>> g_;
  Adam<float> opt_;
  StepCounts counts_;
  std::size_t epoch_ = 0;
};

// Seeds of the two networks derived from the run seed.
std::uint64_t generator_seed(std::uint64_t seed);
std::uint64_t discriminator_seed(std::uint64_t seed);

// Loads generator parameters from a checkpoint written by either trainer.
void load_generator(const std::vector<CheckpointEntry>& entries, Generator<float>& g);

}  // namespace condgan
