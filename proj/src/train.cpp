#include "condgan/train.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "condgan/errors.hpp"

namespace condgan {

// ---------------------------------------------------------------------------
// Adam

template <typename T>
Adam<T>::Adam(ParamStore<T>& store, AdamConfig config) : store_(store), config_(config) {
  for (const auto& [name, p] : store_.entries()) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  const auto& entries = store_.entries();
  if (entries.size() != m_.size()) throw PreconditionError("adam: parameter set changed after construction");
  for (const auto& [name, p] : entries) {
    for (T g : p.grad())
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + name);
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor<T> handle = entries[k].second;
    auto value = handle.mutable_data();
    auto grad = handle.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      value[i] = static_cast<T>(value[i] - config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps));
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (cadence < 1) throw ConfigError("cadence must be at least 1");
  if (!(adam.lr > 0)) throw ConfigError("lr must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam.eps > 0)) throw ConfigError("Adam eps must be positive");
  if (l2_coeff < 0) throw ConfigError("l2_coeff must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  weights.validate();
}

// ---------------------------------------------------------------------------
// Steps

namespace {

template <typename T>
Tensor<T> squared_norm(const ParamStore<T>& store) {
  Tensor<T> total;
  for (const auto& [name, p] : store.entries()) {
    auto s = sum(hadamard(p, p));
    total = total.defined() ? add(total, s) : s;
  }
  return total;
}

}  // namespace

template <typename T>
DiscriminatorMetrics train_step_d(Generator<T>& g, Discriminator<T>& d, Adam<T>& opt,
                                  const Batch<T>& batch, const Negatives<T>& neg,
                                  const LossWeights& weights, double l2_coeff, Rng* dropout_rng) {
  const auto& cond = batch.cond;
  const std::size_t n = cond.batch();
  const bool partial = cond.z.defined();
  Tensor<T> fake;
  {
    FreezeGuard<T> freeze(g.params());
    auto out = g.synthesize(cond);
    fake = discriminator_input(out.rgb, out.mask);
  }
  const Tensor<T> real = discriminator_input(batch.rgb, fake.dim(1) == 4 ? batch.mask : Tensor<T>());

  // Stack every active component into one discriminator batch.
  enum Part { Real, Gen, NegC, NegV, NegT };
  std::vector<Part> parts;
  std::vector<Conditions<T>> conds;
  std::vector<Tensor<T>> images;
  auto push = [&](Part p, Conditions<T> c, const Tensor<T>& x) {
    parts.push_back(p);
    conds.push_back(std::move(c));
    images.push_back(x);
  };
  if (weights.alpha != 0) push(Real, cond, real);
  if (weights.beta != 0) push(Gen, cond, fake);
  if (weights.gamma_c != 0) push(NegC, {neg.c, cond.v, cond.t, cond.z}, real);
  // The partial discriminator never reads v or t.
  if (weights.gamma_v != 0 && !partial) push(NegV, {cond.c, neg.v, cond.t, cond.z}, real);
  if (weights.gamma_t != 0 && !partial) push(NegT, {cond.c, cond.v, neg.t, cond.z}, real);

  d.params().zero_grad();
  const Tensor<T> scores = d.score(concat_conditions(conds), concat(images, 0), dropout_rng);

  DiscriminatorLosses<T> losses;
  LossWeights active = weights;
  if (partial) active.gamma_v = active.gamma_t = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto p = slice(scores, 0, k * n, (k + 1) * n);
    switch (parts[k]) {
      case Real: losses.real = bce(p, 1.0); break;
      case Gen: losses.gen = bce(p, 0.0); break;
      case NegC: losses.neg_c = bce(p, 0.0); break;
      case NegV: losses.neg_v = weighted_bce(p, 0.0, squared_distances(cond.v, neg.v)); break;
      case NegT: losses.neg_t = weighted_bce(p, 0.0, squared_distances(cond.t, neg.t)); break;
    }
  }
  Tensor<T> total = loss_d_total(losses, active);
  if (l2_coeff > 0) total = add(total, scale(squared_norm(d.params()), static_cast<T>(l2_coeff)));
  if (!std::isfinite(static_cast<double>(total.item()))) throw NumericError("train_step_d: non-finite loss");
  backward(total);
  opt.step();

  auto value = [](const Tensor<T>& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; };
  return {value(losses.real), value(losses.gen), value(losses.neg_c),
          value(losses.neg_v), value(losses.neg_t), value(total)};
}

template <typename T>
double train_step_g(Generator<T>& g, Discriminator<T>& d, Adam<T>& opt, const Conditions<T>& cond,
                    Rng* dropout_rng) {
  g.params().zero_grad();
  const Tensor<T> loss = loss_g(d, g, cond, dropout_rng);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw NumericError("train_step_g: non-finite loss");
  backward(loss);
  opt.step();
  return value;
}

std::string metrics_row(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", m.epoch, m.step, m.loss_g,
                m.d.real, m.d.gen, m.d.neg_c, m.d.neg_v, m.d.neg_t, m.d.total);
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'G', 'A', 'N'};

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("checkpoint: name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw FormatError("checkpoint: rank too large for " + e.name);
    if (shape_numel(e.shape) != e.values.size()) throw FormatError("checkpoint: shape mismatch for " + e.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto extent : e.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    for (float v : e.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = in.take(in.get<std::uint16_t>());
    const auto rank = in.get<std::uint8_t>();
    for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(in.get<std::uint32_t>());
    e.values.resize(shape_numel(e.shape));
    for (auto& v : e.values) v = std::bit_cast<float>(in.get<std::uint32_t>());
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  return entries;
}

void checkpoint_save(const std::vector<CheckpointEntry>& entries, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(entries));
}

std::vector<CheckpointEntry> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

void append_store(std::vector<CheckpointEntry>& out, const ParamStore<float>& store, const std::string& prefix) {
  for (const auto& [name, p] : store.entries())
    out.push_back({prefix + name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
}

const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw FormatError("checkpoint: missing entry " + name);
}

void restore_store(const std::vector<CheckpointEntry>& entries, ParamStore<float>& store,
                   const std::string& prefix) {
  for (const auto& [name, p] : store.entries()) {
    const auto& e = find_entry(entries, prefix + name);
    if (e.shape != p.shape())
      throw FormatError("checkpoint: shape of " + e.name + " is " + shape_string(e.shape) + ", expected " +
                        shape_string(p.shape()));
    Tensor<float> handle = p;
    std::copy(e.values.begin(), e.values.end(), handle.mutable_data().begin());
  }
}

namespace {

void append_adam(std::vector<CheckpointEntry>& out, Adam<float>& opt, const ParamStore<float>& store,
                 const std::string& prefix) {
  const auto& entries = store.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    out.push_back({prefix + "m." + entries[k].first, entries[k].second.shape(), opt.first_moments()[k]});
    out.push_back({prefix + "v." + entries[k].first, entries[k].second.shape(), opt.second_moments()[k]});
  }
  out.push_back({prefix + "steps", {1}, {static_cast<float>(opt.steps())}});
}

void restore_adam(const std::vector<CheckpointEntry>& entries, Adam<float>& opt, const ParamStore<float>& store,
                  const std::string& prefix) {
  const auto& params = store.entries();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& m = find_entry(entries, prefix + "m." + params[k].first);
    const auto& v = find_entry(entries, prefix + "v." + params[k].first);
    if (m.values.size() != params[k].second.numel() || v.values.size() != params[k].second.numel())
      throw FormatError("checkpoint: optimizer state size mismatch for " + params[k].first);
    opt.first_moments()[k] = m.values;
    opt.second_moments()[k] = v.values;
  }
  opt.set_steps(static_cast<std::size_t>(find_entry(entries, prefix + "steps").values.at(0)));
}

void append_counter(std::vector<CheckpointEntry>& out, const std::string& name, std::size_t value) {
  out.push_back({name, {1}, {static_cast<float>(value)}});
}

std::size_t read_counter(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  return static_cast<std::size_t>(find_entry(entries, name).values.at(0));
}

constexpr std::uint64_t kGeneratorStream = 0x47454E;
constexpr std::uint64_t kDiscriminatorStream = 0x444953;
constexpr std::uint64_t kShuffleStream = 0x5348554646;
constexpr std::uint64_t kStepStream = 0x53544550;

std::vector<std::size_t> shuffled(std::vector<std::size_t> order, std::uint64_t seed, std::size_t epoch) {
  Rng rng(Rng::derive(Rng::derive(seed, kShuffleStream), epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

Rng step_rng(std::uint64_t seed, std::size_t batch) {
  return Rng(Rng::derive(Rng::derive(seed, kStepStream), batch));
}

void fill_noise(Conditions<float>& cond, std::size_t noise_dim, Rng& rng) {
  std::vector<float> z(cond.batch() * noise_dim);
  for (auto& e : z) e = static_cast<float>(rng.normal());
  cond.z = Tensor<float>::from({cond.batch(), noise_dim}, std::move(z));
}

// Appends one row; the header is written when the file starts fresh.
void log_metrics(const std::filesystem::path& out_dir, const EpochMetrics& m, bool fresh) {
  std::ofstream out(out_dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw FormatError("cannot write " + (out_dir / "metrics.csv").string());
  if (fresh) out << kMetricsHeader << '\n';
  out << metrics_row(m) << '\n';
}

std::filesystem::path epoch_checkpoint(const std::filesystem::path& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%04zu.bin", epoch);
  return dir / name;
}

void check_batches(std::size_t train_size, std::size_t batch_size) {
  if (train_size / batch_size == 0)
    throw ConfigError("training split of " + std::to_string(train_size) + " samples is smaller than one batch");
}

}  // namespace

std::uint64_t generator_seed(std::uint64_t seed) { return Rng::derive(seed, kGeneratorStream); }
std::uint64_t discriminator_seed(std::uint64_t seed) { return Rng::derive(seed, kDiscriminatorStream); }

void load_generator(const std::vector<CheckpointEntry>& entries, Generator<float>& g) {
  restore_store(entries, g.params(), "G.");
}

// ---------------------------------------------------------------------------
// GanTrainer

GanTrainer::GanTrainer(const ModelConfig& model, const TrainConfig& train, std::vector<double> altitude_levels)
    : model_(model),
      train_(train),
      altitudes_(std::move(altitude_levels)),
      g_(make_generator<float>(model, generator_seed(train.seed))),
      d_(model, discriminator_seed(train.seed)),
      opt_g_(g_->params(), train.adam),
      opt_d_(d_.params(), train.adam) {
  train_.validate();
}

std::vector<CheckpointEntry> GanTrainer::checkpoint() {
  std::vector<CheckpointEntry> out;
  append_store(out, g_->params(), "G.");
  append_store(out, d_.params(), "D.");
  append_adam(out, opt_g_, g_->params(), "adam.G.");
  append_adam(out, opt_d_, d_.params(), "adam.D.");
  append_counter(out, "state.epoch", epoch_);
  append_counter(out, "state.batches", counts_.batches);
  append_counter(out, "state.d_steps", counts_.d_steps);
  append_counter(out, "state.g_steps", counts_.g_steps);
  return out;
}

void GanTrainer::restore(const std::vector<CheckpointEntry>& entries) {
  restore_store(entries, g_->params(), "G.");
  restore_store(entries, d_.params(), "D.");
  restore_adam(entries, opt_g_, g_->params(), "adam.G.");
  restore_adam(entries, opt_d_, d_.params(), "adam.D.");
  epoch_ = read_counter(entries, "state.epoch");
  counts_.batches = read_counter(entries, "state.batches");
  counts_.d_steps = read_counter(entries, "state.d_steps");
  counts_.g_steps = read_counter(entries, "state.g_steps");
}

TrainingRun GanTrainer::run(const std::vector<Sample>& samples, const std::vector<std::size_t>& train,
                            const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  check_batches(train.size(), train_.batch_size);
  const std::size_t per_epoch = train.size() / train_.batch_size;
  const bool partial = model_.mode == Mode::Partial;
  const bool fresh = epoch_ == 0;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  TrainingRun result;
  try {
    while (epoch_ < train_.epochs) {
      const auto order = shuffled(train, train_.seed, epoch_);
      EpochMetrics m;
      std::size_t d_count = 0, g_count = 0;
      for (std::size_t b = 0; b < per_epoch; ++b) {
        const std::vector<std::size_t> idx(order.begin() + b * train_.batch_size,
                                           order.begin() + (b + 1) * train_.batch_size);
        auto batch = make_batch<float>(samples, idx, model_.num_classes);
        Rng rng = step_rng(train_.seed, counts_.batches);
        if (partial) fill_noise(batch.cond, model_.noise_dim, rng);
        const auto neg = sample_negatives(batch.cond, altitudes_, rng);
        Rng* drop = model_.dropout_rate > 0 ? &rng : nullptr;

        const bool on_cadence = (counts_.batches + 1) % train_.cadence == 0;
        const bool do_d = train_.cadence_inverted ? on_cadence : true;
        const bool do_g = train_.cadence_inverted ? true : on_cadence;
        if (do_d) {
          const auto dm = train_step_d(*g_, d_, opt_d_, batch, neg, train_.weights, train_.l2_coeff, drop);
          m.d.real += dm.real;
          m.d.gen += dm.gen;
          m.d.neg_c += dm.neg_c;
          m.d.neg_v += dm.neg_v;
          m.d.neg_t += dm.neg_t;
          m.d.total += dm.total;
          ++counts_.d_steps;
          ++d_count;
        }
        if (do_g) {
          m.loss_g += train_step_g(*g_, d_, opt_g_, batch.cond, drop);
          ++counts_.g_steps;
          ++g_count;
        }
        ++counts_.batches;
      }
      if (d_count > 0) {
        const double inv = 1.0 / static_cast<double>(d_count);
        m.d.real *= inv, m.d.gen *= inv, m.d.neg_c *= inv, m.d.neg_v *= inv, m.d.neg_t *= inv, m.d.total *= inv;
      }
      if (g_count > 0) m.loss_g /= static_cast<double>(g_count);
      ++epoch_;
      m.epoch = epoch_;
      m.step = counts_.batches;
      result.metrics.push_back(m);
      if (!out_dir.empty()) {
        log_metrics(out_dir, m, fresh && epoch_ == 1);
        if (epoch_ % train_.checkpoint_every == 0) checkpoint_save(checkpoint(), epoch_checkpoint(out_dir, epoch_));
      }
      if (on_epoch) on_epoch(m);
    }
  } catch (const NumericError&) {
    if (!out_dir.empty()) checkpoint_save(checkpoint(), out_dir / "abort.bin");
    throw;
  }
  if (!out_dir.empty()) checkpoint_save(checkpoint(), out_dir / "final.bin");
  result.counts = counts_;
  result.epochs_done = epoch_;
  return result;
}

// ---------------------------------------------------------------------------
// L2Trainer

L2Trainer::L2Trainer(const ModelConfig& model, const TrainConfig& train)
    : model_(model),
      train_(train),
      g_(make_generator<float>(model, generator_seed(train.seed))),
      opt_(g_->params(), train.adam) {
  if (model.mode != Mode::Absolute) throw ConfigError("the l2 baseline trains the absolute generator");
  train_.validate();
}

std::vector<CheckpointEntry> L2Trainer::checkpoint() {
  std::vector<CheckpointEntry> out;
  append_store(out, g_->params(), "G.");
  append_adam(out, opt_, g_->params(), "adam.G.");
  append_counter(out, "state.epoch", epoch_);
  append_counter(out, "state.batches", counts_.batches);
  append_counter(out, "state.g_steps", counts_.g_steps);
  return out;
}

void L2Trainer::restore(const std::vector<CheckpointEntry>& entries) {
  restore_store(entries, g_->params(), "G.");
  restore_adam(entries, opt_, g_->params(), "adam.G.");
  epoch_ = read_counter(entries, "state.epoch");
  counts_.batches = read_counter(entries, "state.batches");
  counts_.g_steps = read_counter(entries, "state.g_steps");
}

TrainingRun L2Trainer::run(const std::vector<Sample>& samples, const std::vector<std::size_t>& train,
                           const std::filesystem::path& out_dir, const EpochCallback& on_epoch) {
  check_batches(train.size(), train_.batch_size);
  const std::size_t per_epoch = train.size() / train_.batch_size;
  const bool fresh = epoch_ == 0;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  TrainingRun result;
  try {
    while (epoch_ < train_.epochs) {
      const auto order = shuffled(train, train_.seed, epoch_);
      EpochMetrics m;
      for (std::size_t b = 0; b < per_epoch; ++b) {
        const std::vector<std::size_t> idx(order.begin() + b * train_.batch_size,
                                           order.begin() + (b + 1) * train_.batch_size);
        const auto batch = make_batch<float>(samples, idx, model_.num_classes);
        g_->params().zero_grad();
        const auto out = g_->synthesize(batch.cond);
        const auto loss = l2_baseline_loss(out.rgb, out.mask, batch.rgb, batch.mask);
        const double value = loss.item();
        if (!std::isfinite(value)) throw NumericError("train_l2: non-finite loss");
        backward(loss);
        opt_.step();
        m.loss_g += value;
        ++counts_.g_steps;
        ++counts_.batches;
      }
      m.loss_g /= static_cast<double>(per_epoch);
      ++epoch_;
      m.epoch = epoch_;
      m.step = counts_.batches;
      result.metrics.push_back(m);
      if (!out_dir.empty()) {
        log_metrics(out_dir, m, fresh && epoch_ == 1);
        if (epoch_ % train_.checkpoint_every == 0) checkpoint_save(checkpoint(), epoch_checkpoint(out_dir, epoch_));
      }
      if (on_epoch) on_epoch(m);
    }
  } catch (const NumericError&) {
    if (!out_dir.empty()) checkpoint_save(checkpoint(), out_dir / "abort.bin");
    throw;
  }
  if (!out_dir.empty()) checkpoint_save(checkpoint(), out_dir / "final.bin");
  result.counts = counts_;
  result.epochs_done = epoch_;
  return result;
}

#define CONDGAN_INSTANTIATE_TRAIN(T)                                                                  \
  template class Adam<T>;                                                                             \
  template DiscriminatorMetrics train_step_d<T>(Generator<T>&, Discriminator<T>&, Adam<T>&,           \
                                                const Batch<T>&, const Negatives<T>&,                 \
                                                const LossWeights&, double, Rng*);                    \
  template double train_step_g<T>(Generator<T>&, Discriminator<T>&, Adam<T>&, const Conditions<T>&, \
                                   Rng*);

CONDGAN_INSTANTIATE_TRAIN(float)
CONDGAN_INSTANTIATE_TRAIN(double)

#undef CONDGAN_INSTANTIATE_TRAIN

}  // namespace condgan
