#include "condgan/config.hpp"

#include <fstream>
#include <sstream>

#include "condgan/errors.hpp"

namespace condgan {

using nlohmann::json;
using nlohmann::ordered_json;

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::GanAbsolute: return "gan-abs";
    case TrainMode::GanPartial: return "gan-partial";
    case TrainMode::L2: return "l2";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "gan-abs") return TrainMode::GanAbsolute;
  if (name == "gan-partial") return TrainMode::GanPartial;
  if (name == "l2") return TrainMode::L2;
  throw ConfigError("unknown train mode '" + name + "' (expected gan-abs, gan-partial or l2)");
}

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  m.mode = train_mode == TrainMode::GanPartial ? Mode::Partial : Mode::Absolute;
  m.num_classes = data.num_classes;
  m.image_size = data.image_size;
  m.transform_dim = kTransformDim;
  m.dropout_rate = dropout_rate.value_or(train_mode == TrainMode::GanPartial ? 0.3 : 0.0);
  return m;
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.epochs = train_mode == TrainMode::L2 ? epochs_l2 : epochs_gan;
  t.l2_coeff = l2_coeff.value_or(train_mode == TrainMode::GanPartial ? 1e-4 : 0.0);
  return t;
}

void RunConfig::validate() const {
  if (out.empty()) throw ConfigError("out must not be empty");
  data.validate();
  if (data.azimuths % 2 != 0) throw ConfigError("azimuths must be even so every other view can be held out");
  effective_model().validate();
  effective_train().validate();
}

namespace {

// Visits every (key, field) pair; the one place that lists the keys.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("seed", c.train.seed);
  f("out", c.out);
  f("dataset_seed", c.data.seed);
  f("num_classes", c.data.num_classes);
  f("azimuths", c.data.azimuths);
  f("altitudes", c.data.altitudes);
  f("transforms", c.data.transforms);
  f("image_size", c.data.image_size);
  f("min_altitude_deg", c.data.min_altitude_deg);
  f("max_altitude_deg", c.data.max_altitude_deg);
  f("noise_dim", c.model.noise_dim);
  f("encoder_width", c.model.encoder_width);
  f("encoder_layers", c.model.encoder_layers);
  f("fused_width", c.model.fused_width);
  f("base_channels", c.model.base_channels);
  f("deconv_channels", c.model.deconv_channels);
  f("conv_channels", c.model.conv_channels);
  f("hidden_dim", c.model.hidden_dim);
  f("head_width", c.model.head_width);
  f("weight_norm", c.model.weight_norm);
  f("instance_norm", c.model.instance_norm);
  f("fan_in_init", c.model.fan_in_init);
  f("dropout_rate", c.dropout_rate);
  f("batch_size", c.train.batch_size);
  f("epochs_gan", c.epochs_gan);
  f("epochs_l2", c.epochs_l2);
  f("cadence", c.train.cadence);
  f("cadence_inverted", c.train.cadence_inverted);
  f("alpha", c.train.weights.alpha);
  f("beta", c.train.weights.beta);
  f("gamma_c", c.train.weights.gamma_c);
  f("gamma_v", c.train.weights.gamma_v);
  f("gamma_t", c.train.weights.gamma_t);
  f("lr", c.train.adam.lr);
  f("beta1", c.train.adam.beta1);
  f("beta2", c.train.adam.beta2);
  f("adam_eps", c.train.adam.eps);
  f("l2_coeff", c.l2_coeff);
  f("checkpoint_every", c.train.checkpoint_every);
}

template <typename V>
void write_value(ordered_json& j, const char* key, const V& v) {
  j[key] = v;
}

void write_value(ordered_json& j, const char* key, const std::optional<double>& v) {
  j[key] = v ? ordered_json(*v) : ordered_json(nullptr);
}

template <typename V>
void read_value(const json& j, V& out) {
  if constexpr (std::is_same_v<V, bool>) {
    if (!j.is_boolean()) throw ConfigError("expected true or false");
  } else if constexpr (std::is_unsigned_v<V>) {
    if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!j.is_number()) throw ConfigError("expected a number");
  } else if constexpr (std::is_same_v<V, std::string>) {
    if (!j.is_string()) throw ConfigError("expected a string");
  }
  out = j.get<V>();
}

void read_value(const json& j, std::vector<std::size_t>& out) {
  if (!j.is_array()) throw ConfigError("expected an array of integers");
  std::vector<std::size_t> v;
  for (const auto& e : j) {
    std::size_t x = 0;
    read_value(e, x);
    v.push_back(x);
  }
  out = std::move(v);
}

void read_value(const json& j, std::optional<double>& out) {
  if (j.is_null()) {
    out.reset();
    return;
  }
  double v = 0;
  read_value(j, v);
  out = v;
}

}  // namespace

ordered_json to_json(const RunConfig& config) {
  ordered_json j;
  j["train_mode"] = train_mode_name(config.train_mode);
  visit_fields(config, [&](const char* key, const auto& v) { write_value(j, key, v); });
  return j;
}

RunConfig merge_json(RunConfig base, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
      if (key == "train_mode") {
        if (!value.is_string()) throw ConfigError("expected a string");
        base.train_mode = parse_train_mode(value.get<std::string>());
        known = true;
      }
      visit_fields(base, [&](const char* name, auto& field) {
        if (key == name) {
          read_value(value, field);
          known = true;
        }
      });
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  return base;
}

RunConfig apply_override(RunConfig base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  return merge_json(std::move(base), json{{key, value}});
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
  RunConfig config;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    const json j = json::parse(ss.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + file->string() + " is not valid JSON");
    config = merge_json(config, j);
  }
  for (const auto& o : overrides) config = apply_override(config, o);
  config.validate();
  return config;
}

std::string echo_config(const RunConfig& config) {
  RunConfig resolved = config;
  resolved.dropout_rate = config.effective_model().dropout_rate;
  resolved.l2_coeff = config.effective_train().l2_coeff;
  return to_json(resolved).dump(2) + "\n";
}

}  // namespace condgan
