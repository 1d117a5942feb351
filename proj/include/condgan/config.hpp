#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "condgan/data.hpp"
#include "condgan/models.hpp"
#include "condgan/train.hpp"

namespace condgan {

enum class TrainMode { GanAbsolute, GanPartial, L2 };

std::string train_mode_name(TrainMode mode);
// Throws ConfigError for anything but gan-abs, gan-partial or l2.
TrainMode parse_train_mode(const std::string& name);

// Every knob of a run. Dropout and discriminator weight decay default per
// mode (0.3 and 1e-4 for gan-partial, 0 otherwise) unless set explicitly.
struct RunConfig {
  TrainMode train_mode = TrainMode::GanAbsolute;
  std::string out = "run";
  DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  std::size_t epochs_gan = 200;
  std::size_t epochs_l2 = 200;
  std::optional<double> dropout_rate;
  std::optional<double> l2_coeff;

  // Model and train settings with the mode-dependent values filled in.
  ModelConfig effective_model() const;
  TrainConfig effective_train() const;
  void validate() const;
};

// Flat JSON object with every key; optional values appear as null.
nlohmann::ordered_json to_json(const RunConfig& config);

// Overlays the keys of `j` on `base`. Throws ConfigError for an unknown key or
// a value of the wrong type.
RunConfig merge_json(RunConfig base, const nlohmann::json& j);

// "key=value"; the value is read as JSON when it parses, else as a string.
RunConfig apply_override(RunConfig base, const std::string& assignment);

// Defaults, then the file (when given), then each override in order.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

// The fully resolved configuration, mode defaults made explicit. Loading it
// back reproduces the run.
std::string echo_config(const RunConfig& config);

}  // namespace condgan
