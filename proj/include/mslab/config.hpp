#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mslab/nets.hpp"
#include "mslab/training.hpp"

namespace mslab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataKind { Linear, MLP };

struct DataConfig {
  DataKind kind = DataKind::Linear;
  std::size_t d = 40;
  std::vector<std::size_t> dims{4, 4, 4};
  std::vector<std::size_t> counts{10000, 10000, 10000};
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> file;  ///< read instead of generating
};

struct AnalysisConfig {
  std::size_t noise_draws = 16;
  std::size_t hist_bins = 60;
  std::size_t pairs = 10000;
  bool masking = true;
  bool histogram = true;
  bool group_metric = true;
};

/// Everything one experiment needs. Built from flat `key = value` text.
struct ExperimentConfig {
  std::string preset = "custom";
  DataConfig data;
  ModelSpec model;
  double init_gamma = 1.0;
  TrainConfig train;
  AnalysisConfig analysis;
  std::filesystem::path out = "out";

  /// Builds the model, applying init_gamma to VAE-family models.
  Model make_model() const;
};

/// Names accepted by --preset: linear3x4, mlp4.
std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);

/// Parses key = value lines ('#' starts a comment). Keys override the preset
/// named by a `preset` key, if any. Unknown keys and malformed values throw
/// ConfigError. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// `seed` sets the data, model and training seeds together.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

/// Every key in a fixed order with normalized values; parse(canonical(c)) == c.
std::string canonical(const ExperimentConfig& cfg);

}  // namespace mslab
