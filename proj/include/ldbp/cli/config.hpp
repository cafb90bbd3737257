#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ldbp/cli/experiment.hpp"
#include "ldbp/pmd_comp.hpp"
#include "ldbp/subband.hpp"
#include "ldbp/training.hpp"

namespace ldbp::cli {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

enum class Architecture { linear, dbp, subband_dbp, pmd_chain, mimo_fir };
std::string to_string(Architecture a);

struct DbpArch {
  int steps = 25;
  std::vector<int> taps{5, 3};  ///< repeated cyclically over the steps
  double band_fraction = 1.0;
  double out_of_band_weight = 0.0;
};

struct SubbandArch {
  int n_subbands = 3;
  int oversampling = 2;
  double prototype_rolloff = 0.1;
  int prototype_span_symbols = 64;
  int steps = 25;
  std::size_t band_taps = 7;
  std::vector<std::size_t> stage_taps{13};
  double fit_rolloff = 0.1;
};

struct PmdArch {
  std::optional<int> stages;  ///< default: the emulated link's section count
  int fd_taps = 5;
  StageOrder order = StageOrder::fd_then_rotation;
};

struct MimoArch {
  std::size_t taps = 15;
};

struct ReceiverConfig {
  Architecture architecture = Architecture::dbp;
  DbpArch dbp;
  SubbandArch subband;
  PmdArch pmd;
  MimoArch mimo;
  AdaptConfig::Mode adapt_mode = AdaptConfig::Mode::supervised;
};

struct DatasetConfig {
  std::size_t train_frames = 4;
  std::size_t validation_frames = 2;
  std::size_t eval_frames = 2;
  double train_power_dbm = 0.0;
  std::vector<double> power_sweep_dbm;  ///< default -6 .. +6 dBm in 1 dB steps
};

struct TrainingBlock {
  OptimizerConfig opt;
  RegularizerConfig reg;
  FakeQuantConfig fq;
  exp::WindowSpec window;
  long validate_every = 0;
  long checkpoint_every = 0;  ///< 0: no checkpoints
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 1;
  exp::Scenario scenario;
  DatasetConfig dataset;
  ReceiverConfig receiver;
  TrainingBlock training;
  std::optional<std::string> output_dir;

  /// Seed of the data frames, derived from `seed`.
  std::uint64_t data_seed() const;
  /// Seed of the training randomness (window draws), derived from `seed`.
  std::uint64_t training_seed() const;
};

/// Parses and validates a configuration. Unknown keys, wrong types and
/// out-of-range values raise ConfigError naming the offending key.
ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical, fully-populated form (every default spelled out).
json to_json(const ExperimentConfig& c);
json scenario_json(const exp::Scenario& s);

/// Scenario with the derived data seed applied.
exp::Scenario effective_scenario(const ExperimentConfig& c);

}  // namespace ldbp::cli
