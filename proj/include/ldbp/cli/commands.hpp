#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ldbp/cli/artifact.hpp"
#include "ldbp/cli/config.hpp"
#include "ldbp/cli/experiment.hpp"

namespace ldbp::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIntegrity = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitOther = 1;

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;

/// Layout of an experiment directory.
struct Layout {
  fs::path root;
  fs::path dataset_dir() const { return root / "dataset"; }
  fs::path manifest() const { return dataset_dir() / "manifest.json"; }
  fs::path model() const { return root / "model.json"; }
  fs::path history() const { return root / "history.csv"; }
  fs::path checkpoint() const { return root / "checkpoint.json"; }
  fs::path report_json() const { return root / "report.json"; }
  fs::path report_csv() const { return root / "report.csv"; }
  fs::path report_txt() const { return root / "report.txt"; }
  fs::path lock() const { return root / ".lock"; }
};

/// Exclusive advisory lock on an experiment directory for the lifetime of
/// the object; throws ConfigError when another process holds it.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

/// Digest of the canonical configuration (output_dir excluded).
std::string config_digest(const ExperimentConfig& c);
/// Digest of the parts that determine the dataset.
std::string dataset_digest(const ExperimentConfig& c);

struct Split {
  std::string name;
  double power_dbm = 0.0;
  exp::Dataset data;
};

void write_split(const fs::path& file, const exp::Dataset& d);
exp::Dataset read_split(const fs::path& file, const exp::Scenario& s, double power_dbm);
/// Loads one split named in the manifest, verifying its SHA-256.
exp::Dataset load_split(const Layout& l, const ExperimentConfig& c, const std::string& name);

struct TrainOptions {
  std::size_t threads = 1;
  bool resume = false;
  long stop_at = -1;  ///< stop early (simulated interruption); -1 runs to completion
};

void cmd_simulate(const ExperimentConfig& c, const fs::path& out, std::size_t threads);
/// Returns true when training ran to completion (artifact written).
bool cmd_train(const ExperimentConfig& c, const fs::path& out, const TrainOptions& opts);
void cmd_evaluate(const ExperimentConfig& c, const fs::path& out, std::size_t threads);
void cmd_export(const fs::path& out, const fs::path& file);
void cmd_import(const fs::path& out, const fs::path& file);
std::string cmd_report(const fs::path& out);

/// The initializer output for the configured architecture.
ModelArtifact initial_artifact(const ExperimentConfig& c);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace ldbp::cli
