#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"
#include "ldbp/params.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

// ---- losses ----------------------------------------------------------------

/// Mean of |rx - tx|^2 over all symbols of all polarizations.
double mse_loss(const SymbolFrame& rx, const SymbolFrame& tx);
/// Sum over polarizations of the per-polarization mean of (|u|^2 - R)^2.
double cma_loss(const ComplexSignal& sig, double modulus);
/// CMA modulus E|s|^4 / E|s|^2 of a unit-energy QAM constellation.
double cma_modulus(int order);

/// Differentiable counterparts. `y` and `target` are complex with equal shape.
ad::Var mse_loss_op(ad::Var y, const ad::Tensor& target);
ad::Var cma_loss_op(ad::Var y, double modulus);

// ---- optimizer -------------------------------------------------------------

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::adam;
  double step_size = 1e-3;
  double decay_factor = 0.5;
  /// Iterations between decays; 0 selects a third of max_iterations.
  long decay_interval = 0;
  std::size_t batch_size = 1;
  long max_iterations = 0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  double step_size_at(long iteration) const;
};

struct OptimizerState {
  long steps = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const OptimizerState&) const = default;
};

/// Per-entry freeze flags aligned with a ParamSet (empty inner vector: nothing frozen).
struct ParamMask {
  std::vector<std::vector<std::uint8_t>> frozen;

  bool empty() const;
  bool is_frozen(std::size_t param, std::size_t entry) const;
  bool operator==(const ParamMask&) const = default;
};

/// One update theta <- theta - alpha * g (plain SGD) or the Adam rule. Frozen
/// entries are left untouched. Throws ContractViolation on shape mismatch.
void step(ParamSet& params, const GradRecord& grad, const OptimizerConfig& cfg, OptimizerState& state,
          const ParamMask* mask = nullptr);

// ---- regularization and pruning -------------------------------------------

struct RegularizerConfig {
  double l1_weight = 0.0;
  double prune_threshold = 0.0;
  std::vector<std::string> groups{groups::kTensor};

  void validate() const;
};

/// lambda * sum |theta| over parameters of the listed groups. When `grad` is
/// given, adds the subgradient lambda * sign(theta) (0 at 0).
double l1_penalty(const ParamSet& params, double lambda, const std::vector<std::string>& groups,
                  GradRecord* grad = nullptr);

struct PruneResult {
  ParamSet params;
  ParamMask mask;
  std::size_t zeros = 0;
  std::size_t total = 0;
  double sparsity = 0.0;
};

/// Zeroes every entry with |theta| < eps in the listed groups and freezes all
/// zero entries of those groups. Sparsity counts zeros over the listed groups.
PruneResult prune(const ParamSet& params, double eps, const std::vector<std::string>& groups);

// ---- fake quantization -----------------------------------------------------

struct FakeQuantConfig {
  int bits = 8;
  bool enabled = false;
  std::vector<std::string> groups{groups::kCdTaps};

  void validate() const;
};

/// Quantization step s / (2^(b-1) - 1).
double quant_step(int bits, double scale);
/// Symmetric mid-tread quantize-dequantize with saturation at +-scale.
double fake_quantize(double x, int bits, double scale);
/// Per-block scale: the largest |re| or |im| (or |value|) of the block.
double max_abs_scale(const Param& p);
/// Quantizes every listed-group parameter with its own max-abs scale.
ParamSet quantize_params(const ParamSet& params, const FakeQuantConfig& cfg);
/// Differentiable quantizer, straight-through inside [-scale, scale].
ad::Var fake_quantize_op(ad::Var x, int bits, double scale);

/// Places the parameters on a tape as leaves; quantized copies feed the
/// graph for the listed groups when fake quantization is enabled.
ParamVars bind(ad::Tape& tape, const ParamSet& params, const FakeQuantConfig& fq);

// ---- training loop ---------------------------------------------------------

struct HistoryRow {
  long iteration = 0;
  double data_loss = 0.0;
  double l1_penalty = 0.0;
  double total_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainProblem {
  /// Records the data loss of one mini-batch element; `iteration` and
  /// `element` key any randomness so results never depend on execution order.
  std::function<ad::Var(ad::Tape& tape, const ParamVars& vars, long iteration, std::size_t element)> element_loss;
  /// Optional held-out score (lower is better) used for best-so-far retention.
  std::function<double(const ParamSet& params)> validation;
  long validate_every = 0;
};

struct TrainConfig {
  OptimizerConfig opt;
  RegularizerConfig reg;
  FakeQuantConfig fq;
  std::size_t threads = 1;
};

struct TrainState {
  ParamSet params;
  ParamSet best;
  double best_score = 0.0;
  bool has_best = false;
  OptimizerState opt;
  ParamMask mask;
  std::vector<HistoryRow> history;
  long iteration = 0;
};

TrainState initial_state(const ParamSet& params);

/// Runs iterations until state.iteration reaches `stop_at` (or
/// cfg.opt.max_iterations when negative). Throws DivergenceError when a loss
/// or gradient becomes non-finite.
void train(const TrainProblem& problem, const TrainConfig& cfg, TrainState& state, long stop_at = -1);

/// One mini-batch: data loss, penalty and gradient at the current parameters.
struct BatchResult {
  double data_loss = 0.0;
  double penalty = 0.0;
  GradRecord grad;
};
BatchResult evaluate_batch(const TrainProblem& problem, const TrainConfig& cfg, const ParamSet& params, long iteration);

}  // namespace ldbp
