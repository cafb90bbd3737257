#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"
#include "ldbp/channel.hpp"
#include "ldbp/params.hpp"
#include "ldbp/training.hpp"

namespace ldbp {

/// U = [[a, -conj(b)], [b, conj(a)]] with a = exp(j phi1) cos(theta),
/// b = exp(j phi2) sin(theta). Covers SU(2); all zeros give the identity.
struct RotationParams {
  double theta = 0.0;
  double phi1 = 0.0;
  double phi2 = 0.0;

  std::array<double, 3> as_array() const { return {theta, phi1, phi2}; }
  static RotationParams from_array(std::span<const double> v);
  bool operator==(const RotationParams&) const = default;
};

Jones rotation_matrix(const RotationParams& p);
/// dU/d(theta), dU/d(phi1), dU/d(phi2).
std::array<Jones, 3> rotation_jacobian(const RotationParams& p);
/// Angles reproducing a given SU(2) matrix (up to the periodicity of the angles).
RotationParams rotation_from_matrix(const Jones& u);

struct FdFilter {
  std::vector<double> taps;
  double delta = 0.0;  ///< nominal delay in samples relative to the window center
};

/// Lagrange interpolator of order L-1 with delay (L-1)/2 + delta (integer
/// division for the center). Throws RangeError when |delta| > (L-1)/2.
FdFilter fd_design(double delta, int length);

/// Group delay (samples, causal tap indexing) of real taps at normalized
/// frequency nu (cycles per sample), from the phase derivative.
double group_delay(std::span<const double> taps, double nu);

enum class StageOrder { fd_then_rotation, rotation_then_fd };

/// Pol-x is filtered with taps h, pol-y with the reversed sequence; both
/// "same"-aligned on the center (L-1)/2 (L odd).
struct PmdStage {
  RotationParams rotation;
  FdFilter fd;
  StageOrder order = StageOrder::fd_then_rotation;
};

struct MultiStepPmdModel {
  std::vector<PmdStage> stages;
};

/// Stages needed so that each handles at most 0.25 samples of DGD, or the
/// emulated link's section count when known.
int default_stage_count(std::optional<int> link_sections, double total_dgd_samples);

ComplexSignal pmd_stage_apply(const ComplexSignal& sig, const PmdStage& stage);
ComplexSignal pmd_comp_forward(const ComplexSignal& sig, const MultiStepPmdModel& model);
/// Samples at each frame edge affected by zero padding after all stages.
std::size_t pmd_guard_samples(const MultiStepPmdModel& model);

/// Exact inverse of a PmdLink: for every section in reverse order, rotation
/// R^H followed by the opposite DGD split as fractional delays.
MultiStepPmdModel mirror_link(const PmdLink& link, double sample_rate, int fd_length);

/// Real 4 x 4 x L tensor, row-major (output component, input component, tap),
/// components ordered (Re x, Im x, Re y, Im y).
struct MimoFirBaseline {
  std::size_t taps = 1;
  std::vector<double> w;

  static MimoFirBaseline identity(std::size_t taps);
  double& at(std::size_t o, std::size_t i, std::size_t k) { return w[(o * 4 + i) * taps + k]; }
  double at(std::size_t o, std::size_t i, std::size_t k) const { return w[(o * 4 + i) * taps + k]; }
  void validate() const;
};

ComplexSignal mimo_fir_apply(const ComplexSignal& sig, const MimoFirBaseline& w);

// ---- learnable form --------------------------------------------------------

std::string pmd_rotation_name(std::size_t stage);
std::string pmd_fd_name(std::size_t stage);
inline constexpr const char* kMimoWeightsName = "mimo.w";

ParamSet pmd_params(const MultiStepPmdModel& model);
MultiStepPmdModel pmd_from_params(const MultiStepPmdModel& architecture, const ParamSet& params);
ParamSet mimo_params(const MimoFirBaseline& w);
MimoFirBaseline mimo_from_params(const ParamSet& params);

/// Differentiable pieces on 2-channel complex tensors.
ad::Var rotation_op(ad::Var x, ad::Var angles);
ad::Var fd_pair_op(ad::Var x, ad::Var taps);
ad::Var pmd_comp_forward_op(ad::Var x, const MultiStepPmdModel& architecture, const ParamVars& vars);
ad::Var mimo_fir_op(ad::Var x, ad::Var w, std::size_t taps);

// ---- adaptation ------------------------------------------------------------

/// One block: matched-filtered receiver samples at `sps` samples per symbol
/// (2 complex channels) and the transmitted symbols of the block interior.
/// Output sample sps*k is aligned with symbol k - guard_symbols of `target`.
struct AdaptBlock {
  ad::Tensor input;
  ad::Tensor target;
  std::size_t guard_symbols = 0;
};

using BlockSource = std::function<AdaptBlock(long iteration, std::size_t element)>;

struct AdaptConfig {
  enum class Mode { cma, supervised };
  Mode mode = Mode::supervised;
  OptimizerConfig opt;
  double modulus = 1.0;  ///< CMA radius R
  std::size_t sps = 2;
  std::size_t threads = 1;
};

struct AdaptResult {
  ParamSet params;
  std::vector<HistoryRow> trace;
};

using EqualizerOp = std::function<ad::Var(ad::Var x, const ParamVars& vars)>;

EqualizerOp pmd_equalizer(const MultiStepPmdModel& architecture);
EqualizerOp mimo_equalizer(std::size_t taps);

/// Training problem behind adapt(): forward, decimate to symbol rate, crop
/// the block interior, CMA or MSE loss.
TrainProblem adapt_problem(const EqualizerOp& equalizer, const BlockSource& blocks, const AdaptConfig& cfg);

/// Block-wise SGD adaptation: forward, decimate to symbol rate, loss (CMA or
/// MSE against the block's symbols), backward, step.
AdaptResult adapt(const ParamSet& initial, const EqualizerOp& equalizer, const BlockSource& blocks, const AdaptConfig& cfg);
AdaptResult adapt(const MultiStepPmdModel& model, const BlockSource& blocks, const AdaptConfig& cfg);
AdaptResult adapt(const MimoFirBaseline& model, const BlockSource& blocks, const AdaptConfig& cfg);

}  // namespace ldbp
