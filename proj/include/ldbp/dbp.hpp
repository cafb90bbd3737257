#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"
#include "ldbp/channel.hpp"
#include "ldbp/params.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Sign of the receiver's nonlinear phase rotation; opposite to kerr_step.
inline constexpr double kDbpRotationSign = +1.0;

/// Symmetric odd-length complex FIR stored by its first ceil(K/2) taps.
class FoldedFir {
 public:
  /// half_taps.size() must equal (full_length + 1) / 2 and full_length must be odd.
  FoldedFir(std::vector<cplx> half_taps, std::size_t full_length);

  /// Folds an exactly symmetric odd-length tap vector; throws ArgumentError
  /// for even lengths or any asymmetry.
  static FoldedFir fold(std::span<const cplx> taps);

  std::vector<cplx> expand() const;
  std::span<const cplx> half_taps() const { return half_; }
  std::size_t length() const { return length_; }
  std::size_t center() const { return (length_ - 1) / 2; }

  bool operator==(const FoldedFir&) const = default;

 private:
  std::vector<cplx> half_;
  std::size_t length_;
};

/// Folded evaluation ("same" alignment, zero padding): ceil(K/2) complex
/// multiplies per output sample.
ComplexSignal fir_apply(const ComplexSignal& sig, const FoldedFir& f);
std::vector<cplx> fir_apply_folded(std::span<const cplx> x, const FoldedFir& f);

/// Direct-form evaluation of y[n] = sum_k h[k] x[n + c - k], any (also
/// asymmetric) taps, c = (K-1)/2, zero padding.
std::vector<cplx> fir_apply_direct(std::span<const cplx> x, std::span<const cplx> taps);

struct DbpStep {
  FoldedFir filter;
  double nl_scale = 0.0;  ///< gamma * L_eff of the step, rad/W
};

struct DbpMetadata {
  double sample_rate = 0.0;  ///< 0 disables the rate check
  std::size_t samples_per_symbol = 2;
  std::uint64_t seed = 0;
  std::string link;
};

struct DbpModel {
  std::vector<DbpStep> steps;
  DbpMetadata meta;

  void validate() const;
  std::vector<std::size_t> tap_lengths() const;
};

/// Per step: folded FIR, then u <- u exp(+j nl_scale P) with P = |u|^2 or the
/// Manakov sum for dual polarization.
ComplexSignal dbp_forward(const ComplexSignal& rx, const DbpModel& model);

struct InitOptions {
  double sample_rate = 20e9;
  std::size_t samples_per_symbol = 2;
  /// Fraction of the receiver band (|f| <= fraction * fs/2) used by the
  /// least-squares fit. 1.0 reproduces frequency-domain sampling.
  double band_fraction = 1.0;
  /// Weight of a zero-gain target outside the fitted band (0: unconstrained).
  double out_of_band_weight = 0.0;
};

/// Least-squares fit of the inverse dispersion exp(+j beta2/2 w^2 z) with K
/// (odd) taps on a dense frequency grid, symmetrized exactly. A positive
/// out_of_band_weight adds a zero-gain target outside the fitted band.
std::vector<cplx> fit_inverse_cd(double beta2_ps2_per_km, double z_km, std::size_t taps, double sample_rate,
                                 double band_fraction = 1.0, double out_of_band_weight = 0.0);

/// Baseline / initializer: n_steps uniform steps over the link, each with the
/// least-squares inverse-CD filter of its step length and the physical
/// nl_scale gamma * exp(-alpha * offset) * L_eff(step). taps_per_step is used
/// verbatim when it has n_steps entries, otherwise repeated cyclically.
DbpModel init_model(const FiberParams& fiber, int n_steps, std::span<const int> taps_per_step,
                    const InitOptions& opts = {});

/// Frequency-domain (FFT) DBP with the same step structure as init_model:
/// exact inverse dispersion per step, then the nonlinear rotation.
ComplexSignal dbp_fd_reference(const ComplexSignal& rx, const FiberParams& fiber, int n_steps);

struct ComplexityAccounting {
  int real_mults_per_complex_mult = 4;  ///< 3 selects the 3-multiplier complex product
  int nl_stage_cost = 6;                ///< intensity 3 + rotation 3, exponential via lookup
};

struct StepComplexity {
  std::size_t taps = 0;
  std::size_t filter_mults = 0;
  std::size_t nl_mults = 0;
};

struct ComplexityReport {
  std::size_t real_mults_per_sample = 0;
  std::size_t total_taps = 0;
  std::vector<StepComplexity> per_step;
  std::string rule;
};

/// Real multiplications per complex output sample for filters of the given
/// lengths (folded, ceil(K/2) complex multiplies each) plus one nonlinear
/// stage per step.
ComplexityReport complexity_report(std::span<const std::size_t> taps_per_step, const ComplexityAccounting& acc = {});
ComplexityReport complexity_report(const DbpModel& model, const ComplexityAccounting& acc = {});

// ---- learnable form --------------------------------------------------------

ParamSet dbp_params(const DbpModel& model);
/// Writes parameter values back into a model of the same architecture.
DbpModel dbp_from_params(const DbpModel& architecture, const ParamSet& params);
std::string dbp_taps_name(std::size_t step);
std::string dbp_nl_name(std::size_t step);

/// Differentiable folded FIR: x complex (any channel count), half complex
/// with (K+1)/2 taps.
ad::Var fir_folded_op(ad::Var x, ad::Var half, std::size_t full_length);
/// Differentiable general complex FIR ("same" alignment, odd length).
ad::Var fir_general_op(ad::Var x, ad::Var taps);
/// Differentiable nonlinear rotation x exp(j sign scale P); scale is a real scalar.
ad::Var kerr_rotation_op(ad::Var x, ad::Var scale, double sign);
/// Differentiable dbp_forward over parameters bound from dbp_params().
ad::Var dbp_forward_op(ad::Var rx, const DbpModel& architecture, const ParamVars& vars);

}  // namespace ldbp
