#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"
#include "ldbp/channel.hpp"
#include "ldbp/params.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

/// Uniform DFT-modulated filter bank. Subband i is centered at
/// (i - (S-1)/2) * fs / S and sampled at oversampling * fs / S.
struct FilterBankConfig {
  int n_subbands = 3;
  std::vector<double> prototype;  ///< real symmetric taps at rate fs, odd length
  int oversampling = 2;
  double guard_fraction = 0.0;  ///< recorded frame fraction excluded from metrics

  /// RRC prototype with the given roll-off spanning span_subband_symbols
  /// subband symbol periods (S samples each).
  static FilterBankConfig rrc(int n_subbands, double rolloff = 0.1, int span_subband_symbols = 64);
  void validate() const;
};

struct SubbandFrame {
  std::vector<ComplexSignal> bands;
  std::vector<double> center_hz;
  double input_sample_rate = 0.0;
  std::size_t input_sps = 1;
  std::size_t input_samples = 0;   ///< length before padding
  std::size_t padded_samples = 0;  ///< length the bank operated on
  std::size_t n_pols = 1;

  std::size_t n_subbands() const { return bands.size(); }
  std::size_t band_length() const { return bands.empty() ? 0 : bands[0].size(); }
};

/// Frame-based (cyclic) analysis. Input shorter than a multiple of 2S is
/// zero padded and the original length recorded.
SubbandFrame split(const ComplexSignal& sig, const FilterBankConfig& cfg);
/// Matched synthesis; returns the original (unpadded) length.
ComplexSignal merge(const SubbandFrame& frame, const FilterBankConfig& cfg);
/// Sample delay of merge(split(x)) relative to x (the bank is zero-phase).
inline constexpr std::size_t kFilterBankDelay = 0;

/// Real S x S x L tensor, row-major (output band i, input band j, tap k).
struct MimoIntensityTensor {
  std::size_t n_subbands = 0;
  std::size_t taps = 1;
  std::vector<double> coeffs;

  static MimoIntensityTensor zeros(std::size_t s, std::size_t taps);
  /// g at (i, i, center) for every i.
  static MimoIntensityTensor diagonal(std::size_t s, std::size_t taps, double g);
  double& at(std::size_t i, std::size_t j, std::size_t k) { return coeffs[(i * n_subbands + j) * taps + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return coeffs[(i * n_subbands + j) * taps + k]; }
  std::size_t center() const { return (taps - 1) / 2; }
  void validate() const;
};

struct TensorCascade {
  std::vector<MimoIntensityTensor> stages;

  std::size_t composed_length() const;
  void validate() const;
  /// Dense tensor with identical action, obtained by driving the cascade
  /// with unit impulses.
  MimoIntensityTensor composed() const;
};

struct SparsityReport {
  std::size_t zeros = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};
SparsityReport sparsity_report(const TensorCascade& cascade);

/// Per-band intensity |u_i|^2 (Manakov 8/9 sum for dual polarization).
std::vector<std::vector<double>> band_intensities(const SubbandFrame& frame);
/// MIMO filtering of intensity waveforms: out[i][n] = sum_j sum_k c[i,j,k] in[j][n-k+center].
std::vector<std::vector<double>> mimo_filter(const std::vector<std::vector<double>>& in, const MimoIntensityTensor& t);
std::vector<std::vector<double>> coupled_phase(const SubbandFrame& frame, const MimoIntensityTensor& tensor);
std::vector<std::vector<double>> cascade_phase(const SubbandFrame& frame, const TensorCascade& cascade);

struct SubbandDbpStep {
  std::vector<std::vector<cplx>> filters;  ///< per band, odd length, general complex
  TensorCascade coupling;
};

struct SubbandDbpModel {
  std::vector<SubbandDbpStep> steps;
  void validate(std::size_t n_subbands) const;
};

/// Per step: per-band FIR, then u_i <- u_i exp(+j phi_i) with phi from the
/// coupling cascade (sign opposite to the forward Kerr rotation).
SubbandFrame subband_dbp_forward(const SubbandFrame& frame, const SubbandDbpModel& model);

struct SubbandInitOptions {
  std::size_t taps = 7;                       ///< per-band FIR length
  std::vector<std::size_t> stage_taps{13};    ///< one entry per cascade stage
  /// Fraction of each band's half-width (1+rolloff) fs/(2S) used by the fit.
  double fit_rolloff = 0.1;
};

/// Physical initializer: per-band least-squares fit of the inverse dispersion
/// around the band center (walk-off included), first cascade stage
/// nl * (2 - delta_ij) at the center tap, later stages identity.
SubbandDbpModel init_subband_model(const FiberParams& fiber, int n_steps, const FilterBankConfig& bank,
                                   double input_sample_rate, const SubbandInitOptions& opts);

/// Least-squares fit of exp(+j beta2/2 (w_c + w)^2 z) over |w| <= band_half_width
/// with K general complex taps at the given sample rate.
std::vector<cplx> fit_band_inverse_cd(double beta2_ps2_per_km, double z_km, double center_hz, double band_half_width_hz,
                                      std::size_t taps, double sample_rate);

// ---- learnable form --------------------------------------------------------

std::string subband_taps_name(std::size_t step, std::size_t band);
std::string subband_stage_name(std::size_t step, std::size_t stage);
ParamSet subband_params(const SubbandDbpModel& model);
SubbandDbpModel subband_from_params(const SubbandDbpModel& architecture, const ParamSet& params);

/// Packs a frame as a complex tensor with channel index band * n_pols + pol.
ad::Tensor frame_tensor(const SubbandFrame& frame);
SubbandFrame frame_from_tensor(const ad::Tensor& t, const SubbandFrame& like);

/// Differentiable pieces. `x` uses the frame_tensor layout.
ad::Var band_intensity_op(ad::Var x, std::size_t n_pols);
ad::Var band_rotate_op(ad::Var x, ad::Var phi, std::size_t n_pols, double sign);
ad::Var cascade_phase_op(ad::Var intensities, const std::vector<ad::Var>& stages, const TensorCascade& shape);
ad::Var subband_dbp_forward_op(ad::Var x, std::size_t n_pols, const SubbandDbpModel& architecture, const ParamVars& vars);
/// Differentiable synthesis bank: frame tensor -> full-band complex tensor
/// (n_pols channels, padded length).
ad::Var merge_op(ad::Var x, const SubbandFrame& like, const FilterBankConfig& cfg);

}  // namespace ldbp
