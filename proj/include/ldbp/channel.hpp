#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "ldbp/rng.hpp"
#include "ldbp/signal.hpp"

namespace ldbp {

using Jones = Eigen::Matrix2cd;

/// Fiber constants in engineering units (ps, km, W).
struct FiberParams {
  double beta2_ps2_per_km = -21.7;
  double gamma_per_w_per_km = 1.3;
  double alpha_db_per_km = 0.2;
  double span_length_km = 80.0;
  int n_spans = 25;

  void validate() const;
  /// Power attenuation coefficient in 1/km.
  double alpha_per_km() const;
  /// Span loss as a linear power ratio (>= 1).
  double span_loss_linear() const;
  double total_length_km() const { return span_length_km * n_spans; }
};

/// Effective nonlinear length (1 - exp(-alpha z)) / alpha in km (z when alpha == 0).
double effective_length_km(double alpha_per_km, double z_km);

enum class Direction { forward, backward };

/// All-pass dispersion H(w) = exp(-/+ j (beta2/2) w^2 z): forward accumulates
/// dispersion, backward is its exact inverse. beta2 in ps^2/km, z in km.
ComplexSignal cd_operator(const ComplexSignal& sig, double beta2_ps2_per_km, double z_km, Direction dir);

/// Frequency response of cd_operator for N bins at the given sample rate.
std::vector<cplx> cd_response(std::size_t n, double sample_rate, double beta2_ps2_per_km, double z_km,
                              Direction dir);

/// Kerr phase rotation u <- u exp(-j gamma l_eff P). P = |u|^2 for one
/// polarization and 8/9 (|u_x|^2 + |u_y|^2) (Manakov) for two. The negative
/// sign pairs with the exp(-j beta2/2 w^2 z) dispersion convention so that
/// beta2 < 0, gamma > 0 behaves as anomalous-dispersion fiber.
ComplexSignal kerr_step(const ComplexSignal& sig, double gamma_per_w_per_km, double l_eff_km);

/// Manakov coupling factor for dual-polarization nonlinearity.
inline constexpr double kManakov = 8.0 / 9.0;

/// First-order PMD matrix diag(exp(-j w tau/2), exp(+j w tau/2)); tau in ps, w in rad/s.
Jones dgd_jones(double tau_ps, double omega_rad_s);

struct PmdSection {
  Jones rotation = Jones::Identity();
  double dgd_tau_ps = 0.0;
};

struct PmdLink {
  std::vector<PmdSection> sections;
  double mean_dgd_ps = 0.0;
  std::uint64_t seed = 0;

  /// Composite Jones matrix at angular frequency w: sections applied in list
  /// order (section 0 first), each as R * J(w).
  Jones jones(double omega_rad_s) const;
};

/// Checks unitarity and det 1 within tol; throws ArgumentError otherwise.
void check_special_unitary(const Jones& m, double tol = 1e-12);

/// Haar-distributed SU(2) matrix.
Jones haar_su2(Rng& rng);

/// Applies R * J(w) per frequency bin. Dual-polarization input required.
ComplexSignal pmd_section_apply(const ComplexSignal& sig, const PmdSection& section);

/// Link of m_sections with deterministic per-section DGD mean_dgd / sqrt(M)
/// and Haar-random rotations drawn from `seed`.
PmdLink draw_pmd_link(std::uint64_t seed, int m_sections, double mean_dgd_ps);

struct AmplifierConfig {
  std::optional<double> gain_db;  ///< defaults to the span loss
  double noise_figure_db = 5.0;
  bool noise_enabled = false;
  std::uint64_t seed = 0;
  double carrier_frequency_hz = 193.4e12;
};

/// Symmetric split-step solution of the NLSE over the whole link: per step
/// half dispersion, optional PMD section, Kerr rotation, half dispersion; loss
/// applied continuously; an amplifier closes every span. `frame_index` keys
/// the noise stream together with (seed, span index).
ComplexSignal propagate(const ComplexSignal& tx, const FiberParams& fiber, const std::optional<PmdLink>& pmd,
                        const AmplifierConfig& amp, int steps_per_span, std::uint64_t frame_index = 0);

/// Per-complex-sample ASE noise variance per polarization added by one amplifier.
double ase_noise_variance(const AmplifierConfig& amp, double gain_linear, double sample_rate);

/// Adds circular white gaussian noise of the given per-sample variance.
ComplexSignal add_awgn(const ComplexSignal& sig, double variance, Rng& rng);

}  // namespace ldbp
