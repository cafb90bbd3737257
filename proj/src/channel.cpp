#include "ldbp/channel.hpp"

#include <Eigen/LU>
#include <cmath>
#include <numbers>
#include <string>

#include "ldbp/errors.hpp"

namespace ldbp {
namespace {

constexpr double kPs2ToS2 = 1e-24;
constexpr double kPsToS = 1e-12;
constexpr double kPlanck = 6.62607015e-34;

std::vector<std::vector<cplx>> copy_pols(const ComplexSignal& s) { return s.pols(); }

}  // namespace

void FiberParams::validate() const {
  if (!(span_length_km > 0.0)) throw ConfigError("FiberParams: span_length must be positive");
  if (n_spans < 1) throw ConfigError("FiberParams: n_spans must be >= 1");
  if (!(alpha_db_per_km >= 0.0)) throw ConfigError("FiberParams: alpha_db must be >= 0");
}

double FiberParams::alpha_per_km() const { return alpha_db_per_km * std::log(10.0) / 10.0; }

double FiberParams::span_loss_linear() const { return std::pow(10.0, alpha_db_per_km * span_length_km / 10.0); }

double effective_length_km(double alpha_per_km, double z_km) {
  if (alpha_per_km == 0.0) return z_km;
  return -std::expm1(-alpha_per_km * z_km) / alpha_per_km;
}

std::vector<cplx> cd_response(std::size_t n, double sample_rate, double beta2_ps2_per_km, double z_km,
                              Direction dir) {
  const double sign = dir == Direction::forward ? -1.0 : 1.0;
  const double b = beta2_ps2_per_km * kPs2ToS2 * z_km / 2.0;
  std::vector<cplx> h(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = bin_omega(k, n, sample_rate);
    h[k] = std::polar(1.0, sign * b * w * w);
  }
  return h;
}

ComplexSignal cd_operator(const ComplexSignal& sig, double beta2_ps2_per_km, double z_km, Direction dir) {
  if (beta2_ps2_per_km == 0.0 || z_km == 0.0) return sig;
  const auto h = cd_response(sig.size(), sig.grid().sample_rate(), beta2_ps2_per_km, z_km, dir);
  auto pols = copy_pols(sig);
  for (auto& p : pols) {
    fft_inplace(p);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] *= h[k];
    ifft_inplace(p);
  }
  return ComplexSignal(sig.grid(), std::move(pols));
}

ComplexSignal kerr_step(const ComplexSignal& sig, double gamma_per_w_per_km, double l_eff_km) {
  if (gamma_per_w_per_km == 0.0 || l_eff_km == 0.0) return sig;
  const double k = gamma_per_w_per_km * l_eff_km;
  auto pols = copy_pols(sig);
  const std::size_t n = sig.size();
  if (pols.size() == 1) {
    for (auto& v : pols[0]) v *= std::polar(1.0, -k * std::norm(v));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = kManakov * (std::norm(pols[0][i]) + std::norm(pols[1][i]));
      const cplx r = std::polar(1.0, -k * p);
      pols[0][i] *= r;
      pols[1][i] *= r;
    }
  }
  return ComplexSignal(sig.grid(), std::move(pols));
}

Jones dgd_jones(double tau_ps, double omega_rad_s) {
  const double half = omega_rad_s * tau_ps * kPsToS / 2.0;
  Jones m = Jones::Zero();
  m(0, 0) = std::polar(1.0, -half);
  m(1, 1) = std::polar(1.0, half);
  return m;
}

Jones PmdLink::jones(double omega_rad_s) const {
  Jones total = Jones::Identity();
  for (const auto& s : sections) total = s.rotation * dgd_jones(s.dgd_tau_ps, omega_rad_s) * total;
  return total;
}

void check_special_unitary(const Jones& m, double tol) {
  const double u = (m * m.adjoint() - Jones::Identity()).cwiseAbs().maxCoeff();
  const double d = std::abs(m.determinant() - cplx(1.0, 0.0));
  if (u > tol || d > tol)
    throw ArgumentError("matrix is not special unitary (|MM^H - I| = " + std::to_string(u) +
                        ", |det - 1| = " + std::to_string(d) + ")");
}

Jones haar_su2(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  double q[4];
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& v : q) {
      v = g(rng);
      n2 += v * v;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  const cplx a(q[0] * inv, q[1] * inv);
  const cplx b(q[2] * inv, q[3] * inv);
  Jones m;
  m << a, -std::conj(b), b, std::conj(a);
  return m;
}

ComplexSignal pmd_section_apply(const ComplexSignal& sig, const PmdSection& section) {
  if (!sig.dual_pol()) throw ArgumentError("pmd_section_apply: dual-polarization input required");
  auto pols = copy_pols(sig);
  const std::size_t n = sig.size();
  fft_inplace(pols[0]);
  fft_inplace(pols[1]);
  for (std::size_t k = 0; k < n; ++k) {
    const Jones m = section.rotation * dgd_jones(section.dgd_tau_ps, bin_omega(k, n, sig.grid().sample_rate()));
    const cplx x = pols[0][k];
    const cplx y = pols[1][k];
    pols[0][k] = m(0, 0) * x + m(0, 1) * y;
    pols[1][k] = m(1, 0) * x + m(1, 1) * y;
  }
  ifft_inplace(pols[0]);
  ifft_inplace(pols[1]);
  return ComplexSignal(sig.grid(), std::move(pols));
}

PmdLink draw_pmd_link(std::uint64_t seed, int m_sections, double mean_dgd_ps) {
  if (m_sections < 1) throw ArgumentError("draw_pmd_link: at least one section required");
  PmdLink link;
  link.seed = seed;
  link.mean_dgd_ps = mean_dgd_ps;
  const double tau = mean_dgd_ps / std::sqrt(static_cast<double>(m_sections));
  for (int i = 0; i < m_sections; ++i) {
    auto rng = keyed_rng(seed, {0x706d64ULL, static_cast<std::uint64_t>(i)});
    link.sections.push_back(PmdSection{haar_su2(rng), tau});
  }
  return link;
}

double ase_noise_variance(const AmplifierConfig& amp, double gain_linear, double sample_rate) {
  const double nf = std::pow(10.0, amp.noise_figure_db / 10.0);
  const double psd = (gain_linear - 1.0) * kPlanck * amp.carrier_frequency_hz * nf / 2.0;
  return psd * sample_rate;
}

ComplexSignal add_awgn(const ComplexSignal& sig, double variance, Rng& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(variance / 2.0));
  auto pols = copy_pols(sig);
  for (auto& p : pols)
    for (auto& v : p) {
      const double re = g(rng);
      const double im = g(rng);
      v += cplx(re, im);
    }
  return ComplexSignal(sig.grid(), std::move(pols));
}

namespace {

// Accumulates dispersion and loss lazily so that adjacent half steps cost one
// FFT pair.
class LinearAccumulator {
 public:
  LinearAccumulator(const FiberParams& f, double rate) : fiber_(f), rate_(rate) {}

  void add(double z_km) { pending_ += z_km; }

  void flush(std::vector<std::vector<cplx>>& pols) {
    if (pending_ == 0.0) return;
    const double amp = std::exp(-fiber_.alpha_per_km() * pending_ / 2.0);
    if (fiber_.beta2_ps2_per_km != 0.0) {
      const auto h = cd_response(pols[0].size(), rate_, fiber_.beta2_ps2_per_km, pending_, Direction::forward);
      for (auto& p : pols) {
        fft_inplace(p);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] *= h[k] * amp;
        ifft_inplace(p);
      }
    } else if (amp != 1.0) {
      for (auto& p : pols)
        for (auto& v : p) v *= amp;
    }
    pending_ = 0.0;
  }

 private:
  const FiberParams& fiber_;
  double rate_;
  double pending_ = 0.0;
};

}  // namespace

ComplexSignal propagate(const ComplexSignal& tx, const FiberParams& fiber, const std::optional<PmdLink>& pmd,
                        const AmplifierConfig& amp, int steps_per_span, std::uint64_t frame_index) {
  fiber.validate();
  if (steps_per_span < 1) throw ArgumentError("propagate: steps_per_span must be >= 1");
  if (pmd && !tx.dual_pol()) throw ArgumentError("propagate: PMD emulation needs a dual-polarization signal");

  const auto grid = tx.grid();
  auto pols = copy_pols(tx);
  const bool dual = pols.size() == 2;
  const double h = fiber.span_length_km / steps_per_span;
  const double alpha = fiber.alpha_per_km();
  // Nonlinear length referenced to the step midpoint power.
  const double l_nl = alpha == 0.0 ? h : 2.0 * std::sinh(alpha * h / 2.0) / alpha;
  const double k_nl = fiber.gamma_per_w_per_km * l_nl;
  const long total_steps = static_cast<long>(fiber.n_spans) * steps_per_span;
  const double gain_db = amp.gain_db.value_or(fiber.alpha_db_per_km * fiber.span_length_km);
  if (gain_db < 0.0) throw ConfigError("AmplifierConfig: gain_db must be >= 0");
  const double gain = std::pow(10.0, gain_db / 10.0);
  const double amp_scale = std::sqrt(gain);

  // PMD section j sits in step floor((j + 1/2) T / M).
  std::vector<std::vector<std::size_t>> pmd_at(static_cast<std::size_t>(total_steps));
  if (pmd) {
    const std::size_t m = pmd->sections.size();
    for (std::size_t j = 0; j < m; ++j) {
      auto s = static_cast<long>(std::floor((static_cast<double>(j) + 0.5) * static_cast<double>(total_steps) /
                                            static_cast<double>(m)));
      s = std::min(s, total_steps - 1);
      pmd_at[static_cast<std::size_t>(s)].push_back(j);
    }
  }

  LinearAccumulator lin(fiber, grid.sample_rate());
  long step = 0;
  for (int span = 0; span < fiber.n_spans; ++span) {
    for (int s = 0; s < steps_per_span; ++s, ++step) {
      lin.add(h / 2.0);
      const auto& here = pmd_at[static_cast<std::size_t>(step)];
      if (!here.empty()) {
        lin.flush(pols);
        for (auto j : here) {
          ComplexSignal tmp(grid, std::move(pols));
          pols = pmd_section_apply(tmp, pmd->sections[j]).pols();
        }
      }
      if (k_nl != 0.0) {
        lin.flush(pols);
        const std::size_t n = pols[0].size();
        if (!dual) {
          for (auto& v : pols[0]) v *= std::polar(1.0, -k_nl * std::norm(v));
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            const double p = kManakov * (std::norm(pols[0][i]) + std::norm(pols[1][i]));
            const cplx r = std::polar(1.0, -k_nl * p);
            pols[0][i] *= r;
            pols[1][i] *= r;
          }
        }
      }
      lin.add(h / 2.0);
    }
    lin.flush(pols);
    if (amp_scale != 1.0)
      for (auto& p : pols)
        for (auto& v : p) v *= amp_scale;
    if (amp.noise_enabled) {
      const double var = ase_noise_variance(amp, gain, grid.sample_rate());
      if (var > 0.0) {
        auto rng = keyed_rng(amp.seed, {static_cast<std::uint64_t>(span), frame_index});
        std::normal_distribution<double> g(0.0, std::sqrt(var / 2.0));
        for (auto& p : pols)
          for (auto& v : p) {
      const double re = g(rng);
      const double im = g(rng);
      v += cplx(re, im);
    }
      }
    }
  }
  return ComplexSignal(grid, std::move(pols));
}

}  // namespace ldbp
