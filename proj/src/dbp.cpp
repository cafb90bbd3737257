#include "ldbp/dbp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ldbp/errors.hpp"

namespace ldbp {

namespace {

constexpr double kPs2ToS2 = 1e-24;

long as_long(std::size_t v) { return static_cast<long>(v); }

void rotate_inplace(std::vector<std::vector<cplx>>& pols, double scale) {
  if (scale == 0.0) return;
  if (pols.size() == 1) {
    for (auto& v : pols[0]) v *= std::polar(1.0, kDbpRotationSign * scale * std::norm(v));
    return;
  }
  for (std::size_t i = 0; i < pols[0].size(); ++i) {
    const double p = kManakov * (std::norm(pols[0][i]) + std::norm(pols[1][i]));
    const cplx r = std::polar(1.0, kDbpRotationSign * scale * p);
    pols[0][i] *= r;
    pols[1][i] *= r;
  }
}

}  // namespace

FoldedFir::FoldedFir(std::vector<cplx> half_taps, std::size_t full_length)
    : half_(std::move(half_taps)), length_(full_length) {
  if (full_length == 0 || full_length % 2 == 0) throw ArgumentError("FoldedFir: length must be odd");
  if (half_.size() != (full_length + 1) / 2) throw ArgumentError("FoldedFir: half tap count does not match length");
}

FoldedFir FoldedFir::fold(std::span<const cplx> taps) {
  const std::size_t k = taps.size();
  if (k == 0 || k % 2 == 0) throw ArgumentError("fold: tap count must be odd");
  for (std::size_t i = 0; i < k / 2; ++i)
    if (taps[i] != taps[k - 1 - i]) throw ArgumentError("fold: taps are not exactly symmetric");
  return FoldedFir(std::vector<cplx>(taps.begin(), taps.begin() + as_long((k + 1) / 2)), k);
}

std::vector<cplx> FoldedFir::expand() const {
  std::vector<cplx> h(length_);
  for (std::size_t i = 0; i < length_; ++i) h[i] = half_[std::min(i, length_ - 1 - i)];
  return h;
}

std::vector<cplx> fir_apply_folded(std::span<const cplx> x, const FoldedFir& f) {
  const long n = as_long(x.size());
  const long c = as_long(f.center());
  const auto h = f.half_taps();
  std::vector<cplx> y(x.size());
  auto at = [&](long i) { return (i >= 0 && i < n) ? x[static_cast<std::size_t>(i)] : cplx{}; };
  for (long i = 0; i < n; ++i) {
    cplx acc = h[static_cast<std::size_t>(c)] * at(i);
    for (long k = 0; k < c; ++k) acc += h[static_cast<std::size_t>(k)] * (at(i + c - k) + at(i - c + k));
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

std::vector<cplx> fir_apply_direct(std::span<const cplx> x, std::span<const cplx> taps) {
  if (taps.empty() || taps.size() % 2 == 0) throw ArgumentError("fir_apply_direct: tap count must be odd");
  const long n = as_long(x.size());
  const long k_len = as_long(taps.size());
  const long c = (k_len - 1) / 2;
  std::vector<cplx> y(x.size());
  for (long i = 0; i < n; ++i) {
    cplx acc{};
    for (long k = 0; k < k_len; ++k) {
      const long j = i + c - k;
      if (j >= 0 && j < n) acc += taps[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(j)];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

ComplexSignal fir_apply(const ComplexSignal& sig, const FoldedFir& f) {
  std::vector<std::vector<cplx>> out;
  for (const auto& p : sig.pols()) out.push_back(fir_apply_folded(p, f));
  return ComplexSignal(sig.grid(), std::move(out));
}

void DbpModel::validate() const {
  if (steps.empty()) throw ArgumentError("DbpModel: at least one step required");
  for (const auto& s : steps)
    if (!std::isfinite(s.nl_scale)) throw ArgumentError("DbpModel: non-finite nl_scale");
}

std::vector<std::size_t> DbpModel::tap_lengths() const {
  std::vector<std::size_t> out;
  for (const auto& s : steps) out.push_back(s.filter.length());
  return out;
}

ComplexSignal dbp_forward(const ComplexSignal& rx, const DbpModel& model) {
  model.validate();
  const double fs = model.meta.sample_rate;
  if (fs > 0.0 && std::abs(rx.grid().sample_rate() - fs) > 1e-9 * fs)
    throw ConfigError("dbp_forward: signal sample rate does not match the model");
  auto pols = rx.pols();
  for (const auto& step : model.steps) {
    for (auto& p : pols) p = fir_apply_folded(p, step.filter);
    rotate_inplace(pols, step.nl_scale);
  }
  return ComplexSignal(rx.grid(), std::move(pols));
}

std::vector<cplx> fit_inverse_cd(double beta2_ps2_per_km, double z_km, std::size_t taps, double sample_rate,
                                 double band_fraction, double out_of_band_weight) {
  if (taps == 0 || taps % 2 == 0) throw ArgumentError("fit_inverse_cd: tap count must be odd");
  if (!(band_fraction > 0.0 && band_fraction <= 1.0)) throw ArgumentError("fit_inverse_cd: band fraction in (0, 1]");
  if (!(out_of_band_weight >= 0.0)) throw ArgumentError("fit_inverse_cd: out-of-band weight must be >= 0");
  const std::size_t c = (taps - 1) / 2;
  // With a positive weight the grid covers the whole band and the stop band
  // is pulled towards zero gain.
  const bool constrained = out_of_band_weight > 0.0 && band_fraction < 1.0;
  const double span = constrained ? 1.0 : band_fraction;
  const double stop_w = std::sqrt(out_of_band_weight);
  // Symmetric taps give H(w) = g0 + sum_m g_m 2 cos(m w T): a real basis, so
  // the real and imaginary parts of the target are fitted independently.
  const std::size_t grid = std::max<std::size_t>(4096, 64 * taps);
  Eigen::MatrixXd a(grid, c + 1);
  Eigen::MatrixXd rhs(grid, 2);
  const double b = beta2_ps2_per_km * kPs2ToS2 * z_km / 2.0;
  for (std::size_t r = 0; r < grid; ++r) {
    // Midpoint grid over [-span, span] * pi in normalized frequency.
    const double nu = span * std::numbers::pi * (-1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(grid));
    const double w = nu * sample_rate;
    const bool stop = std::abs(nu) > band_fraction * std::numbers::pi;
    const double wt = stop ? stop_w : 1.0;
    a(static_cast<long>(r), 0) = wt;
    for (std::size_t m = 1; m <= c; ++m)
      a(static_cast<long>(r), static_cast<long>(m)) = wt * 2.0 * std::cos(static_cast<double>(m) * nu);
    const cplx d = stop ? cplx{} : std::polar(1.0, b * w * w);
    rhs(static_cast<long>(r), 0) = d.real();
    rhs(static_cast<long>(r), 1) = d.imag();
  }
  const Eigen::MatrixXd g = a.colPivHouseholderQr().solve(rhs);
  std::vector<cplx> h(taps);
  for (std::size_t m = 0; m <= c; ++m) {
    const cplx v(g(static_cast<long>(m), 0), g(static_cast<long>(m), 1));
    h[c - m] = v;
    h[c + m] = v;
  }
  return h;
}

DbpModel init_model(const FiberParams& fiber, int n_steps, std::span<const int> taps_per_step,
                    const InitOptions& opts) {
  fiber.validate();
  if (n_steps < 1) throw ArgumentError("init_model: n_steps must be >= 1");
  if (taps_per_step.empty()) throw ArgumentError("init_model: empty tap pattern");
  for (int k : taps_per_step)
    if (k < 1 || k % 2 == 0) throw ArgumentError("init_model: tap counts must be odd and positive");
  if (!(opts.sample_rate > 0.0)) throw ArgumentError("init_model: sample rate must be positive");

  const double h = fiber.total_length_km() / n_steps;
  const double alpha = fiber.alpha_per_km();
  DbpModel model;
  model.meta.sample_rate = opts.sample_rate;
  model.meta.samples_per_symbol = opts.samples_per_symbol;
  std::ostringstream link;
  link << fiber.n_spans << "x" << fiber.span_length_km << "km";
  model.meta.link = link.str();

  for (int k = 0; k < n_steps; ++k) {
    const auto taps = static_cast<std::size_t>(taps_per_step[static_cast<std::size_t>(k) % taps_per_step.size()]);
    const auto full = fit_inverse_cd(fiber.beta2_ps2_per_km, h, taps, opts.sample_rate, opts.band_fraction,
                                     opts.out_of_band_weight);
    // Step k undoes forward segment n_steps-1-k; the power profile restarts at every span.
    const double z0 = h * (n_steps - 1 - k);
    const double offset = z0 - fiber.span_length_km * std::floor(z0 / fiber.span_length_km + 1e-9);
    const double nl = fiber.gamma_per_w_per_km * std::exp(-alpha * offset) * effective_length_km(alpha, h);
    model.steps.push_back({FoldedFir::fold(full), nl});
  }
  return model;
}

ComplexSignal dbp_fd_reference(const ComplexSignal& rx, const FiberParams& fiber, int n_steps) {
  fiber.validate();
  if (n_steps < 1) throw ArgumentError("dbp_fd_reference: n_steps must be >= 1");
  const double h = fiber.total_length_km() / n_steps;
  const double alpha = fiber.alpha_per_km();
  const auto resp = cd_response(rx.size(), rx.grid().sample_rate(), fiber.beta2_ps2_per_km, h, Direction::backward);
  auto pols = rx.pols();
  for (int k = 0; k < n_steps; ++k) {
    for (auto& p : pols) {
      fft_inplace(p);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] *= resp[i];
      ifft_inplace(p);
    }
    const double z0 = h * (n_steps - 1 - k);
    const double offset = z0 - fiber.span_length_km * std::floor(z0 / fiber.span_length_km + 1e-9);
    rotate_inplace(pols, fiber.gamma_per_w_per_km * std::exp(-alpha * offset) * effective_length_km(alpha, h));
  }
  return ComplexSignal(rx.grid(), std::move(pols));
}

ComplexityReport complexity_report(std::span<const std::size_t> taps_per_step, const ComplexityAccounting& acc) {
  if (acc.real_mults_per_complex_mult != 3 && acc.real_mults_per_complex_mult != 4)
    throw ArgumentError("complexity_report: real multiplies per complex multiply must be 3 or 4");
  ComplexityReport r;
  for (std::size_t k : taps_per_step) {
    StepComplexity s;
    s.taps = k;
    s.filter_mults = static_cast<std::size_t>(acc.real_mults_per_complex_mult) * ((k + 1) / 2);
    s.nl_mults = static_cast<std::size_t>(acc.nl_stage_cost);
    r.total_taps += k;
    r.real_mults_per_sample += s.filter_mults + s.nl_mults;
    r.per_step.push_back(s);
  }
  std::ostringstream rule;
  rule << "real multiplications per complex output sample: " << acc.real_mults_per_complex_mult
       << " per complex multiply, ceil(K/2) complex multiplies per folded K-tap filter, " << acc.nl_stage_cost
       << " per nonlinear stage";
  r.rule = rule.str();
  return r;
}

ComplexityReport complexity_report(const DbpModel& model, const ComplexityAccounting& acc) {
  const auto lengths = model.tap_lengths();
  return complexity_report(std::span<const std::size_t>(lengths), acc);
}

std::string dbp_taps_name(std::size_t step) { return "dbp.step" + std::to_string(step) + ".taps"; }
std::string dbp_nl_name(std::size_t step) { return "dbp.step" + std::to_string(step) + ".nl"; }

ParamSet dbp_params(const DbpModel& model) {
  ParamSet ps;
  for (std::size_t k = 0; k < model.steps.size(); ++k) {
    const auto& s = model.steps[k];
    Param taps;
    taps.name = dbp_taps_name(k);
    taps.group = groups::kCdTaps;
    taps.shape = {s.filter.half_taps().size()};
    taps.is_complex = true;
    for (cplx v : s.filter.half_taps()) {
      taps.values.push_back(v.real());
      taps.values.push_back(v.imag());
    }
    ps.add(std::move(taps));
    ps.add(Param{dbp_nl_name(k), groups::kNlScale, {1}, false, {s.nl_scale}});
  }
  return ps;
}

DbpModel dbp_from_params(const DbpModel& architecture, const ParamSet& params) {
  DbpModel out = architecture;
  for (std::size_t k = 0; k < out.steps.size(); ++k) {
    auto& s = out.steps[k];
    const Param& taps = params.at(dbp_taps_name(k));
    if (taps.values.size() != 2 * s.filter.half_taps().size())
      throw ContractViolation("dbp_from_params: tap count mismatch at step " + std::to_string(k));
    std::vector<cplx> half(s.filter.half_taps().size());
    for (std::size_t i = 0; i < half.size(); ++i) half[i] = {taps.values[2 * i], taps.values[2 * i + 1]};
    s.filter = FoldedFir(std::move(half), s.filter.length());
    s.nl_scale = params.at(dbp_nl_name(k)).values.at(0);
  }
  return out;
}

// ---- differentiable ops ----------------------------------------------------

namespace {

// y[n] = sum_k h[k] x[n + c - k] on every channel; accumulates the adjoints.
void fir_forward(const ad::Tensor& x, std::span<const cplx> h, ad::Tensor& y) {
  const long n = as_long(x.length());
  const long k_len = as_long(h.size());
  const long c = (k_len - 1) / 2;
  for (std::size_t ch = 0; ch < x.channels; ++ch) {
    auto in = x.cch(ch);
    auto out = y.cch(ch);
    for (long i = 0; i < n; ++i) {
      cplx acc{};
      const long lo = std::max(0L, i + c - (n - 1));
      const long hi = std::min(k_len - 1, i + c);
      for (long k = lo; k <= hi; ++k) acc += h[static_cast<std::size_t>(k)] * in[static_cast<std::size_t>(i + c - k)];
      out[static_cast<std::size_t>(i)] = acc;
    }
  }
}

void fir_reverse(const ad::Tensor& x, std::span<const cplx> h, const ad::Tensor& g, ad::Tensor* gx,
                 std::vector<cplx>* gh) {
  const long n = as_long(x.length());
  const long k_len = as_long(h.size());
  const long c = (k_len - 1) / 2;
  for (std::size_t ch = 0; ch < x.channels; ++ch) {
    auto in = x.cch(ch);
    auto gy = g.cch(ch);
    for (long i = 0; i < n; ++i) {
      const cplx gi = gy[static_cast<std::size_t>(i)];
      const long lo = std::max(0L, i + c - (n - 1));
      const long hi = std::min(k_len - 1, i + c);
      for (long k = lo; k <= hi; ++k) {
        const auto j = static_cast<std::size_t>(i + c - k);
        if (gx) gx->cch(ch)[j] += std::conj(h[static_cast<std::size_t>(k)]) * gi;
        if (gh) (*gh)[static_cast<std::size_t>(k)] += std::conj(in[j]) * gi;
      }
    }
  }
}

}  // namespace

ad::Var fir_folded_op(ad::Var x, ad::Var half, std::size_t full_length) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& hv = half.value();
  if (!xv.is_complex || !hv.is_complex || hv.channels != 1) throw ArgumentError("fir_folded_op: complex inputs required");
  if (full_length % 2 == 0 || hv.length() != (full_length + 1) / 2)
    throw ArgumentError("fir_folded_op: half tap count does not match the odd full length");
  const FoldedFir f(hv.complex_channel(0), full_length);
  const auto h = f.expand();
  ad::Tensor out = ad::Tensor::complex(xv.channels, xv.length());
  fir_forward(xv, h, out);
  return x.tape().record("fir_folded", std::move(out), {x, half},
                         [x, h, full_length](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           std::vector<cplx> gh(full_length);
                           fir_reverse(x.value(), h, g, gi[0], gi[1] ? &gh : nullptr);
                           if (!gi[1]) return;
                           auto gh_half = gi[1]->cch(0);
                           for (std::size_t k = 0; k < full_length; ++k) gh_half[std::min(k, full_length - 1 - k)] += gh[k];
                         });
}

ad::Var fir_general_op(ad::Var x, ad::Var taps) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& tv = taps.value();
  if (!xv.is_complex || !tv.is_complex || tv.channels != 1) throw ArgumentError("fir_general_op: complex inputs required");
  if (tv.length() % 2 == 0) throw ArgumentError("fir_general_op: tap count must be odd");
  const auto h = tv.complex_channel(0);
  ad::Tensor out = ad::Tensor::complex(xv.channels, xv.length());
  fir_forward(xv, h, out);
  return x.tape().record("fir_general", std::move(out), {x, taps},
                         [x, h](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           std::vector<cplx> gh(h.size());
                           fir_reverse(x.value(), h, g, gi[0], gi[1] ? &gh : nullptr);
                           if (!gi[1]) return;
                           auto dst = gi[1]->cch(0);
                           for (std::size_t k = 0; k < h.size(); ++k) dst[k] += gh[k];
                         });
}

ad::Var kerr_rotation_op(ad::Var x, ad::Var scale, double sign) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& sv = scale.value();
  if (!xv.is_complex || (xv.channels != 1 && xv.channels != 2)) throw ArgumentError("kerr_rotation_op: 1 or 2 complex channels");
  if (sv.is_complex || sv.data.size() != 1) throw ArgumentError("kerr_rotation_op: scale must be a real scalar");
  const double kappa = xv.channels == 2 ? kManakov : 1.0;
  const std::size_t n = xv.length();
  const double a = sv.data[0];
  std::vector<double> power(n, 0.0);
  for (std::size_t ch = 0; ch < xv.channels; ++ch) {
    auto in = xv.cch(ch);
    for (std::size_t i = 0; i < n; ++i) power[i] += kappa * std::norm(in[i]);
  }
  ad::Tensor out = xv;
  for (std::size_t ch = 0; ch < xv.channels; ++ch) {
    auto o = out.cch(ch);
    for (std::size_t i = 0; i < n; ++i) o[i] *= std::polar(1.0, sign * a * power[i]);
  }
  return x.tape().record(
      "kerr_rotation", std::move(out), {x, scale},
      [x, a, sign, kappa, power = std::move(power)](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
        const ad::Tensor& xv = x.value();
        const std::size_t n = power.size();
        // q[n] = dL/dphi[n], summed over channels sharing the rotation.
        std::vector<double> q(n, 0.0);
        for (std::size_t ch = 0; ch < xv.channels; ++ch) {
          auto in = xv.cch(ch);
          auto gy = g.cch(ch);
          for (std::size_t i = 0; i < n; ++i) {
            const cplx y = in[i] * std::polar(1.0, sign * a * power[i]);
            q[i] += sign * (std::conj(gy[i]) * cplx(0.0, 1.0) * y).real();
          }
        }
        if (gi[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += q[i] * power[i];
          gi[1]->data[0] += acc;
        }
        if (gi[0]) {
          for (std::size_t ch = 0; ch < xv.channels; ++ch) {
            auto in = xv.cch(ch);
            auto gy = g.cch(ch);
            auto gx = gi[0]->cch(ch);
            for (std::size_t i = 0; i < n; ++i)
              gx[i] += gy[i] * std::polar(1.0, -sign * a * power[i]) + 2.0 * q[i] * a * kappa * in[i];
          }
        }
      });
}

ad::Var dbp_forward_op(ad::Var rx, const DbpModel& architecture, const ParamVars& vars) {
  ad::Var u = rx;
  for (std::size_t k = 0; k < architecture.steps.size(); ++k) {
    u = fir_folded_op(u, vars.get(dbp_taps_name(k)), architecture.steps[k].filter.length());
    u = kerr_rotation_op(u, vars.get(dbp_nl_name(k)), kDbpRotationSign);
  }
  return u;
}

}  // namespace ldbp
