#include "ldbp/subband.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "ldbp/dbp.hpp"
#include "ldbp/errors.hpp"
#include "ldbp/fft.hpp"

namespace ldbp {

namespace {

constexpr double kPs2ToS2 = 1e-24;

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

// Bin bookkeeping of the bank for an Np-point frame.
struct Geometry {
  std::size_t s = 0;
  std::size_t np = 0;
  std::size_t nsub = 0;
  std::vector<long> center_bin;
  std::vector<double> response;  ///< prototype DFT, zero phase, normalized to 1 at DC

  std::size_t full_bin(std::size_t band, long m) const {
    const long n = static_cast<long>(np);
    return static_cast<std::size_t>(((center_bin[band] + m) % n + n) % n);
  }
  double proto(long m) const {
    const long n = static_cast<long>(np);
    return response[static_cast<std::size_t>((m % n + n) % n)];
  }
  // Subband bin index (FFT order) of signed offset m.
  std::size_t sub_bin(long m) const {
    const long n = static_cast<long>(nsub);
    return static_cast<std::size_t>((m % n + n) % n);
  }
  long m_lo() const { return -static_cast<long>(nsub / 2); }
  long m_hi() const { return static_cast<long>(nsub / 2); }
};

Geometry geometry(const FilterBankConfig& cfg, std::size_t np) {
  Geometry g;
  g.s = static_cast<std::size_t>(cfg.n_subbands);
  g.np = np;
  g.nsub = static_cast<std::size_t>(cfg.oversampling) * np / g.s;
  if (cfg.prototype.size() > np) throw ArgumentError("filter bank: frame shorter than the prototype");
  std::vector<cplx> p(np);
  const long c = static_cast<long>(cfg.prototype.size() - 1) / 2;
  for (std::size_t t = 0; t < cfg.prototype.size(); ++t) {
    const long idx = static_cast<long>(t) - c;
    p[static_cast<std::size_t>((idx % static_cast<long>(np) + static_cast<long>(np)) % static_cast<long>(np))] +=
        cfg.prototype[t];
  }
  fft_inplace(p);
  const double dc = p[0].real();
  g.response.resize(np);
  for (std::size_t k = 0; k < np; ++k) g.response[k] = p[k].real() / dc;
  for (std::size_t i = 0; i < g.s; ++i) {
    // (i - (S-1)/2) * Np / S, exact because Np is a multiple of 2S.
    const long twice = 2 * static_cast<long>(i) - static_cast<long>(g.s) + 1;
    g.center_bin.push_back(twice * static_cast<long>(np) / (2 * static_cast<long>(g.s)));
  }
  return g;
}

// bands[i*npol+p] (subband time domain) -> full-band time domain per pol.
std::vector<std::vector<cplx>> synthesize(const Geometry& g, const std::vector<std::vector<cplx>>& bands, std::size_t npol) {
  std::vector<std::vector<cplx>> out(npol, std::vector<cplx>(g.np));
  const double gain = static_cast<double>(g.np) / static_cast<double>(g.nsub);
  for (std::size_t p = 0; p < npol; ++p) {
    auto& x = out[p];
    for (std::size_t i = 0; i < g.s; ++i) {
      std::vector<cplx> u = bands[i * npol + p];
      fft_inplace(u);
      for (long m = g.m_lo(); m < g.m_hi(); ++m) x[g.full_bin(i, m)] += g.proto(m) * gain * u[g.sub_bin(m)];
    }
    ifft_inplace(x);
  }
  return out;
}

// Adjoint of synthesize.
std::vector<std::vector<cplx>> synthesize_adjoint(const Geometry& g, const std::vector<std::vector<cplx>>& grad_full,
                                                  std::size_t npol) {
  std::vector<std::vector<cplx>> out(g.s * npol);
  const double gain = static_cast<double>(g.np) / static_cast<double>(g.nsub);
  for (std::size_t p = 0; p < npol; ++p) {
    std::vector<cplx> gx = grad_full[p];
    fft_inplace(gx);
    for (auto& v : gx) v /= static_cast<double>(g.np);
    for (std::size_t i = 0; i < g.s; ++i) {
      std::vector<cplx> v(g.nsub);
      for (long m = g.m_lo(); m < g.m_hi(); ++m) v[g.sub_bin(m)] = g.proto(m) * gain * gx[g.full_bin(i, m)];
      ifft_unnormalized_inplace(v);
      out[i * npol + p] = std::move(v);
    }
  }
  return out;
}

std::vector<std::vector<cplx>> frame_channels(const SubbandFrame& f) {
  std::vector<std::vector<cplx>> out;
  for (const auto& b : f.bands)
    for (const auto& p : b.pols()) out.push_back(p);
  return out;
}

void check_frame(const SubbandFrame& frame, const FilterBankConfig& cfg) {
  if (frame.n_subbands() != static_cast<std::size_t>(cfg.n_subbands))
    throw ConfigError("merge: frame subband count does not match the filter bank");
  if (frame.padded_samples == 0 || frame.padded_samples % (2 * frame.n_subbands()) != 0 ||
      frame.band_length() != static_cast<std::size_t>(cfg.oversampling) * frame.padded_samples / frame.n_subbands())
    throw ConfigError("merge: frame length does not match the filter bank");
}

}  // namespace

FilterBankConfig FilterBankConfig::rrc(int n_subbands, double rolloff, int span_subband_symbols) {
  FilterBankConfig cfg;
  cfg.n_subbands = n_subbands;
  cfg.prototype = rrc_taps(rolloff, span_subband_symbols, n_subbands);
  cfg.validate();
  return cfg;
}

void FilterBankConfig::validate() const {
  if (n_subbands < 2) throw ConfigError("filter bank: at least 2 subbands required");
  if (oversampling < 1 || oversampling > n_subbands) throw ConfigError("filter bank: oversampling must be in [1, S]");
  if (prototype.empty() || prototype.size() % 2 == 0) throw ConfigError("filter bank: prototype length must be odd");
  for (std::size_t k = 0; k < prototype.size() / 2; ++k)
    if (prototype[k] != prototype[prototype.size() - 1 - k]) throw ConfigError("filter bank: prototype must be symmetric");
  if (!(guard_fraction >= 0.0 && guard_fraction < 0.5)) throw ConfigError("filter bank: guard fraction in [0, 0.5)");
}

SubbandFrame split(const ComplexSignal& sig, const FilterBankConfig& cfg) {
  cfg.validate();
  const std::size_t s = static_cast<std::size_t>(cfg.n_subbands);
  const std::size_t np = round_up(sig.size(), 2 * s);
  const Geometry g = geometry(cfg, np);
  SubbandFrame f;
  f.input_sample_rate = sig.grid().sample_rate();
  f.input_samples = sig.size();
  f.input_sps = sig.grid().samples_per_symbol();
  f.padded_samples = np;
  f.n_pols = sig.n_pols();
  const double fs_sub = f.input_sample_rate * cfg.oversampling / static_cast<double>(s);
  const SamplingGrid grid(fs_sub, g.nsub, 1);

  std::vector<std::vector<cplx>> spectra;
  for (const auto& p : sig.pols()) {
    std::vector<cplx> x(np);
    std::copy(p.begin(), p.end(), x.begin());
    fft_inplace(x);
    spectra.push_back(std::move(x));
  }
  for (std::size_t i = 0; i < s; ++i) {
    std::vector<std::vector<cplx>> pols;
    for (const auto& x : spectra) {
      std::vector<cplx> u(g.nsub);
      for (long m = g.m_lo(); m < g.m_hi(); ++m) u[g.sub_bin(m)] = g.proto(m) * x[g.full_bin(i, m)];
      ifft_unnormalized_inplace(u);
      for (auto& v : u) v /= static_cast<double>(np);
      pols.push_back(std::move(u));
    }
    f.bands.emplace_back(grid, std::move(pols));
    f.center_hz.push_back(static_cast<double>(g.center_bin[i]) * f.input_sample_rate / static_cast<double>(np));
  }
  return f;
}

ComplexSignal merge(const SubbandFrame& frame, const FilterBankConfig& cfg) {
  cfg.validate();
  check_frame(frame, cfg);
  const Geometry g = geometry(cfg, frame.padded_samples);
  auto full = synthesize(g, frame_channels(frame), frame.n_pols);
  for (auto& p : full) p.resize(frame.input_samples);
  return ComplexSignal(SamplingGrid(frame.input_sample_rate, frame.input_samples, frame.input_sps), std::move(full));
}

// ---- tensors ---------------------------------------------------------------

MimoIntensityTensor MimoIntensityTensor::zeros(std::size_t s, std::size_t taps) {
  MimoIntensityTensor t;
  t.n_subbands = s;
  t.taps = taps;
  t.coeffs.assign(s * s * taps, 0.0);
  t.validate();
  return t;
}

MimoIntensityTensor MimoIntensityTensor::diagonal(std::size_t s, std::size_t taps, double g) {
  MimoIntensityTensor t = zeros(s, taps);
  for (std::size_t i = 0; i < s; ++i) t.at(i, i, t.center()) = g;
  return t;
}

void MimoIntensityTensor::validate() const {
  if (n_subbands < 1) throw ArgumentError("MimoIntensityTensor: at least one subband");
  if (taps % 2 == 0) throw ArgumentError("MimoIntensityTensor: tap count must be odd");
  if (coeffs.size() != n_subbands * n_subbands * taps) throw ArgumentError("MimoIntensityTensor: coefficient count mismatch");
}

std::size_t TensorCascade::composed_length() const {
  std::size_t l = 1;
  for (const auto& s : stages) l += s.taps - 1;
  return l;
}

void TensorCascade::validate() const {
  if (stages.empty()) throw ArgumentError("TensorCascade: at least one stage");
  for (const auto& s : stages) {
    s.validate();
    if (s.n_subbands != stages[0].n_subbands) throw ArgumentError("TensorCascade: stage shape chain mismatch");
  }
}

MimoIntensityTensor TensorCascade::composed() const {
  validate();
  const std::size_t s = stages[0].n_subbands;
  const std::size_t l = composed_length();
  const std::size_t c = (l - 1) / 2;
  const std::size_t n = 2 * l + 1;
  const std::size_t pos = l;
  MimoIntensityTensor out = MimoIntensityTensor::zeros(s, l);
  for (std::size_t j = 0; j < s; ++j) {
    std::vector<std::vector<double>> z(s, std::vector<double>(n, 0.0));
    z[j][pos] = 1.0;
    for (const auto& st : stages) z = mimo_filter(z, st);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k = 0; k < l; ++k) out.at(i, j, k) = z[i][pos + k - c];
  }
  return out;
}

SparsityReport sparsity_report(const TensorCascade& cascade) {
  SparsityReport r;
  for (const auto& s : cascade.stages)
    for (double v : s.coeffs) {
      ++r.total;
      if (v == 0.0) ++r.zeros;
    }
  r.fraction = r.total == 0 ? 0.0 : static_cast<double>(r.zeros) / static_cast<double>(r.total);
  return r;
}

std::vector<std::vector<double>> band_intensities(const SubbandFrame& frame) {
  const double kappa = frame.n_pols == 2 ? kManakov : 1.0;
  std::vector<std::vector<double>> out;
  for (const auto& b : frame.bands) {
    std::vector<double> p(b.size(), 0.0);
    for (const auto& pol : b.pols())
      for (std::size_t n = 0; n < p.size(); ++n) p[n] += kappa * std::norm(pol[n]);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::vector<double>> mimo_filter(const std::vector<std::vector<double>>& in, const MimoIntensityTensor& t) {
  t.validate();
  if (in.size() != t.n_subbands) throw ArgumentError("mimo_filter: subband count mismatch");
  const long n = in.empty() ? 0 : static_cast<long>(in[0].size());
  const long l = static_cast<long>(t.taps);
  const long c = (l - 1) / 2;
  std::vector<std::vector<double>> out(t.n_subbands, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (std::size_t i = 0; i < t.n_subbands; ++i)
    for (std::size_t j = 0; j < t.n_subbands; ++j)
      for (long k = 0; k < l; ++k) {
        const double a = t.at(i, j, static_cast<std::size_t>(k));
        if (a == 0.0) continue;
        const long lo = std::max(0L, k - c);
        const long hi = std::min(n, n + k - c);
        for (long m = lo; m < hi; ++m)
          out[i][static_cast<std::size_t>(m)] += a * in[j][static_cast<std::size_t>(m - k + c)];
      }
  return out;
}

std::vector<std::vector<double>> coupled_phase(const SubbandFrame& frame, const MimoIntensityTensor& tensor) {
  if (tensor.n_subbands != frame.n_subbands()) throw ArgumentError("coupled_phase: subband count mismatch");
  return mimo_filter(band_intensities(frame), tensor);
}

std::vector<std::vector<double>> cascade_phase(const SubbandFrame& frame, const TensorCascade& cascade) {
  cascade.validate();
  if (cascade.stages[0].n_subbands != frame.n_subbands()) throw ArgumentError("cascade_phase: subband count mismatch");
  auto z = band_intensities(frame);
  for (const auto& st : cascade.stages) z = mimo_filter(z, st);
  return z;
}

void SubbandDbpModel::validate(std::size_t n_subbands) const {
  if (steps.empty()) throw ArgumentError("SubbandDbpModel: at least one step");
  for (const auto& s : steps) {
    if (s.filters.size() != n_subbands) throw ArgumentError("SubbandDbpModel: one filter per subband required");
    for (const auto& f : s.filters)
      if (f.empty() || f.size() % 2 == 0) throw ArgumentError("SubbandDbpModel: filter lengths must be odd");
    s.coupling.validate();
    if (s.coupling.stages[0].n_subbands != n_subbands) throw ArgumentError("SubbandDbpModel: coupling size mismatch");
  }
}

SubbandFrame subband_dbp_forward(const SubbandFrame& frame, const SubbandDbpModel& model) {
  model.validate(frame.n_subbands());
  SubbandFrame f = frame;
  for (const auto& step : model.steps) {
    for (std::size_t i = 0; i < f.n_subbands(); ++i) {
      std::vector<std::vector<cplx>> pols;
      for (const auto& p : f.bands[i].pols()) pols.push_back(fir_apply_direct(p, step.filters[i]));
      f.bands[i] = ComplexSignal(f.bands[i].grid(), std::move(pols));
    }
    const auto phi = cascade_phase(f, step.coupling);
    for (std::size_t i = 0; i < f.n_subbands(); ++i) {
      auto pols = f.bands[i].pols();
      for (auto& p : pols)
        for (std::size_t n = 0; n < p.size(); ++n) p[n] *= std::polar(1.0, kDbpRotationSign * phi[i][n]);
      f.bands[i] = ComplexSignal(f.bands[i].grid(), std::move(pols));
    }
  }
  return f;
}

std::vector<cplx> fit_band_inverse_cd(double beta2_ps2_per_km, double z_km, double center_hz, double band_half_width_hz,
                                      std::size_t taps, double sample_rate) {
  if (taps == 0 || taps % 2 == 0) throw ArgumentError("fit_band_inverse_cd: tap count must be odd");
  if (!(band_half_width_hz > 0.0) || band_half_width_hz > sample_rate / 2.0)
    throw ArgumentError("fit_band_inverse_cd: band half-width must lie in (0, fs/2]");
  const std::size_t grid = std::max<std::size_t>(2048, 64 * taps);
  const long c = static_cast<long>(taps - 1) / 2;
  Eigen::MatrixXcd a(static_cast<long>(grid), static_cast<long>(taps));
  Eigen::VectorXcd d(static_cast<long>(grid));
  const double b = beta2_ps2_per_km * kPs2ToS2 * z_km / 2.0;
  const double wc = 2.0 * std::numbers::pi * center_hz;
  for (std::size_t r = 0; r < grid; ++r) {
    const double f = band_half_width_hz * (-1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(grid));
    const double w = 2.0 * std::numbers::pi * f;
    for (long k = 0; k < static_cast<long>(taps); ++k)
      a(static_cast<long>(r), k) = std::polar(1.0, -w * static_cast<double>(k - c) / sample_rate);
    d(static_cast<long>(r)) = std::polar(1.0, b * (wc + w) * (wc + w));
  }
  const Eigen::VectorXcd h = a.colPivHouseholderQr().solve(d);
  return {h.data(), h.data() + h.size()};
}

SubbandDbpModel init_subband_model(const FiberParams& fiber, int n_steps, const FilterBankConfig& bank,
                                   double input_sample_rate, const SubbandInitOptions& opts) {
  fiber.validate();
  bank.validate();
  if (n_steps < 1) throw ArgumentError("init_subband_model: n_steps must be >= 1");
  if (opts.stage_taps.empty()) throw ArgumentError("init_subband_model: at least one cascade stage");
  const std::size_t s = static_cast<std::size_t>(bank.n_subbands);
  const double fs_sub = input_sample_rate * bank.oversampling / static_cast<double>(s);
  const double half_width = std::min((1.0 + opts.fit_rolloff) * input_sample_rate / (2.0 * static_cast<double>(s)), fs_sub / 2.0);
  const double h = fiber.total_length_km() / n_steps;
  const double alpha = fiber.alpha_per_km();
  SubbandDbpModel model;
  for (int k = 0; k < n_steps; ++k) {
    SubbandDbpStep step;
    for (std::size_t i = 0; i < s; ++i) {
      const double center = (static_cast<double>(i) - (static_cast<double>(s) - 1.0) / 2.0) * input_sample_rate / static_cast<double>(s);
      step.filters.push_back(fit_band_inverse_cd(fiber.beta2_ps2_per_km, h, center, half_width, opts.taps, fs_sub));
    }
    const double z0 = h * (n_steps - 1 - k);
    const double offset = z0 - fiber.span_length_km * std::floor(z0 / fiber.span_length_km + 1e-9);
    const double nl = fiber.gamma_per_w_per_km * std::exp(-alpha * offset) * effective_length_km(alpha, h);
    for (std::size_t st = 0; st < opts.stage_taps.size(); ++st) {
      MimoIntensityTensor t = MimoIntensityTensor::zeros(s, opts.stage_taps[st]);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          if (st == 0)
            t.at(i, j, t.center()) = nl * (i == j ? 1.0 : 2.0);
          else if (i == j)
            t.at(i, j, t.center()) = 1.0;
        }
      step.coupling.stages.push_back(std::move(t));
    }
    model.steps.push_back(std::move(step));
  }
  return model;
}

// ---- learnable form --------------------------------------------------------

std::string subband_taps_name(std::size_t step, std::size_t band) {
  return "subband.step" + std::to_string(step) + ".band" + std::to_string(band) + ".taps";
}

std::string subband_stage_name(std::size_t step, std::size_t stage) {
  return "subband.step" + std::to_string(step) + ".stage" + std::to_string(stage);
}

ParamSet subband_params(const SubbandDbpModel& model) {
  ParamSet ps;
  for (std::size_t k = 0; k < model.steps.size(); ++k) {
    const auto& st = model.steps[k];
    for (std::size_t i = 0; i < st.filters.size(); ++i) {
      Param p{subband_taps_name(k, i), groups::kCdTaps, {st.filters[i].size()}, true, {}};
      for (cplx v : st.filters[i]) {
        p.values.push_back(v.real());
        p.values.push_back(v.imag());
      }
      ps.add(std::move(p));
    }
    for (std::size_t s = 0; s < st.coupling.stages.size(); ++s) {
      const auto& t = st.coupling.stages[s];
      ps.add(Param{subband_stage_name(k, s), groups::kTensor, {t.n_subbands, t.n_subbands, t.taps}, false, t.coeffs});
    }
  }
  return ps;
}

SubbandDbpModel subband_from_params(const SubbandDbpModel& architecture, const ParamSet& params) {
  SubbandDbpModel out = architecture;
  for (std::size_t k = 0; k < out.steps.size(); ++k) {
    auto& st = out.steps[k];
    for (std::size_t i = 0; i < st.filters.size(); ++i) {
      const auto& v = params.at(subband_taps_name(k, i)).values;
      if (v.size() != 2 * st.filters[i].size()) throw ContractViolation("subband_from_params: tap count mismatch");
      for (std::size_t t = 0; t < st.filters[i].size(); ++t) st.filters[i][t] = {v[2 * t], v[2 * t + 1]};
    }
    for (std::size_t s = 0; s < st.coupling.stages.size(); ++s) {
      const auto& v = params.at(subband_stage_name(k, s)).values;
      if (v.size() != st.coupling.stages[s].coeffs.size()) throw ContractViolation("subband_from_params: tensor size mismatch");
      st.coupling.stages[s].coeffs = v;
    }
  }
  return out;
}

ad::Tensor frame_tensor(const SubbandFrame& frame) { return ad::Tensor::from_complex_channels(frame_channels(frame)); }

SubbandFrame frame_from_tensor(const ad::Tensor& t, const SubbandFrame& like) {
  if (!t.is_complex || t.channels != like.n_subbands() * like.n_pols || t.length() != like.band_length())
    throw ArgumentError("frame_from_tensor: shape mismatch");
  SubbandFrame f = like;
  for (std::size_t i = 0; i < like.n_subbands(); ++i) {
    std::vector<std::vector<cplx>> pols;
    for (std::size_t p = 0; p < like.n_pols; ++p) pols.push_back(t.complex_channel(i * like.n_pols + p));
    f.bands[i] = ComplexSignal(like.bands[i].grid(), std::move(pols));
  }
  return f;
}

ad::Var band_intensity_op(ad::Var x, std::size_t n_pols) {
  const ad::Tensor& xv = x.value();
  if (!xv.is_complex || n_pols == 0 || xv.channels % n_pols != 0) throw ArgumentError("band_intensity_op: bad layout");
  const std::size_t s = xv.channels / n_pols;
  const std::size_t n = xv.length();
  const double kappa = n_pols == 2 ? kManakov : 1.0;
  ad::Tensor out = ad::Tensor::real(s, n);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t p = 0; p < n_pols; ++p) {
      auto in = xv.cch(i * n_pols + p);
      auto o = out.rch(i);
      for (std::size_t k = 0; k < n; ++k) o[k] += kappa * std::norm(in[k]);
    }
  return x.tape().record("band_intensity", std::move(out), {x},
                         [x, n_pols, kappa](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           if (!gi[0]) return;
                           const ad::Tensor& xv = x.value();
                           for (std::size_t c = 0; c < xv.channels; ++c) {
                             auto in = xv.cch(c);
                             auto go = g.rch(c / n_pols);
                             auto gx = gi[0]->cch(c);
                             for (std::size_t k = 0; k < in.size(); ++k) gx[k] += 2.0 * kappa * go[k] * in[k];
                           }
                         });
}

ad::Var band_rotate_op(ad::Var x, ad::Var phi, std::size_t n_pols, double sign) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& pv = phi.value();
  if (!xv.is_complex || pv.is_complex || n_pols == 0 || xv.channels != pv.channels * n_pols || xv.length() != pv.length())
    throw ArgumentError("band_rotate_op: shape mismatch");
  ad::Tensor out = xv;
  for (std::size_t c = 0; c < xv.channels; ++c) {
    auto o = out.cch(c);
    auto p = pv.rch(c / n_pols);
    for (std::size_t k = 0; k < o.size(); ++k) o[k] *= std::polar(1.0, sign * p[k]);
  }
  return x.tape().record("band_rotate", std::move(out), {x, phi},
                         [x, phi, n_pols, sign](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           const ad::Tensor& xv = x.value();
                           const ad::Tensor& pv = phi.value();
                           for (std::size_t c = 0; c < xv.channels; ++c) {
                             auto gy = g.cch(c);
                             auto in = xv.cch(c);
                             auto p = pv.rch(c / n_pols);
                             for (std::size_t k = 0; k < in.size(); ++k) {
                               const cplx r = std::polar(1.0, sign * p[k]);
                               if (gi[0]) gi[0]->cch(c)[k] += gy[k] * std::conj(r);
                               if (gi[1])
                                 gi[1]->rch(c / n_pols)[k] += sign * (std::conj(gy[k]) * cplx(0.0, 1.0) * in[k] * r).real();
                             }
                           }
                         });
}

ad::Var cascade_phase_op(ad::Var intensities, const std::vector<ad::Var>& stages, const TensorCascade& shape) {
  if (stages.size() != shape.stages.size()) throw ArgumentError("cascade_phase_op: stage count mismatch");
  ad::Var z = intensities;
  for (std::size_t s = 0; s < stages.size(); ++s) z = ad::mimo_conv(z, stages[s], shape.stages[s].n_subbands, shape.stages[s].taps);
  return z;
}

ad::Var subband_dbp_forward_op(ad::Var x, std::size_t n_pols, const SubbandDbpModel& architecture, const ParamVars& vars) {
  const std::size_t s = x.value().channels / n_pols;
  architecture.validate(s);
  ad::Var u = x;
  for (std::size_t k = 0; k < architecture.steps.size(); ++k) {
    std::vector<ad::Var> parts;
    for (std::size_t i = 0; i < s; ++i) {
      ad::Var taps = vars.get(subband_taps_name(k, i));
      for (std::size_t p = 0; p < n_pols; ++p) parts.push_back(fir_general_op(ad::channel(u, i * n_pols + p), taps));
    }
    u = ad::stack(parts);
    std::vector<ad::Var> stage_vars;
    for (std::size_t st = 0; st < architecture.steps[k].coupling.stages.size(); ++st)
      stage_vars.push_back(vars.get(subband_stage_name(k, st)));
    ad::Var phi = cascade_phase_op(band_intensity_op(u, n_pols), stage_vars, architecture.steps[k].coupling);
    u = band_rotate_op(u, phi, n_pols, kDbpRotationSign);
  }
  return u;
}

ad::Var merge_op(ad::Var x, const SubbandFrame& like, const FilterBankConfig& cfg) {
  cfg.validate();
  check_frame(like, cfg);
  const ad::Tensor& xv = x.value();
  const std::size_t npol = like.n_pols;
  if (!xv.is_complex || xv.channels != like.n_subbands() * npol || xv.length() != like.band_length())
    throw ArgumentError("merge_op: input does not match the frame layout");
  auto g = std::make_shared<Geometry>(geometry(cfg, like.padded_samples));
  std::vector<std::vector<cplx>> bands;
  for (std::size_t c = 0; c < xv.channels; ++c) bands.push_back(xv.complex_channel(c));
  ad::Tensor out = ad::Tensor::from_complex_channels(synthesize(*g, bands, npol));
  return x.tape().record("merge", std::move(out), {x}, [g, npol](const ad::Tensor& grad, std::span<ad::Tensor* const> gi) {
    if (!gi[0]) return;
    std::vector<std::vector<cplx>> gf;
    for (std::size_t p = 0; p < npol; ++p) gf.push_back(grad.complex_channel(p));
    const auto gb = synthesize_adjoint(*g, gf, npol);
    for (std::size_t c = 0; c < gb.size(); ++c) {
      auto dst = gi[0]->cch(c);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gb[c][k];
    }
  });
}

}  // namespace ldbp
