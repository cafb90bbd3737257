#include "ldbp/pmd_comp.hpp"

#include <cmath>
#include <numbers>

#include "ldbp/errors.hpp"

namespace ldbp {

namespace {

constexpr double kPsToS = 1e-12;

Jones rotation_from_ab(cplx a, cplx b) {
  Jones u;
  u << a, -std::conj(b), b, std::conj(a);
  return u;
}

// y[n] = sum_k h[k] x[n + c - k], zero padding, c = (L-1)/2.
std::vector<cplx> conv_same(std::span<const cplx> x, std::span<const double> h) {
  const long n = static_cast<long>(x.size());
  const long l = static_cast<long>(h.size());
  const long c = (l - 1) / 2;
  std::vector<cplx> y(x.size());
  for (long i = 0; i < n; ++i) {
    cplx acc{};
    const long lo = std::max(0L, i + c - (n - 1));
    const long hi = std::min(l - 1, i + c);
    for (long k = lo; k <= hi; ++k) acc += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(i + c - k)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

void check_stage(const PmdStage& s) {
  if (s.fd.taps.empty() || s.fd.taps.size() % 2 == 0) throw ArgumentError("PmdStage: FD filter length must be odd");
}

}  // namespace

RotationParams RotationParams::from_array(std::span<const double> v) {
  if (v.size() != 3) throw ArgumentError("RotationParams: three angles required");
  return {v[0], v[1], v[2]};
}

Jones rotation_matrix(const RotationParams& p) {
  return rotation_from_ab(std::polar(std::cos(p.theta), p.phi1), std::polar(std::sin(p.theta), p.phi2));
}

std::array<Jones, 3> rotation_jacobian(const RotationParams& p) {
  const cplx e1 = std::polar(1.0, p.phi1);
  const cplx e2 = std::polar(1.0, p.phi2);
  const cplx a = e1 * std::cos(p.theta);
  const cplx b = e2 * std::sin(p.theta);
  const cplx j(0.0, 1.0);
  return {rotation_from_ab(-e1 * std::sin(p.theta), e2 * std::cos(p.theta)), rotation_from_ab(j * a, 0.0),
          rotation_from_ab(0.0, j * b)};
}

RotationParams rotation_from_matrix(const Jones& u) {
  check_special_unitary(u, 1e-9);
  const cplx a = u(0, 0);
  const cplx b = u(1, 0);
  RotationParams p;
  p.theta = std::atan2(std::abs(b), std::abs(a));
  p.phi1 = std::abs(a) > 0.0 ? std::arg(a) : 0.0;
  p.phi2 = std::abs(b) > 0.0 ? std::arg(b) : 0.0;
  return p;
}

FdFilter fd_design(double delta, int length) {
  if (length < 1) throw ArgumentError("fd_design: length must be >= 1");
  const double half = (length - 1) / 2.0;
  if (std::abs(delta) > half) throw RangeError("fd_design: |delta| exceeds (L-1)/2");
  const int c = (length - 1) / 2;
  const double d = c + delta;
  FdFilter f;
  f.delta = delta;
  f.taps.resize(static_cast<std::size_t>(length));
  for (int k = 0; k < length; ++k) {
    double v = 1.0;
    for (int m = 0; m < length; ++m)
      if (m != k) v *= (d - m) / static_cast<double>(k - m);
    f.taps[static_cast<std::size_t>(k)] = v;
  }
  return f;
}

double group_delay(std::span<const double> taps, double nu) {
  // tau = Re( sum k h[k] e^{-jwk} / sum h[k] e^{-jwk} )
  const double w = 2.0 * std::numbers::pi * nu;
  cplx num{};
  cplx den{};
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const cplx e = std::polar(1.0, -w * static_cast<double>(k));
    num += static_cast<double>(k) * taps[k] * e;
    den += taps[k] * e;
  }
  return (num / den).real();
}

int default_stage_count(std::optional<int> link_sections, double total_dgd_samples) {
  if (link_sections) {
    if (*link_sections < 1) throw ArgumentError("default_stage_count: section count must be >= 1");
    return *link_sections;
  }
  return std::max(1, static_cast<int>(std::ceil(std::abs(total_dgd_samples) / 0.25 - 1e-12)));
}

ComplexSignal pmd_stage_apply(const ComplexSignal& sig, const PmdStage& stage) {
  if (!sig.dual_pol()) throw ArgumentError("pmd_stage_apply: dual-polarization input required");
  check_stage(stage);
  const Jones u = rotation_matrix(stage.rotation);
  std::vector<double> rev(stage.fd.taps.rbegin(), stage.fd.taps.rend());
  auto x = std::vector<cplx>(sig.pol_x().begin(), sig.pol_x().end());
  auto y = std::vector<cplx>(sig.pol_y().begin(), sig.pol_y().end());
  auto rotate = [&] {
    for (std::size_t n = 0; n < x.size(); ++n) {
      const cplx a = x[n];
      const cplx b = y[n];
      x[n] = u(0, 0) * a + u(0, 1) * b;
      y[n] = u(1, 0) * a + u(1, 1) * b;
    }
  };
  if (stage.order == StageOrder::rotation_then_fd) rotate();
  x = conv_same(x, stage.fd.taps);
  y = conv_same(y, rev);
  if (stage.order == StageOrder::fd_then_rotation) rotate();
  return ComplexSignal(sig.grid(), std::move(x), std::move(y));
}

ComplexSignal pmd_comp_forward(const ComplexSignal& sig, const MultiStepPmdModel& model) {
  ComplexSignal out = sig;
  for (const auto& s : model.stages) out = pmd_stage_apply(out, s);
  return out;
}

std::size_t pmd_guard_samples(const MultiStepPmdModel& model) {
  std::size_t g = 0;
  for (const auto& s : model.stages) g += (s.fd.taps.size() - 1) / 2;
  return g;
}

MultiStepPmdModel mirror_link(const PmdLink& link, double sample_rate, int fd_length) {
  MultiStepPmdModel m;
  for (auto it = link.sections.rbegin(); it != link.sections.rend(); ++it) {
    PmdStage s;
    s.order = StageOrder::rotation_then_fd;
    s.rotation = rotation_from_matrix(it->rotation.adjoint());
    // The section delays x by tau/2 and advances y by tau/2; undo both.
    s.fd = fd_design(-it->dgd_tau_ps * kPsToS * sample_rate / 2.0, fd_length);
    m.stages.push_back(std::move(s));
  }
  return m;
}

MimoFirBaseline MimoFirBaseline::identity(std::size_t taps) {
  MimoFirBaseline b;
  b.taps = taps;
  b.w.assign(16 * taps, 0.0);
  b.validate();
  for (std::size_t i = 0; i < 4; ++i) b.at(i, i, (taps - 1) / 2) = 1.0;
  return b;
}

void MimoFirBaseline::validate() const {
  if (taps % 2 == 0) throw ArgumentError("MimoFirBaseline: tap count must be odd");
  if (w.size() != 16 * taps) throw ArgumentError("MimoFirBaseline: tensor size must be 4 x 4 x L");
}

ComplexSignal mimo_fir_apply(const ComplexSignal& sig, const MimoFirBaseline& w) {
  if (!sig.dual_pol()) throw ArgumentError("mimo_fir_apply: dual-polarization input required");
  w.validate();
  const std::size_t n = sig.size();
  std::array<std::vector<double>, 4> in;
  for (std::size_t p = 0; p < 2; ++p) {
    in[2 * p].resize(n);
    in[2 * p + 1].resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      in[2 * p][k] = sig.pol(p)[k].real();
      in[2 * p + 1][k] = sig.pol(p)[k].imag();
    }
  }
  const long nl = static_cast<long>(n);
  const long l = static_cast<long>(w.taps);
  const long c = (l - 1) / 2;
  std::array<std::vector<double>, 4> out;
  for (std::size_t o = 0; o < 4; ++o) {
    out[o].assign(n, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
      for (long k = 0; k < l; ++k) {
        const double a = w.at(o, i, static_cast<std::size_t>(k));
        const long lo = std::max(0L, k - c);
        const long hi = std::min(nl, nl + k - c);
        for (long m = lo; m < hi; ++m) out[o][static_cast<std::size_t>(m)] += a * in[i][static_cast<std::size_t>(m - k + c)];
      }
  }
  std::vector<cplx> x(n), y(n);
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = {out[0][k], out[1][k]};
    y[k] = {out[2][k], out[3][k]};
  }
  return ComplexSignal(sig.grid(), std::move(x), std::move(y));
}

// ---- learnable form --------------------------------------------------------

std::string pmd_rotation_name(std::size_t stage) { return "pmd.stage" + std::to_string(stage) + ".rotation"; }
std::string pmd_fd_name(std::size_t stage) { return "pmd.stage" + std::to_string(stage) + ".fd"; }

ParamSet pmd_params(const MultiStepPmdModel& model) {
  ParamSet ps;
  for (std::size_t k = 0; k < model.stages.size(); ++k) {
    const auto& s = model.stages[k];
    check_stage(s);
    const auto a = s.rotation.as_array();
    ps.add(Param{pmd_rotation_name(k), groups::kRotation, {3}, false, {a.begin(), a.end()}});
    ps.add(Param{pmd_fd_name(k), groups::kFdTaps, {s.fd.taps.size()}, false, s.fd.taps});
  }
  return ps;
}

MultiStepPmdModel pmd_from_params(const MultiStepPmdModel& architecture, const ParamSet& params) {
  MultiStepPmdModel m = architecture;
  for (std::size_t k = 0; k < m.stages.size(); ++k) {
    m.stages[k].rotation = RotationParams::from_array(params.at(pmd_rotation_name(k)).values);
    const auto& taps = params.at(pmd_fd_name(k)).values;
    if (taps.size() != m.stages[k].fd.taps.size()) throw ContractViolation("pmd_from_params: FD length mismatch");
    m.stages[k].fd.taps = taps;
  }
  return m;
}

ParamSet mimo_params(const MimoFirBaseline& w) {
  w.validate();
  ParamSet ps;
  ps.add(Param{kMimoWeightsName, groups::kMimo, {4, 4, w.taps}, false, w.w});
  return ps;
}

MimoFirBaseline mimo_from_params(const ParamSet& params) {
  const Param& p = params.at(kMimoWeightsName);
  if (p.shape.size() != 3 || p.shape[0] != 4 || p.shape[1] != 4) throw ContractViolation("mimo_from_params: bad shape");
  MimoFirBaseline b;
  b.taps = p.shape[2];
  b.w = p.values;
  b.validate();
  return b;
}

ad::Var rotation_op(ad::Var x, ad::Var angles) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& av = angles.value();
  if (!xv.is_complex || xv.channels != 2) throw ArgumentError("rotation_op: two complex channels required");
  if (av.is_complex || av.data.size() != 3) throw ArgumentError("rotation_op: three real angles required");
  const RotationParams p = RotationParams::from_array(av.data);
  const Jones u = rotation_matrix(p);
  ad::Tensor out = ad::Tensor::complex(2, xv.length());
  {
    auto x0 = xv.cch(0);
    auto x1 = xv.cch(1);
    auto y0 = out.cch(0);
    auto y1 = out.cch(1);
    for (std::size_t n = 0; n < x0.size(); ++n) {
      y0[n] = u(0, 0) * x0[n] + u(0, 1) * x1[n];
      y1[n] = u(1, 0) * x0[n] + u(1, 1) * x1[n];
    }
  }
  return x.tape().record("rotation", std::move(out), {x, angles},
                         [x, p, u](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           const ad::Tensor& xv = x.value();
                           auto x0 = xv.cch(0);
                           auto x1 = xv.cch(1);
                           auto g0 = g.cch(0);
                           auto g1 = g.cch(1);
                           if (gi[0]) {
                             // G_x = U^H G_y
                             auto d0 = gi[0]->cch(0);
                             auto d1 = gi[0]->cch(1);
                             for (std::size_t n = 0; n < x0.size(); ++n) {
                               d0[n] += std::conj(u(0, 0)) * g0[n] + std::conj(u(1, 0)) * g1[n];
                               d1[n] += std::conj(u(0, 1)) * g0[n] + std::conj(u(1, 1)) * g1[n];
                             }
                           }
                           if (gi[1]) {
                             const auto jac = rotation_jacobian(p);
                             for (std::size_t q = 0; q < 3; ++q) {
                               const Jones& d = jac[q];
                               double acc = 0.0;
                               for (std::size_t n = 0; n < x0.size(); ++n) {
                                 const cplx dy0 = d(0, 0) * x0[n] + d(0, 1) * x1[n];
                                 const cplx dy1 = d(1, 0) * x0[n] + d(1, 1) * x1[n];
                                 acc += (std::conj(g0[n]) * dy0 + std::conj(g1[n]) * dy1).real();
                               }
                               gi[1]->data[q] += acc;
                             }
                           }
                         });
}

ad::Var fd_pair_op(ad::Var x, ad::Var taps) {
  const ad::Tensor& xv = x.value();
  const ad::Tensor& tv = taps.value();
  if (!xv.is_complex || xv.channels != 2) throw ArgumentError("fd_pair_op: two complex channels required");
  if (tv.is_complex || tv.channels != 1 || tv.data.size() % 2 == 0) throw ArgumentError("fd_pair_op: odd real tap vector required");
  const std::vector<double> h = tv.data;
  const std::vector<double> rev(h.rbegin(), h.rend());
  ad::Tensor out = ad::Tensor::complex(2, xv.length());
  {
    const auto y0 = conv_same(xv.cch(0), h);
    const auto y1 = conv_same(xv.cch(1), rev);
    std::copy(y0.begin(), y0.end(), out.cch(0).begin());
    std::copy(y1.begin(), y1.end(), out.cch(1).begin());
  }
  return x.tape().record("fd_pair", std::move(out), {x, taps}, [x, h](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
    const ad::Tensor& xv = x.value();
    const long n = static_cast<long>(xv.length());
    const long l = static_cast<long>(h.size());
    const long c = (l - 1) / 2;
    for (std::size_t ch = 0; ch < 2; ++ch) {
      auto in = xv.cch(ch);
      auto gy = g.cch(ch);
      for (long i = 0; i < n; ++i) {
        const long lo = std::max(0L, i + c - (n - 1));
        const long hi = std::min(l - 1, i + c);
        for (long k = lo; k <= hi; ++k) {
          const auto j = static_cast<std::size_t>(i + c - k);
          const auto hk = static_cast<std::size_t>(ch == 0 ? k : l - 1 - k);
          if (gi[0]) gi[0]->cch(ch)[j] += h[hk] * gy[static_cast<std::size_t>(i)];
          if (gi[1]) gi[1]->data[hk] += (std::conj(in[j]) * gy[static_cast<std::size_t>(i)]).real();
        }
      }
    }
  });
}

ad::Var pmd_comp_forward_op(ad::Var x, const MultiStepPmdModel& architecture, const ParamVars& vars) {
  ad::Var u = x;
  for (std::size_t k = 0; k < architecture.stages.size(); ++k) {
    ad::Var rot = vars.get(pmd_rotation_name(k));
    ad::Var fd = vars.get(pmd_fd_name(k));
    if (architecture.stages[k].order == StageOrder::rotation_then_fd) {
      u = fd_pair_op(rotation_op(u, rot), fd);
    } else {
      u = rotation_op(fd_pair_op(u, fd), rot);
    }
  }
  return u;
}

ad::Var mimo_fir_op(ad::Var x, ad::Var w, std::size_t taps) {
  return ad::real_to_complex(ad::mimo_conv(ad::complex_to_real(x), w, 4, taps));
}

// ---- adaptation ------------------------------------------------------------

TrainProblem adapt_problem(const EqualizerOp& equalizer, const BlockSource& blocks, const AdaptConfig& cfg) {
  if (cfg.sps < 1) throw ConfigError("adapt: sps must be >= 1");
  TrainProblem problem;
  problem.element_loss = [equalizer, blocks, cfg](ad::Tape& tape, const ParamVars& vars, long it, std::size_t el) {
    AdaptBlock blk = blocks(it, el);
    const std::size_t w = blk.target.length();
    ad::Var y = equalizer(tape.constant(std::move(blk.input)), vars);
    y = ad::window(ad::decimate(y, cfg.sps, 0), blk.guard_symbols, w);
    return cfg.mode == AdaptConfig::Mode::supervised ? mse_loss_op(y, blk.target) : cma_loss_op(y, cfg.modulus);
  };
  return problem;
}

AdaptResult adapt(const ParamSet& initial, const EqualizerOp& equalizer, const BlockSource& blocks, const AdaptConfig& cfg) {
  const TrainProblem problem = adapt_problem(equalizer, blocks, cfg);
  TrainConfig tc;
  tc.opt = cfg.opt;
  tc.threads = cfg.threads;
  TrainState state = initial_state(initial);
  train(problem, tc, state);
  return {state.params, state.history};
}

EqualizerOp pmd_equalizer(const MultiStepPmdModel& model) {
  return [model](ad::Var x, const ParamVars& vars) { return pmd_comp_forward_op(x, model, vars); };
}

EqualizerOp mimo_equalizer(std::size_t taps) {
  return [taps](ad::Var x, const ParamVars& vars) { return mimo_fir_op(x, vars.get(kMimoWeightsName), taps); };
}

AdaptResult adapt(const MultiStepPmdModel& model, const BlockSource& blocks, const AdaptConfig& cfg) {
  return adapt(pmd_params(model), pmd_equalizer(model), blocks, cfg);
}

AdaptResult adapt(const MimoFirBaseline& model, const BlockSource& blocks, const AdaptConfig& cfg) {
  return adapt(mimo_params(model), mimo_equalizer(model.taps), blocks, cfg);
}

}  // namespace ldbp
