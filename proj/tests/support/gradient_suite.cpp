#include <algorithm>
#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "ldbp/dbp.hpp"
#include "ldbp/pmd_comp.hpp"
#include "ldbp/subband.hpp"
#include "ldbp/training.hpp"

namespace ldbp::testing {

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

ad::Tensor param_tensor(const ParamSet& ps, std::size_t i) { return ps[i].as_tensor(); }

ParamVars vars_from(const ParamSet& ps, const std::vector<ad::Var>& leaves, std::size_t first) {
  ParamVars v;
  v.set = &ps;
  v.leaves.assign(leaves.begin() + static_cast<long>(first), leaves.end());
  v.used = v.leaves;
  return v;
}

using Case = std::function<double(Rng&)>;

struct Entry {
  std::string op;
  Case run;
};

std::vector<Entry> cases() {
  std::vector<Entry> out;

  out.push_back({"fir_apply (folded)", [](Rng& rng) {
                   const std::size_t k = 2 * pick(rng, 0, 4) + 1;
                   const auto x = random_complex(rng, pick(rng, 1, 2), pick(rng, 6, 20));
                   const auto half = random_complex(rng, 1, (k + 1) / 2);
                   return gradient_error(
                       [k](ad::Tape&, const std::vector<ad::Var>& v) { return fir_folded_op(v[0], v[1], k); }, {x, half}, rng);
                 }});
  out.push_back({"fir_apply (general taps)", [](Rng& rng) {
                   const std::size_t k = 2 * pick(rng, 0, 4) + 1;
                   const auto x = random_complex(rng, pick(rng, 1, 2), pick(rng, 6, 20));
                   const auto taps = random_complex(rng, 1, k);
                   return gradient_error([](ad::Tape&, const std::vector<ad::Var>& v) { return fir_general_op(v[0], v[1]); },
                                         {x, taps}, rng);
                 }});
  out.push_back({"kerr rotation", [](Rng& rng) {
                   const auto x = random_complex(rng, pick(rng, 1, 2), pick(rng, 4, 16));
                   const auto s = ad::Tensor::scalar(uniform(rng, 0.1, 1.5));
                   const double sign = pick(rng, 0, 1) ? 1.0 : -1.0;
                   return gradient_error(
                       [sign](ad::Tape&, const std::vector<ad::Var>& v) { return kerr_rotation_op(v[0], v[1], sign); }, {x, s},
                       rng);
                 }});
  out.push_back({"dbp forward (5/3/5 taps)", [](Rng& rng) {
                   DbpModel m;
                   for (std::size_t k : {5u, 3u, 5u}) {
                     auto h = random_complex(rng, 1, (k + 1) / 2, 0.6).complex_channel(0);
                     m.steps.push_back({FoldedFir(h, k), uniform(rng, 0.1, 1.0)});
                   }
                   const ParamSet ps = dbp_params(m);
                   std::vector<ad::Tensor> in{random_complex(rng, pick(rng, 1, 2), 16)};
                   for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(param_tensor(ps, i));
                   return gradient_error(
                       [&](ad::Tape&, const std::vector<ad::Var>& v) { return dbp_forward_op(v[0], m, vars_from(ps, v, 1)); },
                       in, rng);
                 }});
  out.push_back({"coupled_phase", [](Rng& rng) {
                   const std::size_t s = pick(rng, 1, 4), l = 2 * pick(rng, 0, 3) + 1;
                   TensorCascade c{{MimoIntensityTensor::zeros(s, l)}};
                   const auto p = random_real(rng, s, pick(rng, 6, 16));
                   const auto w = random_real(rng, 1, s * s * l);
                   return gradient_error(
                       [c](ad::Tape&, const std::vector<ad::Var>& v) { return cascade_phase_op(v[0], {v[1]}, c); }, {p, w}, rng);
                 }});
  out.push_back({"cascade_phase (3 stages)", [](Rng& rng) {
                   const std::size_t s = pick(rng, 1, 3);
                   TensorCascade c;
                   std::vector<ad::Tensor> in{random_real(rng, s, pick(rng, 8, 16))};
                   for (int k = 0; k < 3; ++k) {
                     const std::size_t l = 2 * pick(rng, 0, 2) + 1;
                     c.stages.push_back(MimoIntensityTensor::zeros(s, l));
                     in.push_back(random_real(rng, 1, s * s * l));
                   }
                   return gradient_error(
                       [c](ad::Tape&, const std::vector<ad::Var>& v) {
                         return cascade_phase_op(v[0], {v[1], v[2], v[3]}, c);
                       },
                       in, rng);
                 }});
  out.push_back({"band intensity", [](Rng& rng) {
                   const std::size_t np = pick(rng, 1, 2);
                   const auto x = random_complex(rng, np * pick(rng, 1, 3), pick(rng, 4, 12));
                   return gradient_error([np](ad::Tape&, const std::vector<ad::Var>& v) { return band_intensity_op(v[0], np); },
                                         {x}, rng);
                 }});
  out.push_back({"band rotation", [](Rng& rng) {
                   const std::size_t np = pick(rng, 1, 2), s = pick(rng, 1, 3), n = pick(rng, 4, 12);
                   const auto x = random_complex(rng, np * s, n);
                   const auto phi = random_real(rng, s, n, 3.0);
                   return gradient_error(
                       [np](ad::Tape&, const std::vector<ad::Var>& v) { return band_rotate_op(v[0], v[1], np, kDbpRotationSign); },
                       {x, phi}, rng);
                 }});
  out.push_back({"subband dbp forward", [](Rng& rng) {
                   const std::size_t s = pick(rng, 1, 3), np = pick(rng, 1, 2);
                   SubbandDbpModel m;
                   for (int k = 0; k < 2; ++k) {
                     SubbandDbpStep st;
                     for (std::size_t i = 0; i < s; ++i) st.filters.push_back(random_complex(rng, 1, 3, 0.7).complex_channel(0));
                     for (std::size_t l : {3u, 1u}) {
                       MimoIntensityTensor t = MimoIntensityTensor::zeros(s, l);
                       for (double& c : t.coeffs) c = uniform(rng, -0.5, 0.5);
                       st.coupling.stages.push_back(t);
                     }
                     m.steps.push_back(st);
                   }
                   const ParamSet ps = subband_params(m);
                   std::vector<ad::Tensor> in{random_complex(rng, s * np, 10)};
                   for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(param_tensor(ps, i));
                   return gradient_error(
                       [&](ad::Tape&, const std::vector<ad::Var>& v) {
                         return subband_dbp_forward_op(v[0], np, m, vars_from(ps, v, 1));
                       },
                       in, rng);
                 }});
  out.push_back({"filter bank synthesis", [](Rng& rng) {
                   const int s = static_cast<int>(pick(rng, 2, 3));
                   const FilterBankConfig cfg = FilterBankConfig::rrc(s, 0.2, 8);
                   const std::size_t np = pick(rng, 1, 2);
                   const std::size_t n = 4 * static_cast<std::size_t>(s) * pick(rng, 3, 5);
                   const auto sig = ComplexSignal::zeros(SamplingGrid(1.0, n, 1), np);
                   const SubbandFrame like = split(sig, cfg);
                   const auto x = random_complex(rng, like.n_subbands() * np, like.band_length());
                   return gradient_error([&](ad::Tape&, const std::vector<ad::Var>& v) { return merge_op(v[0], like, cfg); },
                                         {x}, rng);
                 }});
  out.push_back({"pmd rotation", [](Rng& rng) {
                   const auto x = random_complex(rng, 2, pick(rng, 3, 10));
                   const auto a = random_real(rng, 1, 3, 3.0);
                   return gradient_error([](ad::Tape&, const std::vector<ad::Var>& v) { return rotation_op(v[0], v[1]); }, {x, a},
                                         rng);
                 }});
  out.push_back({"pmd fractional-delay pair", [](Rng& rng) {
                   const auto x = random_complex(rng, 2, pick(rng, 6, 14));
                   const auto h = random_real(rng, 1, 2 * pick(rng, 0, 3) + 1);
                   return gradient_error([](ad::Tape&, const std::vector<ad::Var>& v) { return fd_pair_op(v[0], v[1]); }, {x, h},
                                         rng);
                 }});
  out.push_back({"pmd_stage_apply", [](Rng& rng) {
                   MultiStepPmdModel m;
                   const std::size_t n = pick(rng, 1, 3);
                   for (std::size_t k = 0; k < n; ++k) {
                     PmdStage st;
                     st.rotation = {uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3)};
                     st.fd = fd_design(uniform(rng, -0.5, 0.5), 5);
                     st.order = pick(rng, 0, 1) ? StageOrder::rotation_then_fd : StageOrder::fd_then_rotation;
                     m.stages.push_back(st);
                   }
                   const ParamSet ps = pmd_params(m);
                   std::vector<ad::Tensor> in{random_complex(rng, 2, 12)};
                   for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(param_tensor(ps, i));
                   return gradient_error(
                       [&](ad::Tape&, const std::vector<ad::Var>& v) { return pmd_comp_forward_op(v[0], m, vars_from(ps, v, 1)); },
                       in, rng);
                 }});
  out.push_back({"rotation_matrix", [](Rng& rng) {
                   const RotationParams p{uniform(rng, -4, 4), uniform(rng, -4, 4), uniform(rng, -4, 4)};
                   const auto jac = rotation_jacobian(p);
                   double diff = 0.0, ref = 0.0;
                   for (int a = 0; a < 3; ++a) {
                     auto lo = p.as_array(), hi = p.as_array();
                     const double h = 1e-6;
                     lo[static_cast<std::size_t>(a)] -= h;
                     hi[static_cast<std::size_t>(a)] += h;
                     const Jones num =
                         (rotation_matrix(RotationParams::from_array(hi)) - rotation_matrix(RotationParams::from_array(lo))) /
                         (2.0 * h);
                     diff = std::max(diff, (num - jac[static_cast<std::size_t>(a)]).cwiseAbs().maxCoeff());
                     ref = std::max(ref, num.cwiseAbs().maxCoeff());
                   }
                   return diff / std::max(ref, 1e-12);
                 }});
  out.push_back({"mimo fir", [](Rng& rng) {
                   const std::size_t l = 2 * pick(rng, 0, 3) + 1;
                   const auto x = random_complex(rng, 2, pick(rng, 6, 14));
                   const auto w = random_real(rng, 1, 16 * l);
                   return gradient_error([l](ad::Tape&, const std::vector<ad::Var>& v) { return mimo_fir_op(v[0], v[1], l); },
                                         {x, w}, rng);
                 }});
  out.push_back({"fake_quantize pass-through", [](Rng& rng) {
                   // The straight-through rule differentiates the surrogate
                   // clamp(x, -s, s); its central difference is the reference.
                   const int bits = static_cast<int>(pick(rng, 2, 16));
                   const double s = uniform(rng, 0.2, 2.0);
                   const auto x = random_real(rng, 1, 16, 1.6 * s);
                   ad::Tape tape;
                   ad::Var leaf = tape.leaf(x, true);
                   ad::Var y = fake_quantize_op(leaf, bits, s);
                   std::normal_distribution<double> nd;
                   std::vector<double> w(x.data.size());
                   for (double& v : w) v = nd(rng);
                   ad::Var loss = y.tape().record("project", ad::Tensor::scalar(0.0), {y},
                                                  [w](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                                                    for (std::size_t i = 0; i < w.size(); ++i) gi[0]->data[i] += g.data[0] * w[i];
                                                  });
                   tape.backward(loss);
                   const ad::Tensor* g = tape.grad(leaf);
                   double diff = 0.0, ref = 0.0;
                   for (std::size_t i = 0; i < x.data.size(); ++i) {
                     const double h = 1e-6, v = x.data[i];
                     const double num = w[i] * (std::clamp(v + h, -s, s) - std::clamp(v - h, -s, s)) / (2 * h);
                     diff = std::max(diff, std::abs(g->data[i] - num));
                     ref = std::max(ref, std::abs(num));
                   }
                   return diff / std::max(ref, 1e-12);
                 }});
  out.push_back({"mse loss", [](Rng& rng) {
                   const std::size_t c = pick(rng, 1, 2), n = pick(rng, 2, 12);
                   const auto y = random_complex(rng, c, n);
                   const auto t = random_complex(rng, c, n);
                   return gradient_error([t](ad::Tape&, const std::vector<ad::Var>& v) { return mse_loss_op(v[0], t); }, {y}, rng);
                 }});
  out.push_back({"cma loss", [](Rng& rng) {
                   const auto y = random_complex(rng, pick(rng, 1, 2), pick(rng, 2, 12));
                   const double r = uniform(rng, 0.5, 1.5);
                   return gradient_error([r](ad::Tape&, const std::vector<ad::Var>& v) { return cma_loss_op(v[0], r); }, {y}, rng);
                 }});
  out.push_back({"generic tape ops", [](Rng& rng) {
                   const auto x = random_complex(rng, 2, 12);
                   const auto phi = random_real(rng, 2, 12, 2.0);
                   const std::size_t taps = 2 * pick(rng, 0, 3) + 1;
                   std::vector<double> h(taps);
                   for (double& v : h) v = uniform(rng, -1, 1);
                   return gradient_error(
                       [h](ad::Tape&, const std::vector<ad::Var>& v) {
                         ad::Var a = ad::phase_rotate(v[0], v[1], -1.0);
                         ad::Var b = ad::fir_real_fixed(a, h);
                         ad::Var c = ad::window(ad::decimate(b, 2, 1), 1, 4);
                         ad::Var r = ad::real_to_complex(ad::complex_to_real(c));
                         ad::Var p = ad::intensity(r);
                         ad::Var q = ad::elementwise(
                             "tanh", p, [](double t) { return std::tanh(t); },
                             [](double t) { return 1.0 - std::tanh(t) * std::tanh(t); });
                         ad::Var parts[] = {ad::channel(q, 1), ad::channel(q, 0)};
                         return ad::scale(ad::stack(parts), 1.7);
                       },
                       {x, phi}, rng);
                 }});
  return out;
}

}  // namespace

std::vector<OpCheck> gradient_suite(int instances, std::uint64_t seed) {
  std::vector<OpCheck> results;
  std::uint64_t k = 0;
  for (const auto& e : cases()) {
    OpCheck r{e.op, 0, 0.0};
    Rng rng = keyed_rng(seed, {k++});
    for (int i = 0; i < instances; ++i) {
      r.max_error = std::max(r.max_error, e.run(rng));
      ++r.instances;
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace ldbp::testing
