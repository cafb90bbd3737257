// Acceptance runner: one PASS/FAIL line per criterion. `--only N` runs a
// single criterion (criterion 5 trains the criterion 2 model first).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

#include <Eigen/LU>

#include "grad_check.hpp"
#include "ldbp/channel.hpp"
#include "ldbp/cli/artifact.hpp"
#include "ldbp/cli/commands.hpp"
#include "ldbp/cli/config.hpp"
#include "ldbp/cli/experiment.hpp"
#include "ldbp/dbp.hpp"
#include "ldbp/fft.hpp"
#include "ldbp/pmd_comp.hpp"
#include "ldbp/subband.hpp"
#include "ldbp/training.hpp"

using namespace ldbp;

namespace {

using Clock = std::chrono::steady_clock;

std::size_t n_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

void note(const char* fmt, auto... args) {
  std::printf("  ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

bool report(int id, bool pass, Clock::time_point t0) {
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  std::printf("criterion %d: %s (%.1f s)\n", id, pass ? "PASS" : "FAIL", s);
  std::fflush(stdout);
  return pass;
}

ComplexSignal random_signal(Rng& rng, std::size_t n, std::size_t pols, double rate) {
  std::normal_distribution<double> nd;
  std::vector<std::vector<cplx>> p(pols, std::vector<cplx>(n));
  for (auto& v : p)
    for (auto& x : v) x = {nd(rng), nd(rng)};
  return ComplexSignal(SamplingGrid(rate, n, 1), std::move(p));
}

double rel_err(const ComplexSignal& a, const ComplexSignal& b, std::size_t from = 0, std::size_t skip_end = 0) {
  double e = 0.0, r = 0.0;
  for (std::size_t p = 0; p < a.n_pols(); ++p)
    for (std::size_t i = from; i + skip_end < a.size(); ++i) {
      e += std::norm(a.pol(p)[i] - b.pol(p)[i]);
      r += std::norm(b.pol(p)[i]);
    }
  return std::sqrt(e / r);
}

// ---- 1: gradients ----------------------------------------------------------

bool criterion1() {
  const auto t0 = Clock::now();
  bool ok = true;
  for (const auto& c : testing::gradient_suite(20, 2024)) {
    const bool pass = c.instances >= 20 && c.max_error < testing::kGradientTolerance;
    note("%-24s instances %3d  max rel error %.2e  %s", c.op.c_str(), c.instances, c.max_error, pass ? "ok" : "FAIL");
    ok = ok && pass;
  }
  return report(1, ok, t0);
}

// ---- 2: short-filter learning ----------------------------------------------

constexpr double kC2Power = 6.0;
constexpr long kC2Iterations = 50000;
const std::vector<int> kC2Taps{5, 3};

struct ShortFilterRun {
  exp::Scenario scenario;
  exp::Dataset train, validation, eval;
  exp::Receiver receiver;
  DbpModel architecture;
  ParamSet learned;
  double learned_snr = 0.0;
};

exp::Scenario c2_scenario() {
  exp::Scenario s;
  s.steps_per_span = 20;
  s.frame_symbols = 2048;
  return s;
}

ShortFilterRun train_short_filters() {
  ShortFilterRun run;
  run.scenario = c2_scenario();
  const auto& s = run.scenario;
  const std::size_t th = n_threads();
  run.train = exp::simulate(s, kC2Power, 0, 4, th);
  run.validation = exp::simulate(s, kC2Power, 100, 2, th);
  run.eval = exp::simulate(s, kC2Power, 200, 4, th);
  run.receiver = exp::make_receiver(s, kC2Power);

  InitOptions io;
  io.sample_rate = s.rx_sample_rate();
  io.samples_per_symbol = static_cast<std::size_t>(s.rx_sps);
  run.architecture = init_model(s.fiber, 25, kC2Taps, io);

  TrainConfig tc;
  tc.opt.step_size = 1e-2;
  tc.opt.batch_size = 4;
  tc.opt.max_iterations = kC2Iterations;
  tc.threads = th;
  const auto problem =
      exp::dbp_problem(run.architecture, run.train, &run.validation, run.receiver, exp::WindowSpec{}, 7, 500);
  TrainState st = initial_state(dbp_params(run.architecture));
  for (long stop = 10000; stop <= kC2Iterations; stop += 10000) {
    train(problem, tc, st, stop);
    note("iteration %ld  validation %.2f dB", st.iteration, -st.best_score);
  }
  run.learned = st.has_best ? st.best : st.params;
  run.learned_snr = exp::eval_dbp(run.eval, run.receiver, dbp_from_params(run.architecture, run.learned));
  return run;
}

std::optional<ShortFilterRun> g_short;

const ShortFilterRun& short_filters() {
  if (!g_short) g_short = train_short_filters();
  return *g_short;
}

bool criterion2() {
  const auto t0 = Clock::now();
  const auto& run = short_filters();
  const auto& r = run.receiver;

  // Linear-equalization penalty: same launch power with the Kerr term removed.
  exp::Scenario lin = run.scenario;
  lin.fiber.gamma_per_w_per_km = 0.0;
  const auto lin_eval = exp::simulate(lin, kC2Power, 200, 4, n_threads());
  const double cd_linear = exp::eval_linear_cd(lin_eval, exp::make_receiver(lin, kC2Power));
  const double cd_here = exp::eval_linear_cd(run.eval, r);
  const double baseline = exp::eval_dbp(run.eval, r, run.architecture);
  const double fd = exp::eval_fd_dbp(run.eval, r, 25);

  note("launch %.1f dBm, %ld iterations, taps 5/3 over 25 steps", kC2Power, kC2Iterations);
  note("linear CD equalizer: %.2f dB without Kerr, %.2f dB with (penalty %.2f dB)", cd_linear, cd_here,
       cd_linear - cd_here);
  note("initializer %.2f dB, learned %.2f dB, frequency-domain DBP %.2f dB", baseline, run.learned_snr, fd);
  const bool regime = cd_linear - cd_here >= 4.0;
  const bool a = run.learned_snr >= baseline + 3.0;
  const bool b = run.learned_snr >= fd - 1.0;
  note("penalty >= 4 dB: %s; (a) gain %.2f dB >= 3: %s; (b) gap %.2f dB <= 1: %s", regime ? "yes" : "no",
       run.learned_snr - baseline, a ? "yes" : "no", fd - run.learned_snr, b ? "yes" : "no");
  return report(2, regime && a && b, t0);
}

// ---- 3: complexity ---------------------------------------------------------

bool criterion3() {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> repeated(25, 70);
  std::vector<std::size_t> short_taps;
  for (std::size_t k = 0; k < 25; ++k) short_taps.push_back(static_cast<std::size_t>(kC2Taps[k % 2]));
  const auto big = complexity_report(repeated);
  const auto small = complexity_report(short_taps);
  InitOptions io;
  const auto model = init_model(FiberParams{}, 25, kC2Taps, io);
  const auto from_model = complexity_report(model);
  const double ratio = static_cast<double>(big.real_mults_per_sample) / static_cast<double>(small.real_mults_per_sample);
  note("25 x 70 taps: %zu mults/sample, %zu taps", big.real_mults_per_sample, big.total_taps);
  note("5/3 model:    %zu mults/sample, %zu taps (from the model: %zu, %zu)", small.real_mults_per_sample,
       small.total_taps, from_model.real_mults_per_sample, from_model.total_taps);
  note("ratio %.3f", ratio);
  const bool ok = big.real_mults_per_sample == 3650 && small.real_mults_per_sample == 402 && ratio >= 9.0 &&
                  big.total_taps == 1750 && small.total_taps == 101 &&
                  from_model.real_mults_per_sample == small.real_mults_per_sample &&
                  from_model.total_taps == small.total_taps;
  return report(3, ok, t0);
}

// ---- 4: subband sparsification ---------------------------------------------

constexpr double kC4Power = 4.0;
constexpr int kC4Steps = 25;

std::size_t subband_guard(const SubbandDbpModel& m, const FilterBankConfig& bank) {
  std::size_t band = 0;
  for (const auto& s : m.steps) {
    std::size_t w = 0;
    for (const auto& f : s.filters) w = std::max(w, (f.size() - 1) / 2);
    band += w;
    for (const auto& t : s.coupling.stages) band += t.center();
  }
  const std::size_t decim = static_cast<std::size_t>(bank.n_subbands / bank.oversampling) + 1;
  return band * decim + bank.prototype.size();
}

double max_abs_in(const ParamSet& ps, const std::string& group) {
  double m = 0.0;
  for (const auto& p : ps)
    if (p.group == group)
      for (double v : p.values) m = std::max(m, std::abs(v));
  return m;
}

bool criterion4() {
  const auto t0 = Clock::now();
  bool ok = true;

  // Filter bank reconstruction on band-limited noise.
  for (int s : {2, 3, 7}) {
    const auto bank = FilterBankConfig::rrc(s);
    Rng rng(400 + static_cast<std::uint64_t>(s));
    const std::size_t n = 4200;
    auto x = random_signal(rng, n, 2, 20e9);
    std::vector<std::vector<cplx>> lp;
    for (const auto& p : x.pols()) {
      auto v = p;
      fft_inplace(v);
      for (std::size_t k = 0; k < n; ++k)
        if (std::abs(static_cast<double>(signed_bin(k, n)) / static_cast<double>(n)) > 0.45) v[k] = 0.0;
      ifft_inplace(v);
      lp.push_back(std::move(v));
    }
    const ComplexSignal band_limited(x.grid(), lp);
    const auto y = merge(split(band_limited, bank), bank);
    const double db = 20.0 * std::log10(rel_err(y, band_limited));
    note("merge(split(x)) S=%d: %.1f dB", s, db);
    ok = ok && db < -40.0;
  }

  // Single-stage cascade against its dense tensor.
  {
    Rng rng(404);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto bank = FilterBankConfig::rrc(3);
    const auto fr = split(random_signal(rng, 600, 2, 20e9), bank);
    auto t = MimoIntensityTensor::zeros(3, 9);
    for (double& c : t.coeffs) c = u(rng);
    const auto a = cascade_phase(fr, TensorCascade{{t}});
    const auto b = coupled_phase(fr, t);
    double err = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t n = 0; n < a[i].size(); ++n) {
        err = std::max(err, std::abs(a[i][n] - b[i][n]));
        mag = std::max(mag, std::abs(b[i][n]));
      }
    note("single-stage cascade vs dense tensor: %.1e relative", err / mag);
    ok = ok && err / mag <= 1e-12;
  }

  // Training: dense, then L1, prune and masked fine-tuning.
  exp::Scenario s = c2_scenario();
  const std::size_t th = n_threads();
  const auto tr = exp::simulate(s, kC4Power, 0, 4, th);
  const auto va = exp::simulate(s, kC4Power, 100, 2, th);
  const auto r = exp::make_receiver(s, kC4Power);
  const auto bank = FilterBankConfig::rrc(3);
  SubbandInitOptions so;
  so.taps = 7;
  so.stage_taps = {5, 5, 5};
  const auto arch = init_subband_model(s.fiber, kC4Steps, bank, s.rx_sample_rate(), so);
  const std::size_t guard = subband_guard(arch, bank);
  const exp::WindowSpec w{256, 128};
  const auto problem = exp::subband_problem(arch, bank, tr, &va, r, w, 41, 250, guard);
  auto snr = [&](const ParamSet& ps) { return exp::eval_subband(va, r, subband_from_params(arch, ps), bank, guard); };
  note("subband initializer %.2f dB", snr(subband_params(arch)));

  TrainConfig dense;
  dense.opt.step_size = 3e-3;
  dense.opt.batch_size = 4;
  dense.opt.max_iterations = 3000;
  dense.opt.seed = 41;
  dense.threads = th;
  TrainState ds = initial_state(subband_params(arch));
  train(problem, dense, ds);
  const ParamSet dense_params = ds.has_best ? ds.best : ds.params;
  const double dense_snr = snr(dense_params);
  note("dense model %.2f dB", dense_snr);

  TrainConfig l1 = dense;
  l1.reg.l1_weight = 1e-3 / std::max(max_abs_in(dense_params, groups::kTensor), 1e-300);
  l1.opt.max_iterations = 3000;
  l1.opt.seed = 42;
  TrainState ls = initial_state(dense_params);
  train(problem, l1, ls);
  const double eps = 0.002 * max_abs_in(ls.params, groups::kTensor);
  const auto pr = prune(ls.params, eps, {groups::kTensor});
  note("after L1 %.2f dB, after pruning %.2f dB", snr(ls.params), snr(pr.params));

  TrainConfig fine = dense;
  fine.opt.max_iterations = 2000;
  fine.opt.seed = 43;
  TrainState fs = initial_state(pr.params);
  fs.mask = pr.mask;
  train(problem, fine, fs);
  const ParamSet sparse_params = fs.has_best ? fs.best : fs.params;
  const double sparse_snr = snr(sparse_params);
  const auto sparse = prune(sparse_params, 0.0, {groups::kTensor});
  note("pruned and fine-tuned %.2f dB, %zu of %zu tensor coefficients zero (%.1f%%)", sparse_snr, sparse.zeros,
       sparse.total, 100.0 * sparse.sparsity);
  ok = ok && sparse.sparsity >= 0.8 && dense_snr - sparse_snr <= 0.2;
  return report(4, ok, t0);
}

// ---- 5: quantization -------------------------------------------------------

bool criterion5() {
  const auto t0 = Clock::now();
  const auto& run = short_filters();
  const auto& r = run.receiver;
  auto snr = [&](const ParamSet& ps) { return exp::eval_dbp(run.validation, r, dbp_from_params(run.architecture, ps)); };
  const double ref = snr(run.learned);
  note("float model %.2f dB", ref);

  int naive_bits = 0;
  for (int b = 2; b <= 16; ++b) {
    const double v = snr(quantize_params(run.learned, FakeQuantConfig{b, true}));
    note("naive %2d bits: %.2f dB", b, v);
    if (v >= ref - 0.5) {
      naive_bits = b;
      break;
    }
  }

  // Fake-quantization-aware retraining, descending one bit at a time from the
  // naive threshold and warm-starting each width from the previous one.
  ParamSet cur = run.learned;
  int fq_bits = naive_bits;
  for (int b = naive_bits - 1; b >= 2; --b) {
    TrainConfig tc;
    tc.opt.step_size = 3e-4;
    tc.opt.batch_size = 4;
    tc.opt.max_iterations = 5000;
    tc.fq = FakeQuantConfig{b, true};
    tc.threads = n_threads();
    TrainProblem p = exp::dbp_problem(run.architecture, run.train, nullptr, r, exp::WindowSpec{}, 51 + b, 0);
    p.validation = [&](const ParamSet& ps) { return -snr(quantize_params(ps, tc.fq)); };
    p.validate_every = 250;
    TrainState st = initial_state(cur);
    train(p, tc, st);
    cur = st.has_best ? st.best : st.params;
    const double v = snr(quantize_params(cur, tc.fq));
    note("fake-quantized retraining at %2d bits: %.2f dB", b, v);
    if (v < ref - 0.5) break;
    fq_bits = b;
  }
  note("bits needed within 0.5 dB: naive %d, fake-quantized %d", naive_bits, fq_bits);
  const bool ok = naive_bits >= 8 ? fq_bits <= 6 : naive_bits - fq_bits >= 2;
  return report(5, ok, t0);
}

// ---- 6: PMD ----------------------------------------------------------------

bool criterion6() {
  const auto t0 = Clock::now();
  bool ok = true;

  // Jones unitarity.
  {
    Rng rng(600);
    std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const Jones m = rotation_matrix({u(rng), u(rng), u(rng)});
      worst = std::max(worst, (m * m.adjoint() - Jones::Identity()).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(m.determinant() - 1.0));
      const Jones h = haar_su2(rng);
      worst = std::max(worst, (h * h.adjoint() - Jones::Identity()).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(h.determinant() - 1.0));
    }
    const auto link = draw_pmd_link(601, 10, 50.0);
    for (int k = -200; k <= 200; ++k) {
      const Jones j = link.jones(2 * std::numbers::pi * 1e8 * k);
      worst = std::max(worst, (j * j.adjoint() - Jones::Identity()).cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(j.determinant() - 1.0));
    }
    FiberParams f;
    f.gamma_per_w_per_km = 0.0;
    const auto x = random_signal(rng, 2048, 2, 20e9);
    const auto y = propagate(x, f, link, AmplifierConfig{}, 2);
    const double energy = std::abs(y.energy() / x.energy() - 1.0);
    note("unitarity: worst deviation %.1e, energy change %.1e", worst, energy);
    ok = ok && worst < 1e-12 && energy < 1e-12;
  }

  exp::Scenario s;
  s.fiber_enabled = false;
  s.n_pols = 2;
  s.modulation_order = 4;
  s.receiver_snr_db = 20.0;
  s.pmd = exp::PmdSpec{10, 0.5, 3};
  s.frame_symbols = 2048;
  exp::Scenario clean = s;
  clean.pmd.reset();
  const double p = 0.0;
  const std::size_t th = n_threads();
  const auto tr = exp::simulate(s, p, 0, 4, th);
  const auto ev = exp::simulate(s, p, 200, 4, th);
  const auto ev_clean = exp::simulate(clean, p, 200, 4, th);
  const auto r = exp::make_receiver(s, p);
  const double ref = exp::evaluate(ev_clean, r, [](const ComplexSignal& x) { return x; }, 0, true);
  note("without PMD %.2f dB", ref);

  const exp::WindowSpec w{256, 48};
  {
    MultiStepPmdModel arch;
    for (int k = 0; k < 10; ++k) arch.stages.push_back({RotationParams{}, fd_design(0.0, 5), StageOrder::fd_then_rotation});
    AdaptConfig ac;
    ac.mode = AdaptConfig::Mode::supervised;
    ac.opt.step_size = 1e-2;
    ac.opt.batch_size = 4;
    ac.opt.max_iterations = 3000;
    ac.opt.seed = 61;
    ac.sps = 2;
    ac.threads = th;
    const auto res = adapt(arch, exp::pmd_blocks(tr, r, w, 61), ac);
    const auto m = pmd_from_params(arch, res.params);
    const double v = exp::evaluate(ev, r, [&m](const ComplexSignal& x) { return pmd_comp_forward(x, m); },
                                   pmd_guard_samples(m), true);
    const double id = exp::evaluate(ev, r, [](const ComplexSignal& x) { return x; }, 0, true);
    note("no compensation %.2f dB; 10-stage supervised %.2f dB (penalty %.2f dB)", id, v, ref - v);
    ok = ok && ref - v < 0.5;
  }
  {
    const std::size_t taps = 15;
    AdaptConfig ac;
    ac.mode = AdaptConfig::Mode::cma;
    ac.modulus = cma_modulus(s.modulation_order);
    ac.opt.step_size = 1e-3;
    ac.opt.batch_size = 4;
    ac.opt.max_iterations = 3000;
    ac.opt.seed = 62;
    ac.sps = 2;
    ac.threads = th;
    const auto res = adapt(MimoFirBaseline::identity(taps), exp::pmd_blocks(tr, r, w, 62), ac);
    const auto m = mimo_from_params(res.params);
    const double v = exp::evaluate_blind(ev, r, [&m](const ComplexSignal& x) { return mimo_fir_apply(x, m); }, taps);
    note("4x4 MIMO %zu taps under CMA %.2f dB (penalty %.2f dB)", taps, v, ref - v);
    ok = ok && ref - v < 1.0;
  }
  return report(6, ok, t0);
}

// ---- 7: oracles ------------------------------------------------------------

bool criterion7() {
  const auto t0 = Clock::now();
  Rng rng(700);
  bool ok = true;

  {
    FiberParams f;
    f.gamma_per_w_per_km = 0.0;
    f.alpha_db_per_km = 0.0;
    const auto x = random_signal(rng, 4096, 2, 80e9);
    const auto y = propagate(x, f, std::nullopt, AmplifierConfig{}, 50);
    const double e = rel_err(y, cd_operator(x, f.beta2_ps2_per_km, f.total_length_km(), Direction::forward));
    note("linear propagate vs single dispersion filter: %.1e", e);
    ok = ok && e < 1e-9;
  }
  {
    const auto x = random_signal(rng, 1024, 2, 20e9);
    DbpModel lin;
    std::vector<cplx> cascade{1.0};
    std::size_t reach = 0;
    std::normal_distribution<double> nd;
    for (int k = 0; k < 25; ++k) {
      const std::size_t len = static_cast<std::size_t>(kC2Taps[static_cast<std::size_t>(k) % 2]);
      std::vector<cplx> half((len + 1) / 2);
      for (auto& v : half) v = cplx(nd(rng), nd(rng)) * 0.5;
      const FoldedFir fir(half, len);
      lin.steps.push_back({fir, 0.0});
      const auto h = fir.expand();
      std::vector<cplx> next(cascade.size() + h.size() - 1);
      for (std::size_t i = 0; i < cascade.size(); ++i)
        for (std::size_t j = 0; j < h.size(); ++j) next[i + j] += cascade[i] * h[j];
      cascade = std::move(next);
      reach += (len - 1) / 2;
    }
    const auto y = dbp_forward(x, lin);
    double worst = 0.0;
    for (std::size_t p = 0; p < 2; ++p) {
      const auto ref = fir_apply_direct(x.pol(p), cascade);
      double err = 0.0, mag = 0.0;
      for (std::size_t n = reach; n + reach < x.size(); ++n) {
        err = std::max(err, std::abs(y.pol(p)[n] - ref[n]));
        mag = std::max(mag, std::abs(ref[n]));
      }
      worst = std::max(worst, err / mag);
    }
    note("nl_scale=0 DBP vs cascaded convolution: %.1e", worst);
    ok = ok && worst < 1e-12;
  }
  {
    double worst = 0.0;
    for (std::size_t n_pols : {1u, 2u}) {
      const auto x = random_signal(rng, 512, n_pols, 1.0);
      SubbandFrame fr;
      fr.bands.push_back(x);
      fr.center_hz.push_back(0.0);
      fr.input_sample_rate = 1.0;
      fr.input_samples = fr.padded_samples = x.size();
      fr.n_pols = n_pols;
      SubbandDbpModel sm;
      DbpModel dm;
      std::normal_distribution<double> nd;
      for (int k = 0; k < 25; ++k) {
        const std::size_t len = static_cast<std::size_t>(kC2Taps[static_cast<std::size_t>(k) % 2]);
        std::vector<cplx> half((len + 1) / 2);
        for (auto& v : half) v = cplx(nd(rng), nd(rng)) * 0.3;
        const FoldedFir f(half, len);
        const double g = 0.02 * (1.0 + 0.1 * k);
        dm.steps.push_back({f, g});
        sm.steps.push_back({{f.expand()}, TensorCascade{{MimoIntensityTensor::diagonal(1, 1, g)}}});
      }
      const auto a = subband_dbp_forward(fr, sm);
      const auto b = dbp_forward(x, dm);
      worst = std::max(worst, rel_err(a.bands[0], b));
    }
    note("S=1 subband DBP vs plain DBP: %.1e", worst);
    ok = ok && worst < 1e-12;
  }
  {
    std::normal_distribution<double> nd;
    const std::size_t n = 200, taps = 9;
    const auto x = random_signal(rng, n, 2, 20e9);
    auto w = MimoFirBaseline::identity(taps);
    for (double& v : w.w) v = nd(rng);
    const auto y = mimo_fir_apply(x, w);
    std::size_t mismatches = 0;
    for (std::size_t o = 0; o < 4; ++o)
      for (long k0 = 0; k0 < static_cast<long>(n); ++k0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
          for (long k = 0; k < static_cast<long>(taps); ++k) {
            const long m = k0 - k + static_cast<long>(taps / 2);
            if (m < 0 || m >= static_cast<long>(n)) continue;
            const cplx v = x.pol(i / 2)[static_cast<std::size_t>(m)];
            acc += w.at(o, i, static_cast<std::size_t>(k)) * (i % 2 == 0 ? v.real() : v.imag());
          }
        const cplx v = y.pol(o / 2)[static_cast<std::size_t>(k0)];
        if ((o % 2 == 0 ? v.real() : v.imag()) != acc) ++mismatches;
      }
    note("mimo_fir_apply vs brute-force convolution: %zu mismatches", mismatches);
    ok = ok && mismatches == 0;
  }
  return report(7, ok, t0);
}

// ---- 8: reproducibility ----------------------------------------------------

cli::json reduced_config() {
  return cli::json::parse(R"({
    "schema_version": 1,
    "seed": 17,
    "scenario": {"fiber": {"n_spans": 4}, "frame_symbols": 512, "steps_per_span": 8},
    "dataset": {"train_frames": 2, "validation_frames": 1, "eval_frames": 1,
                "train_power_dbm": 2, "power_sweep_dbm": [0, 2]},
    "receiver": {"architecture": "dbp", "dbp": {"steps": 4, "taps": [7, 5]}},
    "training": {"optimizer": {"max_iterations": 60, "batch_size": 2, "step_size": 0.003},
                 "window_symbols": 128, "guard_symbols": 32, "checkpoint_every": 10, "validate_every": 20}
  })");
}

bool criterion8() {
  const auto t0 = Clock::now();
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("ldbp_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const auto c = cli::parse_config(reduced_config());
  const cli::Layout a{root / "a"}, b{root / "b"};

  cli::cmd_simulate(c, a.root, 1);
  cli::cmd_simulate(c, b.root, n_threads());
  bool data_same = cli::read_file(a.manifest()) == cli::read_file(b.manifest());
  for (const auto& e : fs::directory_iterator(a.dataset_dir()))
    data_same = data_same && cli::sha256_file(e.path()) == cli::sha256_file(b.dataset_dir() / e.path().filename());
  note("datasets byte-identical: %s", data_same ? "yes" : "no");

  cli::cmd_train(c, a.root, cli::TrainOptions{1, false, -1});
  cli::TrainOptions part{1, false, 30};
  const bool stopped = !cli::cmd_train(c, b.root, part);
  cli::cmd_train(c, b.root, cli::TrainOptions{1, true, -1});
  const bool model_same = stopped && cli::read_file(a.model()) == cli::read_file(b.model());
  note("interrupted at 30 and resumed equals uninterrupted: %s", model_same ? "yes" : "no");

  // A second uninterrupted run in a fresh directory.
  const cli::Layout c2{root / "c"};
  cli::cmd_simulate(c, c2.root, 1);
  cli::cmd_train(c, c2.root, cli::TrainOptions{1, false, -1});
  const bool rerun_same = cli::read_file(a.model()) == cli::read_file(c2.model());
  note("rerun artifact byte-identical: %s", rerun_same ? "yes" : "no");

  cli::cmd_evaluate(c, a.root, 1);
  cli::cmd_evaluate(c, b.root, n_threads());
  const bool report_same = cli::read_file(a.report_json()) == cli::read_file(b.report_json()) &&
                           cli::read_file(a.report_csv()) == cli::read_file(b.report_csv());
  note("reports byte-identical: %s", report_same ? "yes" : "no");
  fs::remove_all(root);
  return report(8, data_same && model_same && rerun_same && report_same, t0);
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0) only = std::atoi(argv[i + 1]);
  bool (*const criteria[])() = {criterion1, criterion2, criterion3, criterion4,
                                criterion5, criterion6, criterion7, criterion8};
  int failures = 0;
  for (int id = 1; id <= 8; ++id) {
    if (only != 0 && id != only) continue;
    try {
      if (!criteria[id - 1]()) ++failures;
    } catch (const std::exception& e) {
      std::printf("criterion %d: FAIL (%s)\n", id, e.what());
      ++failures;
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
