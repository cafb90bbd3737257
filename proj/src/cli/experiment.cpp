#include "ldbp/cli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <thread>

#include "ldbp/errors.hpp"
#include "ldbp/rng.hpp"

namespace ldbp::exp {

namespace {

constexpr std::uint64_t kSymbolKey = 1;
constexpr std::uint64_t kAmpKey = 2;
constexpr std::uint64_t kRxNoiseKey = 3;
constexpr std::uint64_t kWindowKey = 4;

double dbm_to_w(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) f(i);
    });
  for (auto& th : pool) th.join();
}

ComplexSignal with_pols(const SamplingGrid& g, std::vector<std::vector<cplx>> pols) {
  return ComplexSignal(g, std::move(pols));
}

std::vector<cplx> cyclic_conv(std::span<const cplx> x, std::span<const double> taps) {
  const long n = static_cast<long>(x.size());
  const long k = static_cast<long>(taps.size());
  const long c = (k - 1) / 2;
  std::vector<cplx> y(x.size());
  for (long i = 0; i < n; ++i) {
    cplx acc{};
    for (long t = 0; t < k; ++t) {
      long j = (i + c - t) % n;
      if (j < 0) j += n;
      acc += taps[static_cast<std::size_t>(t)] * x[static_cast<std::size_t>(j)];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

SymbolFrame decimate_symbols(const ComplexSignal& sig, std::size_t sps) {
  SymbolFrame out;
  out.modulation_order = 0;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) {
    std::vector<cplx> s;
    s.reserve(sig.size() / sps);
    for (std::size_t i = 0; i < sig.size(); i += sps) s.push_back(sig.pol(p)[i]);
    out.pols.push_back(std::move(s));
  }
  return out;
}

void append(SymbolFrame& acc, const SymbolFrame& part) {
  if (acc.pols.empty()) acc.pols.resize(part.n_pols());
  for (std::size_t p = 0; p < part.n_pols(); ++p)
    acc.pols[p].insert(acc.pols[p].end(), part.pols[p].begin(), part.pols[p].end());
}

// Equalized symbols of every frame, concatenated.
SymbolFrame equalize_all(const Dataset& d, const Receiver& r, const SignalMap& map, std::size_t guard, bool mf_first,
                         SymbolFrame* tx_all) {
  guard = round_up(guard, r.sps);
  std::vector<SymbolFrame> parts(d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const Frame& f = d.frames[i];
    ComplexSignal in = mf_first ? matched_filter_cyclic(f.rx, r) : f.rx;
    ComplexSignal y = crop(map(cyclic_extend(in, guard)), guard, in.size());
    parts[i] = mf_first ? decimate_symbols(y, r.sps) : detect_cyclic(y, r);
  }
  SymbolFrame rx;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    append(rx, parts[i]);
    if (tx_all) append(*tx_all, d.frames[i].tx);
  }
  return rx;
}

}  // namespace

void Scenario::validate() const {
  if (fiber_enabled) fiber.validate();
  if (!(symbol_rate_hz > 0)) throw ConfigError("scenario: symbol_rate_hz must be > 0");
  if (tx_sps < 1 || rx_sps < 1) throw ConfigError("scenario: samples per symbol must be >= 1");
  if (rrc_span_symbols < 2) throw ConfigError("scenario: rrc_span_symbols must be >= 2");
  if (steps_per_span < 1) throw ConfigError("scenario: steps_per_span must be >= 1");
  if (n_pols != 1 && n_pols != 2) throw ConfigError("scenario: n_pols must be 1 or 2");
  if (frame_symbols < 16) throw ConfigError("scenario: frame_symbols must be >= 16");
  if (!(rolloff >= 0 && rolloff <= 1)) throw ConfigError("scenario: rolloff must lie in [0, 1]");
  if (pmd) {
    if (n_pols != 2) throw ConfigError("scenario: pmd requires n_pols = 2");
    if (pmd->sections < 1) throw ConfigError("scenario: pmd.sections must be >= 1");
    if (!(pmd->mean_dgd_symbols >= 0)) throw ConfigError("scenario: pmd.mean_dgd_symbols must be >= 0");
  }
  qam_constellation(modulation_order);
}

std::optional<PmdLink> Scenario::pmd_link() const {
  if (!pmd) return std::nullopt;
  return draw_pmd_link(pmd->seed, pmd->sections, pmd->mean_dgd_symbols / symbol_rate_hz * 1e12);
}

FrameSeeds frame_seeds(const Scenario& s, std::uint64_t index) {
  return {keyed_seed(s.seed, {kSymbolKey, index}), keyed_seed(s.seed, {kRxNoiseKey, index}), keyed_seed(s.seed, {kAmpKey})};
}

double launch_amplitude(const Scenario& s, double launch_dbm) {
  return std::sqrt(dbm_to_w(launch_dbm) * s.tx_sps / static_cast<double>(s.n_pols));
}

Frame simulate_frame(const Scenario& s, double launch_dbm, std::uint64_t index) {
  const FrameSeeds seeds = frame_seeds(s, index);
  SymbolFrame symbols = random_symbols(seeds.symbols, s.frame_symbols, s.modulation_order, s.n_pols);
  const auto taps = rrc_taps(s.rolloff, s.rrc_span_symbols, s.tx_sps);
  ComplexSignal tx = shape_cyclic(symbols, s.tx_sps, taps, s.symbol_rate_hz);
  const double a = launch_amplitude(s, launch_dbm);
  auto pols = tx.pols();
  for (auto& p : pols)
    for (auto& v : p) v *= a;
  ComplexSignal sig = with_pols(tx.grid(), std::move(pols));

  const auto link = s.pmd_link();
  if (s.fiber_enabled) {
    AmplifierConfig amp;
    amp.noise_enabled = s.amplifier_noise;
    amp.noise_figure_db = s.noise_figure_db;
    amp.seed = seeds.amplifier;
    sig = propagate(sig, s.fiber, link, amp, s.steps_per_span, index);
  } else if (link) {
    for (const auto& sec : link->sections) sig = pmd_section_apply(sig, sec);
  }
  sig = resample(sig, static_cast<std::size_t>(s.rx_sps));
  if (s.receiver_snr_db) {
    const double var = dbm_to_w(launch_dbm) / static_cast<double>(s.n_pols) * s.rx_sps / std::pow(10.0, *s.receiver_snr_db / 10.0);
    Rng rng(seeds.receiver_noise);
    sig = add_awgn(sig, var, rng);
  }
  return Frame{index, std::move(symbols), std::move(sig)};
}

Dataset simulate(const Scenario& s, double launch_dbm, std::uint64_t first_index, std::size_t count, std::size_t threads) {
  s.validate();
  Dataset d;
  d.scenario = s;
  d.launch_dbm = launch_dbm;
  std::vector<std::optional<Frame>> frames(count);
  parallel_for(count, threads, [&](std::size_t i) { frames[i] = simulate_frame(s, launch_dbm, first_index + i); });
  for (auto& f : frames) d.frames.push_back(std::move(*f));
  return d;
}

Receiver make_receiver(const Scenario& s, double launch_dbm) {
  Receiver r;
  r.sps = static_cast<std::size_t>(s.rx_sps);
  r.mf_taps = rrc_taps(s.rolloff, s.rrc_span_symbols, s.rx_sps);
  const double g = launch_amplitude(s, launch_dbm) * std::sqrt(static_cast<double>(s.rx_sps) / s.tx_sps);
  for (auto& t : r.mf_taps) t /= g;
  return r;
}

ComplexSignal matched_filter_cyclic(const ComplexSignal& sig, const Receiver& r) {
  std::vector<std::vector<cplx>> pols;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) pols.push_back(cyclic_conv(sig.pol(p), r.mf_taps));
  return with_pols(sig.grid(), std::move(pols));
}

SymbolFrame detect_cyclic(const ComplexSignal& sig, const Receiver& r) {
  return decimate_symbols(matched_filter_cyclic(sig, r), r.sps);
}

ComplexSignal cyclic_extend(const ComplexSignal& sig, std::size_t guard) {
  const std::size_t n = sig.size();
  const auto& g = sig.grid();
  std::vector<std::vector<cplx>> pols;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) {
    std::vector<cplx> v(n + 2 * guard);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sig.pol(p)[(i + n - guard % n) % n];
    pols.push_back(std::move(v));
  }
  return with_pols(SamplingGrid(g.sample_rate(), n + 2 * guard, g.samples_per_symbol()), std::move(pols));
}

ComplexSignal crop(const ComplexSignal& sig, std::size_t begin, std::size_t length) {
  if (begin + length > sig.size()) throw BoundsError("crop: range exceeds the signal");
  const auto& g = sig.grid();
  std::vector<std::vector<cplx>> pols;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) {
    auto s = sig.pol(p).subspan(begin, length);
    pols.emplace_back(s.begin(), s.end());
  }
  return with_pols(SamplingGrid(g.sample_rate(), length, g.samples_per_symbol()), std::move(pols));
}

double evaluate(const Dataset& d, const Receiver& r, const SignalMap& map, std::size_t guard_samples, bool mf_first) {
  SymbolFrame tx;
  SymbolFrame rx = equalize_all(d, r, map, guard_samples, mf_first, &tx);
  return effective_snr(rx, tx);
}

double evaluate_blind(const Dataset& d, const Receiver& r, const SignalMap& map, std::size_t guard_samples) {
  SymbolFrame tx;
  const SymbolFrame rx = equalize_all(d, r, map, guard_samples, true, &tx);
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t np = rx.n_pols();
  for (int swap = 0; swap < (np == 2 ? 2 : 1); ++swap)
    for (int conj_mask = 0; conj_mask < (1 << np); ++conj_mask) {
      SymbolFrame cand = rx;
      if (swap) std::swap(cand.pols[0], cand.pols[1]);
      for (std::size_t p = 0; p < np; ++p)
        if (conj_mask & (1 << p))
          for (auto& v : cand.pols[p]) v = std::conj(v);
      best = std::max(best, effective_snr(cand, tx));
    }
  return best;
}

double eval_linear_cd(const Dataset& d, const Receiver& r) {
  const auto& f = d.scenario.fiber;
  if (!d.scenario.fiber_enabled) return evaluate(d, r, [](const ComplexSignal& s) { return s; }, 0);
  return evaluate(
      d, r,
      [&f](const ComplexSignal& s) { return cd_operator(s, f.beta2_ps2_per_km, f.total_length_km(), Direction::backward); },
      0);
}

double eval_fd_dbp(const Dataset& d, const Receiver& r, int n_steps) {
  const auto& f = d.scenario.fiber;
  return evaluate(d, r, [&f, n_steps](const ComplexSignal& s) { return dbp_fd_reference(s, f, n_steps); }, 0);
}

std::size_t dbp_receptive_samples(const DbpModel& m) {
  std::size_t total = 0;
  for (const auto& s : m.steps) total += s.filter.center();
  return total;
}

double eval_dbp(const Dataset& d, const Receiver& r, const DbpModel& m) {
  return evaluate(d, r, [&m](const ComplexSignal& s) { return dbp_forward(s, m); }, dbp_receptive_samples(m));
}

double eval_subband(const Dataset& d, const Receiver& r, const SubbandDbpModel& m, const FilterBankConfig& bank,
                    std::size_t guard_samples) {
  return evaluate(
      d, r, [&](const ComplexSignal& s) { return merge(subband_dbp_forward(split(s, bank), m), bank); }, guard_samples);
}

Window extract_window(const Frame& f, std::size_t sps, std::size_t first_symbol, const WindowSpec& w) {
  const std::size_t n = f.rx.size();
  const std::size_t ns = f.tx.size();
  const std::size_t len = sps * (w.symbols + 2 * w.guard_symbols);
  const std::size_t start = (sps * (first_symbol % ns) + n - (sps * w.guard_symbols) % n) % n;
  std::vector<std::vector<cplx>> pols;
  for (std::size_t p = 0; p < f.rx.n_pols(); ++p) {
    std::vector<cplx> v(len);
    for (std::size_t i = 0; i < len; ++i) v[i] = f.rx.pol(p)[(start + i) % n];
    pols.push_back(std::move(v));
  }
  std::vector<std::vector<cplx>> tgt;
  for (std::size_t p = 0; p < f.tx.n_pols(); ++p) {
    std::vector<cplx> v(w.symbols);
    for (std::size_t i = 0; i < w.symbols; ++i) v[i] = f.tx.pols[p][(first_symbol + i) % ns];
    tgt.push_back(std::move(v));
  }
  const auto& g = f.rx.grid();
  Window win{ad::Tensor::from_complex_channels(pols), ad::Tensor::from_complex_channels(tgt),
             ComplexSignal(SamplingGrid(g.sample_rate(), len, sps), pols)};
  return win;
}

Window random_window(const Dataset& d, const WindowSpec& w, std::uint64_t seed, long iteration, std::size_t element) {
  if (d.frames.empty()) throw ConfigError("random_window: empty dataset");
  Rng rng = keyed_rng(seed, {kWindowKey, static_cast<std::uint64_t>(iteration), element});
  const Frame& f = d.frames[rng() % d.frames.size()];
  const std::size_t k0 = rng() % f.tx.size();
  return extract_window(f, static_cast<std::size_t>(d.scenario.rx_sps), k0, w);
}

ad::Var symbol_mse(ad::Var equalized, const Window& win, const Receiver& r, const WindowSpec& w) {
  ad::Var y = ad::fir_real_fixed(equalized, r.mf_taps);
  y = ad::window(ad::decimate(y, r.sps, 0), w.guard_symbols, w.symbols);
  return mse_loss_op(y, win.target);
}

TrainProblem dbp_problem(const DbpModel& architecture, const Dataset& train, const Dataset* validation, const Receiver& r,
                         const WindowSpec& w, std::uint64_t seed, long validate_every) {
  TrainProblem p;
  p.element_loss = [architecture, &train, r, w, seed](ad::Tape& tape, const ParamVars& vars, long it, std::size_t el) {
    Window win = random_window(train, w, seed, it, el);
    ad::Var x = tape.constant(win.input);
    return symbol_mse(dbp_forward_op(x, architecture, vars), win, r, w);
  };
  if (validation) {
    p.validation = [architecture, validation, r](const ParamSet& params) {
      return -eval_dbp(*validation, r, dbp_from_params(architecture, params));
    };
    p.validate_every = validate_every;
  }
  return p;
}

TrainProblem subband_problem(const SubbandDbpModel& architecture, const FilterBankConfig& bank, const Dataset& train,
                             const Dataset* validation, const Receiver& r, const WindowSpec& w, std::uint64_t seed,
                             long validate_every, std::size_t eval_guard_samples) {
  TrainProblem p;
  p.element_loss = [architecture, bank, &train, r, w, seed](ad::Tape& tape, const ParamVars& vars, long it,
                                                           std::size_t el) {
    Window win = random_window(train, w, seed, it, el);
    const SubbandFrame frame = split(win.signal, bank);
    ad::Var x = tape.constant(frame_tensor(frame));
    ad::Var y = subband_dbp_forward_op(x, frame.n_pols, architecture, vars);
    y = ad::window(merge_op(y, frame, bank), 0, frame.input_samples);
    return symbol_mse(y, win, r, w);
  };
  if (validation) {
    p.validation = [architecture, bank, validation, r, eval_guard_samples](const ParamSet& params) {
      return -eval_subband(*validation, r, subband_from_params(architecture, params), bank, eval_guard_samples);
    };
    p.validate_every = validate_every;
  }
  return p;
}

BlockSource pmd_blocks(const Dataset& d, const Receiver& r, const WindowSpec& w, std::uint64_t seed) {
  // Matched filter once, on the cyclic frames.
  auto filtered = std::make_shared<Dataset>();
  filtered->scenario = d.scenario;
  filtered->launch_dbm = d.launch_dbm;
  for (const auto& f : d.frames) filtered->frames.push_back(Frame{f.index, f.tx, matched_filter_cyclic(f.rx, r)});
  return [filtered, w, seed](long it, std::size_t el) {
    Window win = random_window(*filtered, w, seed, it, el);
    return AdaptBlock{std::move(win.input), std::move(win.target), w.guard_symbols};
  };
}

}  // namespace ldbp::exp
