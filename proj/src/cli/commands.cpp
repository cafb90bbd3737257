#include "ldbp/cli/commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ldbp/errors.hpp"

namespace ldbp::cli {

namespace {

constexpr std::uint64_t kValidationBase = 1'000'000;
constexpr std::uint64_t kEvalBase = 2'000'000;
constexpr char kSplitMagic[8] = {'L', 'D', 'B', 'P', 'D', 'S', '0', '1'};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) f(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- binary split files ----------------------------------------------------

void put_u64(std::string& s, std::uint64_t v) { s.append(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::string& s, double v) { s.append(reinterpret_cast<const char*>(&v), sizeof v); }

class Cursor {
 public:
  explicit Cursor(std::string_view b) : b_(b) {}
  std::uint64_t u64() { return take<std::uint64_t>(); }
  double f64() { return take<double>(); }
  bool done() const { return pos_ == b_.size(); }

 private:
  template <class T>
  T take() {
    if (pos_ + sizeof(T) > b_.size()) throw IntegrityError("dataset: truncated split file");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

std::string split_name_eval(std::size_t k) { return "eval_" + std::to_string(k); }

json read_manifest(const Layout& l, const ExperimentConfig& c) {
  if (!fs::exists(l.manifest())) throw ConfigError("no dataset in " + l.root.string() + "; run simulate first");
  json m;
  try {
    m = json::parse(read_file(l.manifest()));
  } catch (const json::parse_error& e) {
    throw IntegrityError(std::string("dataset manifest: ") + e.what());
  }
  if (m.value("schema_version", -1) != kDatasetSchemaVersion)
    throw IntegrityError("dataset manifest: unsupported schema version");
  if (m.value("dataset_digest", std::string()) != dataset_digest(c))
    throw ConfigError("dataset in " + l.root.string() + " was generated from a different scenario; rerun simulate");
  return m;
}

// ---- model construction ----------------------------------------------------

FilterBankConfig bank_of(const SubbandArch& a) {
  FilterBankConfig b = FilterBankConfig::rrc(a.n_subbands, a.prototype_rolloff, a.prototype_span_symbols);
  b.oversampling = a.oversampling;
  return b;
}

MultiStepPmdModel initial_pmd(const ExperimentConfig& c) {
  const auto& s = c.scenario;
  int n = 0;
  if (c.receiver.pmd.stages) {
    n = *c.receiver.pmd.stages;
  } else {
    const double dgd_samples = s.pmd ? s.pmd->mean_dgd_symbols * s.rx_sps : 0.0;
    n = default_stage_count(s.pmd ? std::optional<int>(s.pmd->sections) : std::nullopt, dgd_samples);
  }
  MultiStepPmdModel m;
  for (int k = 0; k < n; ++k) {
    PmdStage st;
    st.fd = fd_design(0.0, c.receiver.pmd.fd_taps);
    st.order = c.receiver.pmd.order;
    m.stages.push_back(st);
  }
  return m;
}

std::size_t subband_guard_samples(const SubbandDbpModel& m, const FilterBankConfig& bank) {
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

std::size_t mf_half(const exp::Receiver& r) { return (r.mf_taps.size() - 1) / 2; }

std::size_t div_up(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct Complexity {
  std::size_t real_mults_per_sample = 0;
  std::size_t total_taps = 0;
  std::string rule;
};

Complexity complexity_of(const ModelArtifact& a) {
  const std::string type = artifact_type(a);
  Complexity out;
  if (type == "dbp") {
    const auto r = complexity_report(to_dbp(a));
    return {r.real_mults_per_sample, r.total_taps, r.rule};
  }
  if (type == "subband_dbp") {
    FilterBankConfig bank;
    const auto m = to_subband(a, &bank);
    const std::size_t s = static_cast<std::size_t>(bank.n_subbands);
    std::size_t per_subband_sample = 0;
    for (const auto& st : m.steps) {
      for (const auto& f : st.filters) {
        out.total_taps += f.size();
        per_subband_sample += 4 * f.size();
      }
      for (const auto& t : st.coupling.stages)
        for (double v : t.coeffs)
          if (v != 0.0) {
            ++out.total_taps;
            ++per_subband_sample;
          }
      per_subband_sample += 6 * s;
    }
    out.real_mults_per_sample = div_up(per_subband_sample * static_cast<std::size_t>(bank.oversampling), s);
    out.rule =
        "per input sample: subband-rate work (4 per complex tap of every band filter, 1 per nonzero tensor "
        "coefficient, 6 per band nonlinear stage) scaled by oversampling / subbands; filter bank excluded";
    return out;
  }
  if (type == "pmd_chain") {
    for (const auto& st : to_pmd(a).stages) {
      out.total_taps += st.fd.taps.size();
      out.real_mults_per_sample += 16 + 4 * st.fd.taps.size();
    }
    out.rule = "per dual-polarization sample: 16 per 2x2 complex rotation, 2 per real FD tap and polarization";
    return out;
  }
  if (type == "mimo_fir") {
    const auto m = to_mimo(a);
    out.total_taps = 16 * m.taps;
    out.real_mults_per_sample = 16 * m.taps;
    out.rule = "per dual-polarization sample: one real multiply per tap of the 4x4 real MIMO filter";
    return out;
  }
  throw ConfigError("unknown model type " + type);
}

struct Sparsity {
  std::size_t zeros = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

Sparsity sparsity_of(const ParamSet& p, const std::vector<std::string>& grps) {
  Sparsity s;
  for (const Param& q : p) {
    if (std::find(grps.begin(), grps.end(), q.group) == grps.end()) continue;
    for (double v : q.values) {
      ++s.total;
      if (v == 0.0) ++s.zeros;
    }
  }
  s.fraction = s.total ? static_cast<double>(s.zeros) / static_cast<double>(s.total) : 0.0;
  return s;
}

// Signal map and guard for evaluation of an artifact.
struct Evaluator {
  exp::SignalMap map;
  std::size_t guard = 0;
  bool mf_first = false;
  bool blind = false;
};

Evaluator evaluator_for(const ModelArtifact& a, const ExperimentConfig& c) {
  const std::string type = artifact_type(a);
  const double fs = c.scenario.rx_sample_rate();
  Evaluator e;
  if (type == "dbp") {
    auto m = std::make_shared<DbpModel>(to_dbp(a));
    if (m->meta.sample_rate != 0.0 && std::abs(m->meta.sample_rate - fs) > 1e-6 * fs)
      throw ConfigError("model sample rate " + fmt(m->meta.sample_rate) + " Hz does not match the dataset (" + fmt(fs) +
                        " Hz)");
    e.map = [m](const ComplexSignal& s) { return dbp_forward(s, *m); };
    e.guard = exp::dbp_receptive_samples(*m);
  } else if (type == "subband_dbp") {
    auto bank = std::make_shared<FilterBankConfig>();
    auto m = std::make_shared<SubbandDbpModel>(to_subband(a, bank.get()));
    const double rate = a.architecture.at("input_sample_rate_hz").get<double>();
    if (std::abs(rate - fs) > 1e-6 * fs)
      throw ConfigError("model sample rate " + fmt(rate) + " Hz does not match the dataset (" + fmt(fs) + " Hz)");
    e.map = [m, bank](const ComplexSignal& s) { return merge(subband_dbp_forward(split(s, *bank), *m), *bank); };
    e.guard = subband_guard_samples(*m, *bank);
  } else if (type == "pmd_chain") {
    if (c.scenario.n_pols != 2) throw ConfigError("pmd_chain model requires a dual-polarization dataset");
    auto m = std::make_shared<MultiStepPmdModel>(to_pmd(a));
    e.map = [m](const ComplexSignal& s) { return pmd_comp_forward(s, *m); };
    e.guard = pmd_guard_samples(*m);
    e.mf_first = true;
    e.blind = c.receiver.adapt_mode == AdaptConfig::Mode::cma;
  } else if (type == "mimo_fir") {
    if (c.scenario.n_pols != 2) throw ConfigError("mimo_fir model requires a dual-polarization dataset");
    auto m = std::make_shared<MimoFirBaseline>(to_mimo(a));
    e.map = [m](const ComplexSignal& s) { return mimo_fir_apply(s, *m); };
    e.guard = m->taps;
    e.mf_first = true;
    e.blind = c.receiver.adapt_mode == AdaptConfig::Mode::cma;
  } else {
    throw ConfigError("unknown model type " + type);
  }
  return e;
}

double run_evaluator(const Evaluator& e, const exp::Dataset& d, const exp::Receiver& r) {
  if (e.blind) return exp::evaluate_blind(d, r, e.map, e.guard);
  return exp::evaluate(d, r, e.map, e.guard, e.mf_first);
}

// ---- training ----------------------------------------------------------------

struct Problem {
  TrainProblem problem;
  ModelArtifact architecture;  ///< parameters replaced at the end
};

ModelArtifact with_params(ModelArtifact a, const ParamSet& p) {
  a.params = p;
  return a;
}

json checkpoint_json(const TrainState& st, const std::string& digest) {
  json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["config_digest"] = digest;
  j["iteration"] = st.iteration;
  j["params"] = params_json(st.params);
  j["has_best"] = st.has_best;
  j["best"] = st.has_best ? params_json(st.best) : json(nullptr);
  j["best_score"] = st.best_score;
  j["opt"] = {{"steps", st.opt.steps}, {"m", st.opt.m}, {"v", st.opt.v}};
  j["mask"] = st.mask.frozen;
  json h = json::array();
  for (const auto& r : st.history)
    h.push_back(json::array({r.iteration, r.data_loss, r.l1_penalty, r.total_loss, r.wall_seconds}));
  j["history"] = h;
  return j;
}

TrainState state_from_checkpoint(const json& j, const std::string& digest) {
  if (j.value("schema_version", -1) != kCheckpointSchemaVersion)
    throw IntegrityError("checkpoint: unsupported schema version");
  if (j.value("config_digest", std::string()) != digest)
    throw ConfigError("checkpoint was written by a different configuration; cannot resume");
  try {
    TrainState st;
    st.iteration = j.at("iteration").get<long>();
    st.params = params_from_json(j.at("params"));
    st.has_best = j.at("has_best").get<bool>();
    if (st.has_best) st.best = params_from_json(j.at("best"));
    st.best_score = j.at("best_score").get<double>();
    st.opt.steps = j.at("opt").at("steps").get<long>();
    st.opt.m = j.at("opt").at("m").get<std::vector<std::vector<double>>>();
    st.opt.v = j.at("opt").at("v").get<std::vector<std::vector<double>>>();
    st.mask.frozen = j.at("mask").get<std::vector<std::vector<std::uint8_t>>>();
    for (const auto& r : j.at("history"))
      st.history.push_back(
          {r.at(0).get<long>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(), r.at(4).get<double>()});
    return st;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint: ") + e.what());
  }
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string s = "iteration,data_loss,l1_penalty,total_loss,wall_seconds\n";
  for (const auto& r : rows)
    s += std::to_string(r.iteration) + "," + fmt(r.data_loss) + "," + fmt(r.l1_penalty) + "," + fmt(r.total_loss) + "," +
         fmt(r.wall_seconds) + "\n";
  return s;
}

}  // namespace

// ---- lock ----------------------------------------------------------------------

DirLock::DirLock(const fs::path& dir) {
  fs::create_directories(dir);
  const auto p = dir / ".lock";
  fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw ConfigError("cannot open lock file " + p.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw ConfigError("experiment directory " + dir.string() + " is in use by another process");
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---- digests -------------------------------------------------------------------

std::string config_digest(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  return "sha256:" + sha256_hex(j.dump());
}

std::string dataset_digest(const ExperimentConfig& c) {
  const json j = to_json(c);
  const json d = {{"seed", c.seed}, {"scenario", j.at("scenario")}, {"dataset", j.at("dataset")}};
  return "sha256:" + sha256_hex(d.dump());
}

// ---- dataset files ---------------------------------------------------------------

void write_split(const fs::path& file, const exp::Dataset& d) {
  const auto& s = d.scenario;
  std::string b(kSplitMagic, sizeof kSplitMagic);
  const std::size_t n_rx = s.frame_symbols * static_cast<std::size_t>(s.rx_sps);
  put_u64(b, d.frames.size());
  put_u64(b, s.n_pols);
  put_u64(b, s.frame_symbols);
  put_u64(b, n_rx);
  for (const auto& f : d.frames) {
    put_u64(b, f.index);
    for (const auto& p : f.tx.pols)
      for (cplx v : p) {
        put_f64(b, v.real());
        put_f64(b, v.imag());
      }
    for (std::size_t p = 0; p < f.rx.n_pols(); ++p)
      for (cplx v : f.rx.pol(p)) {
        put_f64(b, v.real());
        put_f64(b, v.imag());
      }
  }
  atomic_write(file, b);
}

exp::Dataset read_split(const fs::path& file, const exp::Scenario& s, double power_dbm) {
  const std::string bytes = read_file(file);
  if (bytes.size() < sizeof kSplitMagic || std::memcmp(bytes.data(), kSplitMagic, sizeof kSplitMagic) != 0)
    throw IntegrityError("dataset: " + file.string() + " is not a split file");
  Cursor cur(std::string_view(bytes).substr(sizeof kSplitMagic));
  const auto n_frames = cur.u64();
  const auto n_pols = cur.u64();
  const auto n_sym = cur.u64();
  const auto n_rx = cur.u64();
  if (n_pols != s.n_pols || n_sym != s.frame_symbols || n_rx != n_sym * static_cast<std::size_t>(s.rx_sps))
    throw ConfigError("dataset: " + file.string() + " does not match the configured grid");
  exp::Dataset d;
  d.scenario = s;
  d.launch_dbm = power_dbm;
  const SamplingGrid grid(s.rx_sample_rate(), n_rx, static_cast<std::size_t>(s.rx_sps));
  for (std::uint64_t f = 0; f < n_frames; ++f) {
    const auto index = cur.u64();
    SymbolFrame tx;
    tx.modulation_order = s.modulation_order;
    for (std::size_t p = 0; p < n_pols; ++p) {
      std::vector<cplx> v(n_sym);
      for (auto& x : v) {
        const double re = cur.f64();
        x = {re, cur.f64()};
      }
      tx.pols.push_back(std::move(v));
    }
    std::vector<std::vector<cplx>> rx;
    for (std::size_t p = 0; p < n_pols; ++p) {
      std::vector<cplx> v(n_rx);
      for (auto& x : v) {
        const double re = cur.f64();
        x = {re, cur.f64()};
      }
      rx.push_back(std::move(v));
    }
    d.frames.push_back(exp::Frame{index, std::move(tx), ComplexSignal(grid, std::move(rx))});
  }
  if (!cur.done()) throw IntegrityError("dataset: trailing bytes in " + file.string());
  return d;
}

exp::Dataset load_split(const Layout& l, const ExperimentConfig& c, const std::string& name) {
  const json m = read_manifest(l, c);
  for (const auto& sp : m.at("splits")) {
    if (sp.at("name") != name) continue;
    const fs::path file = l.dataset_dir() / sp.at("file").get<std::string>();
    if (!fs::exists(file)) throw IntegrityError("dataset: missing file " + file.string());
    if ("sha256:" + sha256_file(file) != sp.at("sha256").get<std::string>())
      throw IntegrityError("dataset: digest mismatch for " + file.string());
    return read_split(file, effective_scenario(c), sp.at("power_dbm").get<double>());
  }
  throw ConfigError("dataset: no split named '" + name + "'");
}

// ---- commands ----------------------------------------------------------------------

void cmd_simulate(const ExperimentConfig& c, const fs::path& out, std::size_t threads) {
  const Layout l{out};
  DirLock lock(out);
  const exp::Scenario s = effective_scenario(c);
  struct Plan {
    std::string name;
    double power;
    std::uint64_t first;
    std::size_t count;
  };
  std::vector<Plan> plans;
  if (c.dataset.train_frames) plans.push_back({"train", c.dataset.train_power_dbm, 0, c.dataset.train_frames});
  if (c.dataset.validation_frames)
    plans.push_back({"validation", c.dataset.train_power_dbm, kValidationBase, c.dataset.validation_frames});
  for (std::size_t k = 0; k < c.dataset.power_sweep_dbm.size(); ++k)
    plans.push_back({split_name_eval(k), c.dataset.power_sweep_dbm[k], kEvalBase, c.dataset.eval_frames});

  json splits = json::array();
  fs::create_directories(l.dataset_dir());
  for (const auto& p : plans) {
    const exp::Dataset d = exp::simulate(s, p.power, p.first, p.count, threads);
    const std::string file = p.name + ".bin";
    write_split(l.dataset_dir() / file, d);
    json frames = json::array();
    for (const auto& f : d.frames) {
      const auto seeds = exp::frame_seeds(s, f.index);
      frames.push_back({{"index", f.index}, {"symbol_seed", seeds.symbols}, {"receiver_noise_seed", seeds.receiver_noise}});
    }
    splits.push_back({{"name", p.name},
                      {"power_dbm", p.power},
                      {"file", file},
                      {"sha256", "sha256:" + sha256_file(l.dataset_dir() / file)},
                      {"frames", frames}});
  }
  json m;
  m["schema_version"] = kDatasetSchemaVersion;
  m["dataset_digest"] = dataset_digest(c);
  m["scenario"] = scenario_json(s);
  m["seeds"] = {{"base", c.seed},
                {"data", s.seed},
                {"amplifier", exp::frame_seeds(s, 0).amplifier},
                {"pmd_link", s.pmd ? json(s.pmd->seed) : json(nullptr)}};
  m["splits"] = splits;
  atomic_write(l.manifest(), m.dump(2) + "\n");
}

ModelArtifact initial_artifact(const ExperimentConfig& c) {
  const auto& s = c.scenario;
  const double fs = s.rx_sample_rate();
  ModelArtifact a;
  switch (c.receiver.architecture) {
    case Architecture::dbp: {
      InitOptions io;
      io.sample_rate = fs;
      io.samples_per_symbol = static_cast<std::size_t>(s.rx_sps);
      io.band_fraction = c.receiver.dbp.band_fraction;
      io.out_of_band_weight = c.receiver.dbp.out_of_band_weight;
      DbpModel m = init_model(s.fiber, c.receiver.dbp.steps, c.receiver.dbp.taps, io);
      m.meta.seed = c.seed;
      a = make_artifact(m);
      break;
    }
    case Architecture::subband_dbp: {
      const auto& sa = c.receiver.subband;
      const FilterBankConfig bank = bank_of(sa);
      SubbandInitOptions so;
      so.taps = sa.band_taps;
      so.stage_taps = sa.stage_taps;
      so.fit_rolloff = sa.fit_rolloff;
      a = make_artifact(init_subband_model(s.fiber, sa.steps, bank, fs, so), bank, fs);
      break;
    }
    case Architecture::pmd_chain: a = make_artifact(initial_pmd(c)); break;
    case Architecture::mimo_fir: a = make_artifact(MimoFirBaseline::identity(c.receiver.mimo.taps)); break;
    default: throw ConfigError("receiver.architecture: no trainable model");
  }
  a.provenance = {{"config_digest", config_digest(c)},
                  {"seeds", {{"base", c.seed}, {"data", c.data_seed()}, {"training", c.training_seed()}}}};
  return a;
}

namespace {

Problem build_problem(const ExperimentConfig& c, const exp::Dataset& train, const exp::Dataset* val,
                      const exp::Receiver& r) {
  Problem p;
  p.architecture = initial_artifact(c);
  const auto& tb = c.training;
  exp::WindowSpec w = tb.window;
  const std::uint64_t seed = c.training_seed();
  const std::size_t sps = static_cast<std::size_t>(c.scenario.rx_sps);
  switch (c.receiver.architecture) {
    case Architecture::dbp: {
      const DbpModel arch = to_dbp(p.architecture);
      w.guard_symbols = std::max(w.guard_symbols, div_up(exp::dbp_receptive_samples(arch) + mf_half(r), sps) + 1);
      p.problem = exp::dbp_problem(arch, train, val, r, w, seed, tb.validate_every);
      break;
    }
    case Architecture::subband_dbp: {
      FilterBankConfig bank;
      const SubbandDbpModel arch = to_subband(p.architecture, &bank);
      const std::size_t g = subband_guard_samples(arch, bank);
      w.guard_symbols = std::max(w.guard_symbols, div_up(g + mf_half(r), sps) + 1);
      p.problem = exp::subband_problem(arch, bank, train, val, r, w, seed, tb.validate_every, g);
      break;
    }
    case Architecture::pmd_chain:
    case Architecture::mimo_fir: {
      AdaptConfig ac;
      ac.mode = c.receiver.adapt_mode;
      ac.opt = tb.opt;
      ac.modulus = cma_modulus(c.scenario.modulation_order);
      ac.sps = sps;
      EqualizerOp eq;
      std::size_t g = 0;
      if (c.receiver.architecture == Architecture::pmd_chain) {
        const auto arch = to_pmd(p.architecture);
        eq = pmd_equalizer(arch);
        g = pmd_guard_samples(arch);
      } else {
        eq = mimo_equalizer(c.receiver.mimo.taps);
        g = c.receiver.mimo.taps;
      }
      w.guard_symbols = std::max(w.guard_symbols, div_up(g, sps) + 1);
      p.problem = adapt_problem(eq, exp::pmd_blocks(train, r, w, seed), ac);
      if (val) {
        const ModelArtifact arch = p.architecture;
        p.problem.validation = [arch, val, r, c](const ParamSet& params) {
          return -run_evaluator(evaluator_for(with_params(arch, params), c), *val, r);
        };
        p.problem.validate_every = tb.validate_every;
      }
      break;
    }
    default: throw ConfigError("receiver.architecture: no trainable model");
  }
  return p;
}

}  // namespace

bool cmd_train(const ExperimentConfig& c, const fs::path& out, const TrainOptions& opts) {
  const Layout l{out};
  DirLock lock(out);
  const std::string digest = config_digest(c);
  const exp::Dataset train = load_split(l, c, "train");
  std::optional<exp::Dataset> val;
  if (c.dataset.validation_frames) val = load_split(l, c, "validation");
  const exp::Receiver r = exp::make_receiver(effective_scenario(c), c.dataset.train_power_dbm);
  const Problem p = build_problem(c, train, val ? &*val : nullptr, r);

  TrainConfig tc;
  tc.opt = c.training.opt;
  tc.reg = c.training.reg;
  tc.fq = c.training.fq;
  tc.threads = opts.threads;

  TrainState st;
  if (opts.resume && fs::exists(l.checkpoint())) {
    json j;
    try {
      j = json::parse(read_file(l.checkpoint()));
    } catch (const json::parse_error& e) {
      throw IntegrityError(std::string("checkpoint: ") + e.what());
    }
    st = state_from_checkpoint(j, digest);
  } else {
    st = initial_state(p.architecture.params);
  }

  const long target = c.training.opt.max_iterations;
  const long stop = opts.stop_at >= 0 ? std::min(opts.stop_at, target) : target;
  const long every = c.training.checkpoint_every;
  while (st.iteration < stop) {
    const long next = every > 0 ? std::min(stop, (st.iteration / every + 1) * every) : stop;
    ldbp::train(p.problem, tc, st, next);
    if (every > 0 || next == stop) atomic_write(l.checkpoint(), checkpoint_json(st, digest).dump() + "\n");
  }
  atomic_write(l.history(), history_csv(st.history));
  if (st.iteration < target) return false;

  ParamSet final_params = st.has_best ? st.best : st.params;
  if (c.training.reg.prune_threshold > 0.0)
    final_params = prune(final_params, c.training.reg.prune_threshold, c.training.reg.groups).params;
  ModelArtifact a = with_params(p.architecture, final_params);
  if (c.training.fq.enabled) {
    QuantMetadata q;
    q.bits = c.training.fq.bits;
    for (const Param& prm : final_params)
      if (std::find(c.training.fq.groups.begin(), c.training.fq.groups.end(), prm.group) != c.training.fq.groups.end())
        q.scales[prm.name] = max_abs_scale(prm);
    a.params = quantize_params(final_params, c.training.fq);
    a.quantization = q;
  }
  save_artifact(l.model(), a);
  return true;
}

void cmd_evaluate(const ExperimentConfig& c, const fs::path& out, std::size_t threads) {
  const Layout l{out};
  DirLock lock(out);
  if (!fs::exists(l.model())) throw ConfigError("no model in " + out.string() + "; run train or import first");
  const std::string model_text = read_file(l.model());
  const ModelArtifact a = deserialize(model_text);
  const Evaluator e = evaluator_for(a, c);
  const exp::Scenario s = effective_scenario(c);
  const auto& sweep = c.dataset.power_sweep_dbm;
  std::vector<exp::Dataset> sets;
  for (std::size_t k = 0; k < sweep.size(); ++k) sets.push_back(load_split(l, c, split_name_eval(k)));
  std::vector<double> snr(sweep.size());
  parallel_for(sweep.size(), threads,
               [&](std::size_t k) { snr[k] = run_evaluator(e, sets[k], exp::make_receiver(s, sweep[k])); });

  const Complexity cx = complexity_of(a);
  const Sparsity sp = sparsity_of(a.params, c.training.reg.groups);
  json per = json::array();
  std::string csv = "power_dbm,eff_snr_db\n";
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    per.push_back({{"power_dbm", sweep[k]}, {"eff_snr_db", snr[k]}});
    csv += fmt(sweep[k]) + "," + fmt(snr[k]) + "\n";
  }
  json rep;
  rep["schema_version"] = kReportSchemaVersion;
  rep["config_digest"] = config_digest(c);
  rep["model_digest"] = "sha256:" + sha256_hex(model_text);
  rep["architecture"] = artifact_type(a);
  rep["per_power"] = per;
  rep["complexity"] = {{"real_mults_per_sample", cx.real_mults_per_sample}, {"total_taps", cx.total_taps}, {"rule", cx.rule}};
  rep["sparsity"] = {{"zeros", sp.zeros}, {"total", sp.total}, {"fraction", sp.fraction}, {"groups", c.training.reg.groups}};
  atomic_write(l.report_json(), rep.dump(2) + "\n");
  atomic_write(l.report_csv(), csv);
}

void cmd_export(const fs::path& out, const fs::path& file) {
  const Layout l{out};
  DirLock lock(out);
  const ModelArtifact a = load_artifact(l.model());
  atomic_write(file, serialize(a));
}

void cmd_import(const fs::path& out, const fs::path& file) {
  const Layout l{out};
  DirLock lock(out);
  const ModelArtifact a = load_artifact(file);
  save_artifact(l.model(), a);
}

std::string cmd_report(const fs::path& out) {
  const Layout l{out};
  DirLock lock(out);
  std::ostringstream os;
  os << "experiment: " << fs::absolute(out).string() << "\n";
  if (fs::exists(l.manifest())) {
    const json m = json::parse(read_file(l.manifest()));
    os << "dataset: " << m.at("splits").size() << " splits, data seed " << m.at("seeds").at("data") << "\n";
  }
  if (fs::exists(l.model())) {
    const ModelArtifact a = load_artifact(l.model());
    const Complexity cx = complexity_of(a);
    os << "model: " << artifact_type(a) << ", " << a.params.size() << " parameter blocks, " << cx.total_taps
       << " taps, " << cx.real_mults_per_sample << " real multiplications per sample\n";
    if (a.quantization) os << "quantized: " << a.quantization->bits << " bits\n";
  }
  if (fs::exists(l.history())) {
    std::istringstream h(read_file(l.history()));
    std::string line, last;
    std::size_t rows = 0;
    std::getline(h, line);
    while (std::getline(h, line))
      if (!line.empty()) {
        last = line;
        ++rows;
      }
    os << "training: " << rows << " iterations";
    if (rows) os << ", last row " << last;
    os << "\n";
  }
  if (fs::exists(l.report_json())) {
    const json r = json::parse(read_file(l.report_json()));
    os << "effective SNR:\n";
    for (const auto& p : r.at("per_power")) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "  %+6.2f dBm  %7.3f dB\n", p.at("power_dbm").get<double>(),
                    p.at("eff_snr_db").get<double>());
      os << buf;
    }
    os << "sparsity: " << r.at("sparsity").at("zeros") << " / " << r.at("sparsity").at("total") << "\n";
  }
  const std::string text = os.str();
  atomic_write(l.report_txt(), text);
  return text;
}

// ---- entry point -------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"Learned digital backpropagation experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir, file;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool resume = false;
  long stop_at = -1;

  auto common = [&](CLI::App* sc, bool needs_config) {
    auto* o = sc->add_option("--config", config_path, "experiment configuration (JSON)");
    if (needs_config) o->required();
    sc->add_option("--out", out_dir, "experiment directory (overrides output_dir)");
    sc->add_option("--seed", seed, "override the base seed");
    sc->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* sim = app.add_subcommand("simulate", "generate the dataset");
  common(sim, true);
  auto* trn = app.add_subcommand("train", "train the configured receiver");
  common(trn, true);
  trn->add_flag("--resume", resume, "continue from the last checkpoint");
  trn->add_option("--stop-at", stop_at, "stop after this many iterations (checkpoint kept)");
  auto* evl = app.add_subcommand("evaluate", "effective SNR over the power sweep");
  common(evl, true);
  auto* exq = app.add_subcommand("export", "write the model artifact to FILE");
  common(exq, false);
  exq->add_option("file", file, "destination")->required();
  auto* imp = app.add_subcommand("import", "verify FILE and install it as the model");
  common(imp, false);
  imp->add_option("file", file, "artifact to import")->required();
  auto* rep = app.add_subcommand("report", "summarize an experiment directory");
  common(rep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    std::optional<ExperimentConfig> cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
      if (seed) {
        cfg->seed = *seed;
        cfg->training.opt.seed = cfg->training_seed();
      }
    }
    fs::path out;
    if (!out_dir.empty()) out = out_dir;
    else if (cfg && cfg->output_dir) out = *cfg->output_dir;
    else throw ConfigError("no output directory: pass --out or set output_dir");

    if (*sim) {
      cmd_simulate(*cfg, out, threads);
    } else if (*trn) {
      const bool done = cmd_train(*cfg, out, {threads, resume, stop_at});
      if (!done) std::cout << "stopped before completion; resume with --resume\n";
    } else if (*evl) {
      cmd_evaluate(*cfg, out, threads);
    } else if (*exq) {
      cmd_export(out, file);
    } else if (*imp) {
      cmd_import(out, file);
    } else if (*rep) {
      std::cout << cmd_report(out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RangeError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}

}  // namespace ldbp::cli
