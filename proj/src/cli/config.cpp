#include "ldbp/cli/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ldbp/errors.hpp"
#include "ldbp/rng.hpp"

namespace ldbp::cli {

namespace {

constexpr std::uint64_t kDataSeedKey = 0x64617461;   // "data"
constexpr std::uint64_t kTrainSeedKey = 0x747261696e;  // "train"

// Strict object reader: every key must be consumed, types are checked and
// errors carry the dotted key path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string key_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }

  const json& raw(const std::string& k) {
    seen_.insert(k);
    if (!j_.contains(k)) throw ConfigError(key_path(k) + ": missing required key");
    return j_.at(k);
  }

  /// Marks an optional key that is absent or null as accepted.
  void skip(const std::string& k) { seen_.insert(k); }

  Reader object(const std::string& k) { return Reader(raw(k), key_path(k)); }

  double number(const std::string& k, double def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number()) throw ConfigError(key_path(k) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(key_path(k) + ": must be finite");
    return d;
  }

  std::optional<double> opt_number(const std::string& k) {
    seen_.insert(k);
    if (!has(k)) return std::nullopt;
    return number(k, 0.0);
  }

  long integer(const std::string& k, long def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_integer()) throw ConfigError(key_path(k) + ": expected an integer");
    return v.get<long>();
  }

  long count(const std::string& k, long def, long min) {
    const long v = integer(k, def);
    if (v < min) throw ConfigError(key_path(k) + ": must be >= " + std::to_string(min));
    return v;
  }

  std::uint64_t seed(const std::string& k, std::uint64_t def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_unsigned()) throw ConfigError(key_path(k) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& k, bool def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_boolean()) throw ConfigError(key_path(k) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& k, const std::string& def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_string()) throw ConfigError(key_path(k) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<std::string> strings(const std::string& k, const std::vector<std::string>& def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array()) throw ConfigError(key_path(k) + ": expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(key_path(k) + ": expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::vector<long> integers(const std::string& k, const std::vector<long>& def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array() || v.empty()) throw ConfigError(key_path(k) + ": expected a non-empty array of integers");
    std::vector<long> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(key_path(k) + ": expected a non-empty array of integers");
      out.push_back(e.get<long>());
    }
    return out;
  }

  std::vector<double> numbers(const std::string& k, const std::vector<double>& def) {
    seen_.insert(k);
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array() || v.empty()) throw ConfigError(key_path(k) + ": expected a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(key_path(k) + ": expected a non-empty array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void guard(const std::string& key, F&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(key + "." + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

Architecture parse_arch(const std::string& key, const std::string& s) {
  if (s == "linear") return Architecture::linear;
  if (s == "dbp") return Architecture::dbp;
  if (s == "subband_dbp") return Architecture::subband_dbp;
  if (s == "pmd_chain") return Architecture::pmd_chain;
  if (s == "mimo_fir") return Architecture::mimo_fir;
  throw ConfigError(key + ": unknown architecture '" + s + "'");
}

std::string order_name(StageOrder o) {
  return o == StageOrder::rotation_then_fd ? "rotation_then_fd" : "fd_then_rotation";
}

std::vector<double> default_sweep() {
  std::vector<double> p;
  for (int d = -6; d <= 6; ++d) p.push_back(d);
  return p;
}

void check_groups(const std::string& key, const std::vector<std::string>& g) {
  static const std::set<std::string> known{groups::kCdTaps, groups::kNlScale, groups::kTensor,
                                           groups::kRotation, groups::kFdTaps,  groups::kMimo};
  for (const auto& s : g)
    if (!known.count(s)) throw ConfigError(key + ": unknown parameter group '" + s + "'");
}

exp::Scenario parse_scenario(Reader r) {
  exp::Scenario s;
  {
    Reader f = r.object("fiber");
    s.fiber.beta2_ps2_per_km = f.number("beta2_ps2_per_km", s.fiber.beta2_ps2_per_km);
    s.fiber.gamma_per_w_per_km = f.number("gamma_per_w_per_km", s.fiber.gamma_per_w_per_km);
    s.fiber.alpha_db_per_km = f.number("alpha_db_per_km", s.fiber.alpha_db_per_km);
    s.fiber.span_length_km = f.number("span_length_km", s.fiber.span_length_km);
    s.fiber.n_spans = static_cast<int>(f.count("n_spans", s.fiber.n_spans, 1));
    f.finish();
  }
  s.fiber_enabled = r.boolean("fiber_enabled", s.fiber_enabled);
  s.symbol_rate_hz = r.number("symbol_rate_hz", s.symbol_rate_hz);
  s.modulation_order = static_cast<int>(r.integer("modulation_order", s.modulation_order));
  s.rolloff = r.number("rolloff", s.rolloff);
  s.tx_sps = static_cast<int>(r.count("tx_samples_per_symbol", s.tx_sps, 1));
  s.rx_sps = static_cast<int>(r.count("rx_samples_per_symbol", s.rx_sps, 1));
  s.rrc_span_symbols = static_cast<int>(r.count("rrc_span_symbols", s.rrc_span_symbols, 2));
  s.steps_per_span = static_cast<int>(r.count("steps_per_span", s.steps_per_span, 1));
  s.n_pols = static_cast<std::size_t>(r.count("n_pols", static_cast<long>(s.n_pols), 1));
  s.amplifier_noise = r.boolean("amplifier_noise", s.amplifier_noise);
  s.noise_figure_db = r.number("noise_figure_db", s.noise_figure_db);
  s.receiver_snr_db = r.opt_number("receiver_snr_db");
  s.frame_symbols = static_cast<std::size_t>(r.count("frame_symbols", static_cast<long>(s.frame_symbols), 16));
  if (r.has("pmd")) {
    Reader p = r.object("pmd");
    exp::PmdSpec ps;
    ps.sections = static_cast<int>(p.count("sections", ps.sections, 1));
    ps.mean_dgd_symbols = p.number("mean_dgd_symbols", ps.mean_dgd_symbols);
    ps.seed = p.seed("seed", ps.seed);
    p.finish();
    s.pmd = ps;
  } else {
    r.skip("pmd");
  }
  r.finish();
  s.validate();
  return s;
}

}  // namespace

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::linear: return "linear";
    case Architecture::dbp: return "dbp";
    case Architecture::subband_dbp: return "subband_dbp";
    case Architecture::pmd_chain: return "pmd_chain";
    case Architecture::mimo_fir: return "mimo_fir";
  }
  return "unknown";
}

std::uint64_t ExperimentConfig::data_seed() const { return keyed_seed(seed, {kDataSeedKey}); }
std::uint64_t ExperimentConfig::training_seed() const { return keyed_seed(seed, {kTrainSeedKey}); }

exp::Scenario effective_scenario(const ExperimentConfig& c) {
  exp::Scenario s = c.scenario;
  s.seed = c.data_seed();
  return s;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Reader top(j, "");
  c.schema_version = static_cast<int>(top.integer("schema_version", -1));
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", found " +
                      std::to_string(c.schema_version));
  c.seed = top.seed("seed", c.seed);
  if (top.has("output_dir")) c.output_dir = top.string("output_dir", "");
  else top.skip("output_dir");

  c.scenario = parse_scenario(top.object("scenario"));

  if (top.has("dataset")) {
    Reader d = top.object("dataset");
    c.dataset.train_frames = static_cast<std::size_t>(d.count("train_frames", 4, 0));
    c.dataset.validation_frames = static_cast<std::size_t>(d.count("validation_frames", 2, 0));
    c.dataset.eval_frames = static_cast<std::size_t>(d.count("eval_frames", 2, 1));
    c.dataset.train_power_dbm = d.number("train_power_dbm", 0.0);
    c.dataset.power_sweep_dbm = d.numbers("power_sweep_dbm", default_sweep());
    d.finish();
  } else {
    top.skip("dataset");
  }
  if (c.dataset.power_sweep_dbm.empty()) c.dataset.power_sweep_dbm = default_sweep();

  {
    Reader r = top.object("receiver");
    c.receiver.architecture = parse_arch(r.key_path("architecture"), r.string("architecture", "dbp"));
    const std::string mode = r.string("adapt_mode", "supervised");
    if (mode == "supervised") c.receiver.adapt_mode = AdaptConfig::Mode::supervised;
    else if (mode == "cma") c.receiver.adapt_mode = AdaptConfig::Mode::cma;
    else throw ConfigError(r.key_path("adapt_mode") + ": expected 'supervised' or 'cma'");
    if (r.has("dbp")) {
      Reader d = r.object("dbp");
      c.receiver.dbp.steps = static_cast<int>(d.count("steps", c.receiver.dbp.steps, 1));
      std::vector<long> t = d.integers("taps", {5, 3});
      c.receiver.dbp.taps.assign(t.begin(), t.end());
      for (int k : c.receiver.dbp.taps)
        if (k < 1 || k % 2 == 0) throw ConfigError(d.key_path("taps") + ": tap counts must be odd and positive");
      c.receiver.dbp.band_fraction = d.number("band_fraction", 1.0);
      if (!(c.receiver.dbp.band_fraction > 0 && c.receiver.dbp.band_fraction <= 1))
        throw ConfigError(d.key_path("band_fraction") + ": must lie in (0, 1]");
      c.receiver.dbp.out_of_band_weight = d.number("out_of_band_weight", 0.0);
      if (c.receiver.dbp.out_of_band_weight < 0) throw ConfigError(d.key_path("out_of_band_weight") + ": must be >= 0");
      d.finish();
    } else {
      r.skip("dbp");
    }
    if (r.has("subband")) {
      Reader s = r.object("subband");
      auto& a = c.receiver.subband;
      a.n_subbands = static_cast<int>(s.count("n_subbands", a.n_subbands, 1));
      a.oversampling = static_cast<int>(s.count("oversampling", a.oversampling, 1));
      a.prototype_rolloff = s.number("prototype_rolloff", a.prototype_rolloff);
      a.prototype_span_symbols = static_cast<int>(s.count("prototype_span_symbols", a.prototype_span_symbols, 2));
      a.steps = static_cast<int>(s.count("steps", a.steps, 1));
      a.band_taps = static_cast<std::size_t>(s.count("band_taps", static_cast<long>(a.band_taps), 1));
      if (a.band_taps % 2 == 0) throw ConfigError(s.key_path("band_taps") + ": must be odd");
      std::vector<long> st = s.integers("stage_taps", {13});
      a.stage_taps.clear();
      for (long v : st) {
        if (v < 1 || v % 2 == 0) throw ConfigError(s.key_path("stage_taps") + ": tap counts must be odd and positive");
        a.stage_taps.push_back(static_cast<std::size_t>(v));
      }
      a.fit_rolloff = s.number("fit_rolloff", a.fit_rolloff);
      s.finish();
      guard(r.key_path("subband"), [&] {
        FilterBankConfig::rrc(a.n_subbands, a.prototype_rolloff, a.prototype_span_symbols).validate();
      });
    } else {
      r.skip("subband");
    }
    if (r.has("pmd")) {
      Reader p = r.object("pmd");
      if (p.has("stages")) c.receiver.pmd.stages = static_cast<int>(p.count("stages", 1, 1));
      else p.skip("stages");
      c.receiver.pmd.fd_taps = static_cast<int>(p.count("fd_taps", c.receiver.pmd.fd_taps, 1));
      if (c.receiver.pmd.fd_taps % 2 == 0) throw ConfigError(p.key_path("fd_taps") + ": must be odd");
      const std::string o = p.string("order", "rotation_then_fd");
      if (o == "rotation_then_fd") c.receiver.pmd.order = StageOrder::rotation_then_fd;
      else if (o == "fd_then_rotation") c.receiver.pmd.order = StageOrder::fd_then_rotation;
      else throw ConfigError(p.key_path("order") + ": expected 'fd_then_rotation' or 'rotation_then_fd'");
      p.finish();
    } else {
      r.skip("pmd");
    }
    if (r.has("mimo")) {
      Reader m = r.object("mimo");
      c.receiver.mimo.taps = static_cast<std::size_t>(m.count("taps", static_cast<long>(c.receiver.mimo.taps), 1));
      if (c.receiver.mimo.taps % 2 == 0) throw ConfigError(m.key_path("taps") + ": must be odd");
      m.finish();
    } else {
      r.skip("mimo");
    }
    r.finish();
    const bool dual = c.scenario.n_pols == 2;
    if ((c.receiver.architecture == Architecture::pmd_chain || c.receiver.architecture == Architecture::mimo_fir) && !dual)
      throw ConfigError("receiver.architecture: " + to_string(c.receiver.architecture) + " requires scenario.n_pols = 2");
  }

  if (top.has("training")) {
    Reader t = top.object("training");
    auto& tb = c.training;
    if (t.has("optimizer")) {
      Reader o = t.object("optimizer");
      const std::string kind = o.string("kind", "adam");
      if (kind == "adam") tb.opt.kind = OptimizerConfig::Kind::adam;
      else if (kind == "sgd") tb.opt.kind = OptimizerConfig::Kind::sgd;
      else throw ConfigError(o.key_path("kind") + ": expected 'adam' or 'sgd'");
      tb.opt.step_size = o.number("step_size", tb.opt.step_size);
      tb.opt.decay_factor = o.number("decay_factor", tb.opt.decay_factor);
      tb.opt.decay_interval = o.count("decay_interval", tb.opt.decay_interval, 0);
      tb.opt.batch_size = static_cast<std::size_t>(o.count("batch_size", static_cast<long>(tb.opt.batch_size), 1));
      tb.opt.max_iterations = o.count("max_iterations", tb.opt.max_iterations, 0);
      tb.opt.beta1 = o.number("beta1", tb.opt.beta1);
      tb.opt.beta2 = o.number("beta2", tb.opt.beta2);
      tb.opt.epsilon = o.number("epsilon", tb.opt.epsilon);
      o.finish();
      guard(t.key_path("optimizer"), [&] {
        tb.opt.validate();
      });
    } else {
      t.skip("optimizer");
    }
    if (t.has("regularizer")) {
      Reader g = t.object("regularizer");
      tb.reg.l1_weight = g.number("l1_weight", tb.reg.l1_weight);
      tb.reg.prune_threshold = g.number("prune_threshold", tb.reg.prune_threshold);
      tb.reg.groups = g.strings("groups", tb.reg.groups);
      check_groups(g.key_path("groups"), tb.reg.groups);
      g.finish();
      guard(t.key_path("regularizer"), [&] {
        tb.reg.validate();
      });
    } else {
      t.skip("regularizer");
    }
    if (t.has("quantizer")) {
      Reader q = t.object("quantizer");
      tb.fq.enabled = q.boolean("enabled", tb.fq.enabled);
      tb.fq.bits = static_cast<int>(q.integer("bits", tb.fq.bits));
      tb.fq.groups = q.strings("groups", tb.fq.groups);
      check_groups(q.key_path("groups"), tb.fq.groups);
      q.finish();
      guard(t.key_path("quantizer"), [&] {
        tb.fq.validate();
      });
    } else {
      t.skip("quantizer");
    }
    tb.window.symbols = static_cast<std::size_t>(t.count("window_symbols", static_cast<long>(tb.window.symbols), 1));
    tb.window.guard_symbols =
        static_cast<std::size_t>(t.count("guard_symbols", static_cast<long>(tb.window.guard_symbols), 0));
    tb.validate_every = t.count("validate_every", tb.validate_every, 0);
    tb.checkpoint_every = t.count("checkpoint_every", tb.checkpoint_every, 0);
    t.finish();
  } else {
    top.skip("training");
  }
  top.finish();
  c.training.opt.seed = c.training_seed();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json scenario_json(const exp::Scenario& s) {
  json j;
  j["fiber"] = {{"beta2_ps2_per_km", s.fiber.beta2_ps2_per_km},
                {"gamma_per_w_per_km", s.fiber.gamma_per_w_per_km},
                {"alpha_db_per_km", s.fiber.alpha_db_per_km},
                {"span_length_km", s.fiber.span_length_km},
                {"n_spans", s.fiber.n_spans}};
  j["fiber_enabled"] = s.fiber_enabled;
  j["symbol_rate_hz"] = s.symbol_rate_hz;
  j["modulation_order"] = s.modulation_order;
  j["rolloff"] = s.rolloff;
  j["tx_samples_per_symbol"] = s.tx_sps;
  j["rx_samples_per_symbol"] = s.rx_sps;
  j["rrc_span_symbols"] = s.rrc_span_symbols;
  j["steps_per_span"] = s.steps_per_span;
  j["n_pols"] = s.n_pols;
  j["amplifier_noise"] = s.amplifier_noise;
  j["noise_figure_db"] = s.noise_figure_db;
  j["receiver_snr_db"] = s.receiver_snr_db ? json(*s.receiver_snr_db) : json(nullptr);
  j["frame_symbols"] = s.frame_symbols;
  if (s.pmd)
    j["pmd"] = {{"sections", s.pmd->sections}, {"mean_dgd_symbols", s.pmd->mean_dgd_symbols}, {"seed", s.pmd->seed}};
  else
    j["pmd"] = nullptr;
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir ? json(*c.output_dir) : json(nullptr);
  j["scenario"] = scenario_json(c.scenario);
  j["dataset"] = {{"train_frames", c.dataset.train_frames},
                  {"validation_frames", c.dataset.validation_frames},
                  {"eval_frames", c.dataset.eval_frames},
                  {"train_power_dbm", c.dataset.train_power_dbm},
                  {"power_sweep_dbm", c.dataset.power_sweep_dbm}};
  const auto& r = c.receiver;
  json rec;
  rec["architecture"] = to_string(r.architecture);
  rec["adapt_mode"] = r.adapt_mode == AdaptConfig::Mode::cma ? "cma" : "supervised";
  rec["dbp"] = {{"steps", r.dbp.steps},
                {"taps", r.dbp.taps},
                {"band_fraction", r.dbp.band_fraction},
                {"out_of_band_weight", r.dbp.out_of_band_weight}};
  rec["subband"] = {{"n_subbands", r.subband.n_subbands},
                    {"oversampling", r.subband.oversampling},
                    {"prototype_rolloff", r.subband.prototype_rolloff},
                    {"prototype_span_symbols", r.subband.prototype_span_symbols},
                    {"steps", r.subband.steps},
                    {"band_taps", r.subband.band_taps},
                    {"stage_taps", r.subband.stage_taps},
                    {"fit_rolloff", r.subband.fit_rolloff}};
  rec["pmd"] = {{"stages", r.pmd.stages ? json(*r.pmd.stages) : json(nullptr)},
                {"fd_taps", r.pmd.fd_taps},
                {"order", order_name(r.pmd.order)}};
  rec["mimo"] = {{"taps", r.mimo.taps}};
  j["receiver"] = rec;
  const auto& t = c.training;
  j["training"] = {
      {"optimizer",
       {{"kind", t.opt.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd"},
        {"step_size", t.opt.step_size},
        {"decay_factor", t.opt.decay_factor},
        {"decay_interval", t.opt.decay_interval},
        {"batch_size", t.opt.batch_size},
        {"max_iterations", t.opt.max_iterations},
        {"beta1", t.opt.beta1},
        {"beta2", t.opt.beta2},
        {"epsilon", t.opt.epsilon}}},
      {"regularizer",
       {{"l1_weight", t.reg.l1_weight}, {"prune_threshold", t.reg.prune_threshold}, {"groups", t.reg.groups}}},
      {"quantizer", {{"enabled", t.fq.enabled}, {"bits", t.fq.bits}, {"groups", t.fq.groups}}},
      {"window_symbols", t.window.symbols},
      {"guard_symbols", t.window.guard_symbols},
      {"validate_every", t.validate_every},
      {"checkpoint_every", t.checkpoint_every}};
  return j;
}

}  // namespace ldbp::cli
