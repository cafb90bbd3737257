#include "ldbp/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "ldbp/errors.hpp"

namespace ldbp {

namespace {

bool in_groups(const std::string& group, const std::vector<std::string>& groups) {
  return std::find(groups.begin(), groups.end(), group) != groups.end();
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---- losses ----------------------------------------------------------------

double mse_loss(const SymbolFrame& rx, const SymbolFrame& tx) {
  if (rx.size() == 0 || tx.size() == 0) throw ArgumentError("mse_loss: empty frame");
  if (rx.n_pols() != tx.n_pols() || rx.size() != tx.size()) throw ArgumentError("mse_loss: frame shapes differ");
  double acc = 0.0;
  for (std::size_t p = 0; p < rx.n_pols(); ++p)
    for (std::size_t k = 0; k < rx.size(); ++k) acc += std::norm(rx.pols[p][k] - tx.pols[p][k]);
  return acc / static_cast<double>(rx.size() * rx.n_pols());
}

double cma_loss(const ComplexSignal& sig, double modulus) {
  if (!(modulus > 0.0)) throw ArgumentError("cma_loss: modulus must be positive");
  double total = 0.0;
  for (const auto& p : sig.pols()) {
    double acc = 0.0;
    for (cplx v : p) {
      const double e = std::norm(v) - modulus;
      acc += e * e;
    }
    total += acc / static_cast<double>(p.size());
  }
  return total;
}

double cma_modulus(int order) {
  const auto pts = qam_constellation(order);
  double m2 = 0.0;
  double m4 = 0.0;
  for (cplx s : pts) {
    m2 += std::norm(s);
    m4 += std::norm(s) * std::norm(s);
  }
  return m4 / m2;
}

ad::Var mse_loss_op(ad::Var y, const ad::Tensor& target) {
  const ad::Tensor& yv = y.value();
  if (!yv.is_complex || !yv.same_shape(target)) throw ArgumentError("mse_loss_op: shape mismatch");
  const std::size_t count = yv.data.size() / 2;
  if (count == 0) throw ArgumentError("mse_loss_op: empty input");
  double acc = 0.0;
  for (std::size_t k = 0; k < yv.data.size(); ++k) {
    const double d = yv.data[k] - target.data[k];
    acc += d * d;
  }
  const double inv = 1.0 / static_cast<double>(count);
  return y.tape().record("mse_loss", ad::Tensor::scalar(acc * inv), {y},
                         [y, target, inv](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           if (!gi[0]) return;
                           const ad::Tensor& yv = y.value();
                           const double s = 2.0 * inv * g.data[0];
                           for (std::size_t k = 0; k < yv.data.size(); ++k)
                             gi[0]->data[k] += s * (yv.data[k] - target.data[k]);
                         });
}

ad::Var cma_loss_op(ad::Var y, double modulus) {
  if (!(modulus > 0.0)) throw ArgumentError("cma_loss_op: modulus must be positive");
  const ad::Tensor& yv = y.value();
  if (!yv.is_complex || yv.length() == 0) throw ArgumentError("cma_loss_op: non-empty complex input required");
  const double inv = 1.0 / static_cast<double>(yv.length());
  double total = 0.0;
  for (std::size_t c = 0; c < yv.channels; ++c)
    for (cplx v : yv.cch(c)) {
      const double e = std::norm(v) - modulus;
      total += e * e * inv;
    }
  return y.tape().record("cma_loss", ad::Tensor::scalar(total), {y},
                         [y, modulus, inv](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
                           if (!gi[0]) return;
                           const ad::Tensor& yv = y.value();
                           for (std::size_t c = 0; c < yv.channels; ++c) {
                             auto in = yv.cch(c);
                             auto gy = gi[0]->cch(c);
                             for (std::size_t n = 0; n < in.size(); ++n)
                               gy[n] += g.data[0] * inv * 4.0 * (std::norm(in[n]) - modulus) * in[n];
                           }
                         });
}

// ---- optimizer -------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("step_size: must be positive and finite");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (max_iterations < 0) throw ConfigError("max_iterations: must be >= 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor: must be in (0, 1]");
  if (decay_interval < 0) throw ConfigError("decay_interval: must be >= 0");
}

double OptimizerConfig::step_size_at(long iteration) const {
  long interval = decay_interval;
  if (interval == 0) interval = max_iterations / 3;
  if (interval <= 0) return step_size;
  return step_size * std::pow(decay_factor, static_cast<double>(iteration / interval));
}

bool ParamMask::empty() const {
  for (const auto& f : frozen)
    if (!f.empty()) return false;
  return true;
}

bool ParamMask::is_frozen(std::size_t param, std::size_t entry) const {
  return param < frozen.size() && entry < frozen[param].size() && frozen[param][entry] != 0;
}

void step(ParamSet& params, const GradRecord& grad, const OptimizerConfig& cfg, OptimizerState& state,
          const ParamMask* mask) {
  grad.check_compatible(params);
  const double alpha = cfg.step_size_at(state.steps);
  if (cfg.kind == OptimizerConfig::Kind::adam && state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  }
  const double t = static_cast<double>(state.steps + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].values;
    const auto& g = grad.values[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      if (mask && mask->is_frozen(i, k)) continue;
      if (cfg.kind == OptimizerConfig::Kind::sgd) {
        theta[k] -= alpha * g[k];
      } else {
        double& m = state.m[i][k];
        double& v = state.v[i][k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[k];
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[k] * g[k];
        theta[k] -= alpha * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
      }
    }
  }
  ++state.steps;
}

// ---- regularization and pruning -------------------------------------------

void RegularizerConfig::validate() const {
  if (!std::isfinite(l1_weight) || l1_weight < 0.0) throw ConfigError("l1_weight: must be finite and >= 0");
  if (!std::isfinite(prune_threshold) || prune_threshold < 0.0)
    throw ConfigError("prune_threshold: must be finite and >= 0");
}

double l1_penalty(const ParamSet& params, double lambda, const std::vector<std::string>& groups, GradRecord* grad) {
  if (lambda == 0.0) return 0.0;
  if (grad) grad->check_compatible(params);
  double acc = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!in_groups(params[i].group, groups)) continue;
    const auto& v = params[i].values;
    for (std::size_t k = 0; k < v.size(); ++k) {
      acc += std::abs(v[k]);
      if (grad) grad->values[i][k] += lambda * sgn(v[k]);
    }
  }
  return lambda * acc;
}

PruneResult prune(const ParamSet& params, double eps, const std::vector<std::string>& groups) {
  if (!(eps >= 0.0)) throw ArgumentError("prune: threshold must be >= 0");
  PruneResult r;
  r.params = params;
  r.mask.frozen.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = r.params[i];
    if (!in_groups(p.group, groups)) continue;
    auto& f = r.mask.frozen[i];
    f.assign(p.values.size(), 0);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      if (std::abs(p.values[k]) < eps) p.values[k] = 0.0;
      if (p.values[k] == 0.0) {
        p.values[k] = 0.0;
        f[k] = 1;
        ++r.zeros;
      }
      ++r.total;
    }
  }
  r.sparsity = r.total == 0 ? 0.0 : static_cast<double>(r.zeros) / static_cast<double>(r.total);
  return r;
}

// ---- fake quantization -----------------------------------------------------

void FakeQuantConfig::validate() const {
  if (bits < 2 || bits > 16) throw ConfigError("bits: must be in [2, 16]");
}

double quant_step(int bits, double scale) {
  if (bits < 2 || bits > 16) throw ConfigError("fake quantization: bits must be in [2, 16]");
  return scale / static_cast<double>((1 << (bits - 1)) - 1);
}

double fake_quantize(double x, int bits, double scale) {
  const double delta = quant_step(bits, scale);
  if (!(delta > 0.0)) return 0.0;
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  const double code = std::clamp(std::round(x / delta), -qmax, qmax);
  return code * delta;
}

double max_abs_scale(const Param& p) {
  double s = 0.0;
  for (double v : p.values) s = std::max(s, std::abs(v));
  return s;
}

ParamSet quantize_params(const ParamSet& params, const FakeQuantConfig& cfg) {
  cfg.validate();
  ParamSet out = params;
  for (auto& p : out) {
    if (!in_groups(p.group, cfg.groups)) continue;
    const double s = max_abs_scale(p);
    for (double& v : p.values) v = fake_quantize(v, cfg.bits, s);
  }
  return out;
}

ad::Var fake_quantize_op(ad::Var x, int bits, double scale) {
  ad::Tensor out = x.value();
  for (double& v : out.data) v = fake_quantize(v, bits, scale);
  return x.tape().record("fake_quantize", std::move(out), {x}, [x, scale](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
    if (!gi[0]) return;
    const ad::Tensor& xv = x.value();
    for (std::size_t k = 0; k < g.data.size(); ++k)
      if (std::abs(xv.data[k]) <= scale) gi[0]->data[k] += g.data[k];
  });
}

ParamVars bind(ad::Tape& tape, const ParamSet& params, const FakeQuantConfig& fq) {
  ParamVars vars;
  vars.set = &params;
  for (const auto& p : params) {
    ad::Var leaf = tape.leaf(p.as_tensor(), true, p.name);
    vars.leaves.push_back(leaf);
    if (fq.enabled && in_groups(p.group, fq.groups))
      vars.used.push_back(fake_quantize_op(leaf, fq.bits, max_abs_scale(p)));
    else
      vars.used.push_back(leaf);
  }
  return vars;
}

// ---- training loop ---------------------------------------------------------

TrainState initial_state(const ParamSet& params) {
  TrainState s;
  s.params = params;
  s.best = params;
  return s;
}

BatchResult evaluate_batch(const TrainProblem& problem, const TrainConfig& cfg, const ParamSet& params, long iteration) {
  const std::size_t batch = cfg.opt.batch_size;
  std::vector<double> losses(batch, 0.0);
  std::vector<GradRecord> grads(batch);
  auto run = [&](std::size_t b) {
    ad::Tape tape;
    ParamVars vars = bind(tape, params, cfg.fq);
    ad::Var loss = problem.element_loss(tape, vars, iteration, b);
    losses[b] = loss.value().item();
    tape.backward(loss);
    grads[b] = vars.gradients();
  };
  const std::size_t threads = std::min(std::max<std::size_t>(cfg.threads, 1), batch);
  if (threads == 1) {
    for (std::size_t b = 0; b < batch; ++b) run(b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t b = t; b < batch; b += threads) run(b);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  // Fixed-order reduction keeps results independent of the thread count.
  BatchResult r;
  r.grad = GradRecord::zeros_like(params);
  for (std::size_t b = 0; b < batch; ++b) {
    r.data_loss += losses[b];
    r.grad.accumulate(grads[b]);
  }
  const double inv = 1.0 / static_cast<double>(batch);
  r.data_loss *= inv;
  r.grad.scale(inv);
  r.penalty = l1_penalty(params, cfg.reg.l1_weight, cfg.reg.groups, &r.grad);
  return r;
}

void train(const TrainProblem& problem, const TrainConfig& cfg, TrainState& state, long stop_at) {
  cfg.opt.validate();
  cfg.reg.validate();
  cfg.fq.validate();
  if (!problem.element_loss) throw ContractViolation("train: no loss function");
  const long stop = stop_at < 0 ? cfg.opt.max_iterations : std::min(stop_at, cfg.opt.max_iterations);
  const auto t0 = std::chrono::steady_clock::now();
  const bool validated = static_cast<bool>(problem.validation);

  auto offer = [&](double score) {
    if (!state.has_best || score < state.best_score) {
      state.best = state.params;
      state.best_score = score;
      state.has_best = true;
    }
  };
  if (validated && !state.has_best) offer(problem.validation(state.params));

  while (state.iteration < stop) {
    BatchResult br = evaluate_batch(problem, cfg, state.params, state.iteration);
    const double total = br.data_loss + br.penalty;
    if (!std::isfinite(total) || !std::isfinite(br.grad.max_abs()))
      throw DivergenceError("train: non-finite loss or gradient at iteration " + std::to_string(state.iteration));
    if (!validated) offer(total);
    step(state.params, br.grad, cfg.opt, state.opt, &state.mask);
    HistoryRow row;
    row.iteration = state.iteration;
    row.data_loss = br.data_loss;
    row.l1_penalty = br.penalty;
    row.total_loss = total;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(row);
    ++state.iteration;
    if (validated) {
      const bool periodic = problem.validate_every > 0 && state.iteration % problem.validate_every == 0;
      if (periodic || state.iteration == cfg.opt.max_iterations) {
        const double score = problem.validation(state.params);
        if (!std::isfinite(score))
          throw DivergenceError("train: non-finite validation score at iteration " + std::to_string(state.iteration));
        offer(score);
      }
    }
  }
}

}  // namespace ldbp
