#include "ldbp/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ldbp/errors.hpp"

namespace ldbp::ad {

Tensor Tensor::real(std::size_t channels, std::size_t length) {
  Tensor t;
  t.channels = channels;
  t.is_complex = false;
  t.data.assign(channels * length, 0.0);
  return t;
}

Tensor Tensor::complex(std::size_t channels, std::size_t length) {
  Tensor t;
  t.channels = channels;
  t.is_complex = true;
  t.data.assign(channels * length * 2, 0.0);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t = real(1, 1);
  t.data[0] = v;
  return t;
}

Tensor Tensor::from_complex(std::span<const cplx> values) {
  Tensor t = complex(1, values.size());
  std::copy(values.begin(), values.end(), t.cch(0).begin());
  return t;
}

Tensor Tensor::from_complex_channels(const std::vector<std::vector<cplx>>& chans) {
  const std::size_t len = chans.empty() ? 0 : chans[0].size();
  Tensor t = complex(chans.size(), len);
  for (std::size_t c = 0; c < chans.size(); ++c) {
    if (chans[c].size() != len) throw ArgumentError("Tensor: ragged channels");
    std::copy(chans[c].begin(), chans[c].end(), t.cch(c).begin());
  }
  return t;
}

Tensor Tensor::from_real(std::span<const double> values) {
  Tensor t = real(1, values.size());
  std::copy(values.begin(), values.end(), t.data.begin());
  return t;
}

std::size_t Tensor::length() const {
  if (channels == 0) return 0;
  return data.size() / channels / width();
}

std::span<cplx> Tensor::cch(std::size_t c) {
  const std::size_t len = length();
  return {reinterpret_cast<cplx*>(data.data()) + c * len, len};
}

std::span<const cplx> Tensor::cch(std::size_t c) const {
  const std::size_t len = length();
  return {reinterpret_cast<const cplx*>(data.data()) + c * len, len};
}

std::span<double> Tensor::rch(std::size_t c) {
  const std::size_t len = length();
  return {data.data() + c * len, len};
}

std::span<const double> Tensor::rch(std::size_t c) const {
  const std::size_t len = length();
  return {data.data() + c * len, len};
}

std::vector<cplx> Tensor::complex_channel(std::size_t c) const {
  auto s = cch(c);
  return {s.begin(), s.end()};
}

double Tensor::item() const {
  if (is_complex || data.size() != 1) throw ContractViolation("Tensor::item: not a real scalar");
  return data[0];
}

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad, std::string_view name) {
  Node n;
  n.value = std::move(value);
  n.op = std::string(name);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, ReverseRule rule) {
  Node n;
  n.value = std::move(value);
  n.op = std::string(op);
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractViolation("Tape::record: input from another tape");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.has_rule = static_cast<bool>(rule);
  if (n.requires_grad) n.rule = std::move(rule);
  return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, ReverseRule rule) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(rule));
}

Var Tape::record_opaque(std::string_view op, Tensor value, std::initializer_list<Var> inputs) {
  return record(op, std::move(value), inputs, ReverseRule{});
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id()).value; }
bool Tape::requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
const std::string& Tape::op_name(Var v) const { return nodes_.at(v.id()).op; }

const Tensor* Tape::grad(Var v) const {
  if (v.id() >= grads_.size() || !grads_[v.id()]) return nullptr;
  return &*grads_[v.id()];
}

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.is_complex || lv.data.size() != 1) throw ContractViolation("backward: loss must be a real scalar");
  grads_.assign(nodes_.size(), std::nullopt);
  Tensor seed = Tensor::scalar(1.0);
  grads_[loss.id()] = std::move(seed);

  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!grads_[i] || n.inputs.empty() || !n.requires_grad) continue;
    if (!n.has_rule)
      throw ContractViolation("backward: operation '" + n.op + "' has no registered reverse rule");
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        in_grads.push_back(nullptr);
        continue;
      }
      if (!grads_[in]) {
        Tensor z;
        z.channels = src.value.channels;
        z.is_complex = src.value.is_complex;
        z.data.assign(src.value.data.size(), 0.0);
        grads_[in] = std::move(z);
      }
      in_grads.push_back(&*grads_[in]);
    }
    n.rule(*grads_[i], in_grads);
  }
}

// ---- generic ops -----------------------------------------------------------

Var channel(Var x, std::size_t c) {
  const Tensor& xv = x.value();
  if (c >= xv.channels) throw ArgumentError("channel: index out of range");
  const std::size_t w = xv.length() * xv.width();
  Tensor out;
  out.channels = 1;
  out.is_complex = xv.is_complex;
  out.data.assign(xv.data.begin() + static_cast<long>(c * w), xv.data.begin() + static_cast<long>((c + 1) * w));
  return x.tape().record("channel", std::move(out), {x}, [c, w](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t k = 0; k < w; ++k) gi[0]->data[c * w + k] += g.data[k];
  });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("stack: no inputs");
  const Tensor& first = parts[0].value();
  Tensor out;
  out.is_complex = first.is_complex;
  out.channels = 0;
  const std::size_t len = first.length();
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.is_complex != first.is_complex || v.length() != len) throw ArgumentError("stack: incompatible parts");
    offsets.push_back(out.data.size());
    out.data.insert(out.data.end(), v.data.begin(), v.data.end());
    out.channels += v.channels;
  }
  return parts[0].tape().record("stack", std::move(out), parts,
                                [offsets](const Tensor& g, std::span<Tensor* const> gi) {
                                  for (std::size_t i = 0; i < gi.size(); ++i) {
                                    if (!gi[i]) continue;
                                    for (std::size_t k = 0; k < gi[i]->data.size(); ++k)
                                      gi[i]->data[k] += g.data[offsets[i] + k];
                                  }
                                });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) throw ArgumentError("add: shape mismatch");
  Tensor out = av;
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += bv.data[k];
  return a.tape().record("add", std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi)
      if (t)
        for (std::size_t k = 0; k < t->data.size(); ++k) t->data[k] += g.data[k];
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return a.tape().record("scale", std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t k = 0; k < g.data.size(); ++k) gi[0]->data[k] += s * g.data[k];
  });
}

Var intensity(Var x) {
  const Tensor& xv = x.value();
  if (!xv.is_complex) throw ArgumentError("intensity: complex input required");
  const std::size_t len = xv.length();
  Tensor out = Tensor::real(xv.channels, len);
  for (std::size_t c = 0; c < xv.channels; ++c) {
    auto in = xv.cch(c);
    auto o = out.rch(c);
    for (std::size_t n = 0; n < len; ++n) o[n] = std::norm(in[n]);
  }
  return x.tape().record("intensity", std::move(out), {x}, [x](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    const Tensor& xv = x.value();
    for (std::size_t c = 0; c < xv.channels; ++c) {
      auto in = xv.cch(c);
      auto go = g.rch(c);
      auto gx = gi[0]->cch(c);
      for (std::size_t n = 0; n < in.size(); ++n) gx[n] += 2.0 * go[n] * in[n];
    }
  });
}

Var phase_rotate(Var x, Var phi, double sign) {
  const Tensor& xv = x.value();
  const Tensor& pv = phi.value();
  if (!xv.is_complex || pv.is_complex || xv.channels != pv.channels || xv.length() != pv.length())
    throw ArgumentError("phase_rotate: shape mismatch");
  Tensor out = xv;
  for (std::size_t c = 0; c < xv.channels; ++c) {
    auto o = out.cch(c);
    auto p = pv.rch(c);
    for (std::size_t n = 0; n < o.size(); ++n) o[n] *= std::polar(1.0, sign * p[n]);
  }
  return x.tape().record("phase_rotate", std::move(out), {x, phi},
                         [x, phi, sign](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& xv = x.value();
                           const Tensor& pv = phi.value();
                           for (std::size_t c = 0; c < xv.channels; ++c) {
                             auto gy = g.cch(c);
                             auto xx = xv.cch(c);
                             auto pp = pv.rch(c);
                             for (std::size_t n = 0; n < gy.size(); ++n) {
                               const cplx r = std::polar(1.0, sign * pp[n]);
                               if (gi[0]) gi[0]->cch(c)[n] += gy[n] * std::conj(r);
                               // dL/dphi = sign * Re(conj(g) * j * y)
                               if (gi[1])
                                 gi[1]->rch(c)[n] += sign * (std::conj(gy[n]) * cplx(0.0, 1.0) * xx[n] * r).real();
                             }
                           }
                         });
}

Var decimate(Var x, std::size_t factor, std::size_t offset) {
  const Tensor& xv = x.value();
  if (factor == 0) throw ArgumentError("decimate: factor must be >= 1");
  const std::size_t len = xv.length();
  const std::size_t out_len = offset < len ? (len - offset + factor - 1) / factor : 0;
  const std::size_t w = xv.width();
  Tensor out;
  out.channels = xv.channels;
  out.is_complex = xv.is_complex;
  out.data.assign(xv.channels * out_len * w, 0.0);
  for (std::size_t c = 0; c < xv.channels; ++c)
    for (std::size_t k = 0; k < out_len; ++k)
      for (std::size_t q = 0; q < w; ++q)
        out.data[(c * out_len + k) * w + q] = xv.data[(c * len + offset + k * factor) * w + q];
  return x.tape().record("decimate", std::move(out), {x},
                         [=](const Tensor& g, std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t c = 0; c < g.channels; ++c)
                             for (std::size_t k = 0; k < out_len; ++k)
                               for (std::size_t q = 0; q < w; ++q)
                                 gi[0]->data[(c * len + offset + k * factor) * w + q] +=
                                     g.data[(c * out_len + k) * w + q];
                         });
}

Var window(Var x, std::size_t begin, std::size_t len) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.length();
  if (begin + len > n) throw BoundsError("window: range exceeds tensor length");
  const std::size_t w = xv.width();
  Tensor out;
  out.channels = xv.channels;
  out.is_complex = xv.is_complex;
  out.data.resize(xv.channels * len * w);
  for (std::size_t c = 0; c < xv.channels; ++c)
    std::copy_n(xv.data.begin() + static_cast<long>((c * n + begin) * w), len * w,
                out.data.begin() + static_cast<long>(c * len * w));
  return x.tape().record("window", std::move(out), {x}, [=](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t k = 0; k < len * w; ++k) gi[0]->data[(c * n + begin) * w + k] += g.data[c * len * w + k];
  });
}

Var fir_real_fixed(Var x, std::vector<double> taps) {
  const Tensor& xv = x.value();
  if (!xv.is_complex) throw ArgumentError("fir_real_fixed: complex input required");
  const long n = static_cast<long>(xv.length());
  const long k = static_cast<long>(taps.size());
  const long c = (k - 1) / 2;
  Tensor out = Tensor::complex(xv.channels, static_cast<std::size_t>(n));
  for (std::size_t ch = 0; ch < xv.channels; ++ch) {
    auto in = xv.cch(ch);
    auto o = out.cch(ch);
    for (long i = 0; i < n; ++i) {
      cplx acc{};
      const long t_lo = std::max(0L, i + c - (n - 1));
      const long t_hi = std::min(k - 1, i + c);
      for (long t = t_lo; t <= t_hi; ++t) acc += taps[static_cast<std::size_t>(t)] * in[static_cast<std::size_t>(i + c - t)];
      o[static_cast<std::size_t>(i)] = acc;
    }
  }
  return x.tape().record("fir_real_fixed", std::move(out), {x},
                         [taps = std::move(taps), n, k, c](const Tensor& g, std::span<Tensor* const> gi) {
                           if (!gi[0]) return;
                           for (std::size_t ch = 0; ch < g.channels; ++ch) {
                             auto go = g.cch(ch);
                             auto gx = gi[0]->cch(ch);
                             for (long i = 0; i < n; ++i) {
                               const long t_lo = std::max(0L, i + c - (n - 1));
                               const long t_hi = std::min(k - 1, i + c);
                               for (long t = t_lo; t <= t_hi; ++t)
                                 gx[static_cast<std::size_t>(i + c - t)] += taps[static_cast<std::size_t>(t)] * go[static_cast<std::size_t>(i)];
                             }
                           }
                         });
}

Var complex_to_real(Var x) {
  const Tensor& xv = x.value();
  if (!xv.is_complex) throw ArgumentError("complex_to_real: complex input required");
  const std::size_t len = xv.length();
  Tensor out = Tensor::real(2 * xv.channels, len);
  for (std::size_t c = 0; c < xv.channels; ++c) {
    auto in = xv.cch(c);
    auto re = out.rch(2 * c);
    auto im = out.rch(2 * c + 1);
    for (std::size_t n = 0; n < len; ++n) {
      re[n] = in[n].real();
      im[n] = in[n].imag();
    }
  }
  return x.tape().record("complex_to_real", std::move(out), {x}, [len](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t c = 0; c < gi[0]->channels; ++c) {
      auto gx = gi[0]->cch(c);
      auto gre = g.rch(2 * c);
      auto gim = g.rch(2 * c + 1);
      for (std::size_t n = 0; n < len; ++n) gx[n] += cplx(gre[n], gim[n]);
    }
  });
}

Var real_to_complex(Var x) {
  const Tensor& xv = x.value();
  if (xv.is_complex || xv.channels % 2 != 0) throw ArgumentError("real_to_complex: even real channel count required");
  const std::size_t len = xv.length();
  Tensor out = Tensor::complex(xv.channels / 2, len);
  for (std::size_t c = 0; c < out.channels; ++c) {
    auto o = out.cch(c);
    auto re = xv.rch(2 * c);
    auto im = xv.rch(2 * c + 1);
    for (std::size_t n = 0; n < len; ++n) o[n] = cplx(re[n], im[n]);
  }
  return x.tape().record("real_to_complex", std::move(out), {x}, [len](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t c = 0; c < g.channels; ++c) {
      auto go = g.cch(c);
      auto gre = gi[0]->rch(2 * c);
      auto gim = gi[0]->rch(2 * c + 1);
      for (std::size_t n = 0; n < len; ++n) {
        gre[n] += go[n].real();
        gim[n] += go[n].imag();
      }
    }
  });
}

Var mimo_conv(Var in, Var w, std::size_t n_out, std::size_t taps) {
  const Tensor& iv = in.value();
  const Tensor& wv = w.value();
  const std::size_t n_in = iv.channels;
  if (iv.is_complex || wv.is_complex) throw ArgumentError("mimo_conv: real tensors required");
  if (wv.data.size() != n_out * n_in * taps) throw ArgumentError("mimo_conv: weight tensor has the wrong size");
  const long n = static_cast<long>(iv.length());
  const long L = static_cast<long>(taps);
  const long c = (L - 1) / 2;
  Tensor out = Tensor::real(n_out, static_cast<std::size_t>(n));
  for (std::size_t o = 0; o < n_out; ++o) {
    auto y = out.rch(o);
    for (std::size_t i = 0; i < n_in; ++i) {
      auto x = iv.rch(i);
      const double* wk = wv.data.data() + (o * n_in + i) * taps;
      for (long k = 0; k < L; ++k) {
        const double a = wk[k];
        if (a == 0.0) continue;
        const long lo = std::max(0L, k - c);
        const long hi = std::min(n, n + k - c);
        for (long m = lo; m < hi; ++m) y[static_cast<std::size_t>(m)] += a * x[static_cast<std::size_t>(m - k + c)];
      }
    }
  }
  return in.tape().record(
      "mimo_conv", std::move(out), {in, w}, [in, w, n_out, n_in, taps, n, L, c](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& iv = in.value();
        const Tensor& wv = w.value();
        for (std::size_t o = 0; o < n_out; ++o) {
          auto go = g.rch(o);
          for (std::size_t i = 0; i < n_in; ++i) {
            auto x = iv.rch(i);
            const std::size_t base = (o * n_in + i) * taps;
            for (long k = 0; k < L; ++k) {
              const long lo = std::max(0L, k - c);
              const long hi = std::min(n, n + k - c);
              if (gi[1]) {
                double acc = 0.0;
                for (long m = lo; m < hi; ++m) acc += go[static_cast<std::size_t>(m)] * x[static_cast<std::size_t>(m - k + c)];
                gi[1]->data[base + static_cast<std::size_t>(k)] += acc;
              }
              if (gi[0]) {
                const double a = wv.data[base + static_cast<std::size_t>(k)];
                if (a == 0.0) continue;
                auto gx = gi[0]->rch(i);
                for (long m = lo; m < hi; ++m) gx[static_cast<std::size_t>(m - k + c)] += a * go[static_cast<std::size_t>(m)];
              }
            }
          }
        }
      });
}

Var elementwise(std::string_view op, Var x, const std::function<double(double)>& f,
                const std::function<double(double)>& df) {
  Tensor out = x.value();
  for (double& v : out.data) v = f(v);
  return x.tape().record(op, std::move(out), {x}, [x, df](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    const Tensor& xv = x.value();
    for (std::size_t k = 0; k < g.data.size(); ++k) gi[0]->data[k] += df(xv.data[k]) * g.data[k];
  });
}

}  // namespace ldbp::ad
