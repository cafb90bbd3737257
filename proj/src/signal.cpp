#include "ldbp/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ldbp/errors.hpp"
#include "ldbp/rng.hpp"

namespace ldbp {

SamplingGrid::SamplingGrid(double sample_rate, std::size_t n_samples, std::size_t samples_per_symbol)
    : sample_rate_(sample_rate), n_samples_(n_samples), sps_(samples_per_symbol) {
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate))
    throw ArgumentError("SamplingGrid: sample_rate must be positive");
  if (n_samples == 0) throw ArgumentError("SamplingGrid: n_samples must be positive");
  if (samples_per_symbol == 0) throw ArgumentError("SamplingGrid: samples_per_symbol must be >= 1");
  if (n_samples % samples_per_symbol != 0)
    throw ArgumentError("SamplingGrid: n_samples must be a multiple of samples_per_symbol");
}

ComplexSignal::ComplexSignal(SamplingGrid grid, std::vector<cplx> pol_x) : grid_(grid) {
  pols_.push_back(std::move(pol_x));
  validate();
}

ComplexSignal::ComplexSignal(SamplingGrid grid, std::vector<cplx> pol_x, std::vector<cplx> pol_y)
    : grid_(grid) {
  pols_.push_back(std::move(pol_x));
  pols_.push_back(std::move(pol_y));
  validate();
}

ComplexSignal::ComplexSignal(SamplingGrid grid, std::vector<std::vector<cplx>> pols)
    : grid_(grid), pols_(std::move(pols)) {
  validate();
}

ComplexSignal ComplexSignal::zeros(SamplingGrid grid, std::size_t n_pols) {
  return ComplexSignal(grid, std::vector<std::vector<cplx>>(n_pols, std::vector<cplx>(grid.n_samples())));
}

void ComplexSignal::validate() const {
  if (pols_.empty() || pols_.size() > 2)
    throw ArgumentError("ComplexSignal: one or two polarizations required");
  for (const auto& p : pols_) {
    if (p.size() != grid_.n_samples())
      throw ArgumentError("ComplexSignal: polarization length " + std::to_string(p.size()) +
                          " does not match grid n_samples " + std::to_string(grid_.n_samples()));
  }
}

std::span<const cplx> ComplexSignal::pol_y() const {
  if (!dual_pol()) throw ArgumentError("ComplexSignal: no y polarization");
  return pols_[1];
}

double ComplexSignal::energy() const {
  double e = 0.0;
  for (const auto& p : pols_)
    for (auto v : p) e += std::norm(v);
  return e;
}

double ComplexSignal::mean_power() const { return energy() / static_cast<double>(size()); }

SymbolFrame SymbolFrame::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw BoundsError("SymbolFrame::slice: range out of bounds");
  SymbolFrame out;
  out.modulation_order = 0;
  out.normalized = normalized;
  for (const auto& p : pols) out.pols.emplace_back(p.begin() + static_cast<long>(begin), p.begin() + static_cast<long>(end));
  return out;
}

namespace {

int bits_per_axis(int order) {
  switch (order) {
    case 4: return 1;
    case 16: return 2;
    case 64: return 3;
    default: throw ConfigError("unsupported QAM order " + std::to_string(order) + " (use 4, 16 or 64)");
  }
}

int gray_to_binary(int g) {
  int b = 0;
  for (; g != 0; g >>= 1) b ^= g;
  return b;
}

// Label 0 sits on the positive corner; Gray labelling along each axis.
double axis_level(int gray_bits, int bits) {
  const int levels = 1 << bits;
  return static_cast<double>(levels - 1 - 2 * gray_to_binary(gray_bits));
}

}  // namespace

std::vector<cplx> qam_constellation(int order) {
  const int b = bits_per_axis(order);
  const double es = 2.0 * (order - 1) / 3.0;
  const double norm = 1.0 / std::sqrt(es);
  std::vector<cplx> pts(static_cast<std::size_t>(order));
  for (int idx = 0; idx < order; ++idx) {
    const int i_bits = idx >> b;
    const int q_bits = idx & ((1 << b) - 1);
    pts[static_cast<std::size_t>(idx)] = cplx(axis_level(i_bits, b), axis_level(q_bits, b)) * norm;
  }
  return pts;
}

SymbolFrame qam_map(std::span<const int> indices, int order) {
  const auto table = qam_constellation(order);
  SymbolFrame f;
  f.modulation_order = order;
  f.normalized = true;
  f.pols.emplace_back();
  f.pols[0].reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= order)
      throw ArgumentError("qam_map: label " + std::to_string(idx) + " outside [0, order)");
    f.pols[0].push_back(table[static_cast<std::size_t>(idx)]);
  }
  return f;
}

SymbolFrame random_symbols(std::uint64_t seed, std::size_t n, int order, std::size_t n_pols) {
  const auto table = qam_constellation(order);
  SymbolFrame f;
  f.modulation_order = order;
  f.normalized = true;
  for (std::size_t p = 0; p < n_pols; ++p) {
    auto rng = keyed_rng(seed, {p});
    std::uniform_int_distribution<int> pick(0, order - 1);
    std::vector<cplx> s(n);
    for (auto& v : s) v = table[static_cast<std::size_t>(pick(rng))];
    f.pols.push_back(std::move(s));
  }
  return f;
}

std::vector<double> rrc_taps(double rolloff, int span_symbols, int sps) {
  if (!(rolloff > 0.0 && rolloff <= 1.0)) throw ConfigError("rrc_taps: rolloff must lie in (0, 1]");
  if (span_symbols <= 0 || span_symbols % 2 != 0)
    throw ArgumentError("rrc_taps: span_symbols must be a positive even integer");
  if (sps < 1) throw ArgumentError("rrc_taps: sps must be >= 1");

  const double pi = std::numbers::pi;
  const double b = rolloff;
  const int n = span_symbols * sps + 1;
  const int c = n / 2;
  std::vector<double> h(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double t = static_cast<double>(k - c) / sps;
    double v;
    if (k == c) {
      v = 1.0 - b + 4.0 * b / pi;
    } else if (std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-12) {
      v = b / std::sqrt(2.0) *
          ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * b)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * b)));
    } else {
      const double num = std::sin(pi * t * (1.0 - b)) + 4.0 * b * t * std::cos(pi * t * (1.0 + b));
      const double den = pi * t * (1.0 - (4.0 * b * t) * (4.0 * b * t));
      v = num / den;
    }
    h[static_cast<std::size_t>(k)] = v;
  }
  // Mirror to make the symmetry exact regardless of trig rounding.
  for (int k = 0; k < c; ++k) h[static_cast<std::size_t>(n - 1 - k)] = h[static_cast<std::size_t>(k)];
  double e = 0.0;
  for (double v : h) e += v * v;
  const double s = 1.0 / std::sqrt(e);
  for (double& v : h) v *= s;
  return h;
}

ShapedSignal shape(const SymbolFrame& symbols, int sps, std::span<const double> taps, double symbol_rate) {
  if (sps < 1 || taps.empty()) throw ArgumentError("shape: sps >= 1 and non-empty taps required");
  const std::size_t ns = symbols.size();
  const std::size_t usps = static_cast<std::size_t>(sps);
  std::size_t len = ns * usps + taps.size() - 1;
  len = (len + usps - 1) / usps * usps;
  std::vector<std::vector<cplx>> pols;
  for (const auto& p : symbols.pols) {
    std::vector<cplx> out(len);
    for (std::size_t k = 0; k < ns; ++k) {
      if (p[k] == cplx{}) continue;
      for (std::size_t t = 0; t < taps.size(); ++t) out[k * usps + t] += p[k] * taps[t];
    }
    pols.push_back(std::move(out));
  }
  SamplingGrid grid(symbol_rate * sps, len, usps);
  return {ComplexSignal(grid, std::move(pols)), (taps.size() - 1) / 2};
}

ComplexSignal shape_cyclic(const SymbolFrame& symbols, int sps, std::span<const double> taps, double symbol_rate) {
  if (sps < 1 || taps.empty()) throw ArgumentError("shape_cyclic: sps >= 1 and non-empty taps required");
  const std::size_t ns = symbols.size();
  const std::size_t usps = static_cast<std::size_t>(sps);
  const std::size_t n = ns * usps;
  const long c = static_cast<long>((taps.size() - 1) / 2);
  std::vector<std::vector<cplx>> pols;
  for (const auto& p : symbols.pols) {
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < ns; ++k) {
      for (std::size_t t = 0; t < taps.size(); ++t) {
        long idx = static_cast<long>(k * usps + t) - c;
        idx %= static_cast<long>(n);
        if (idx < 0) idx += static_cast<long>(n);
        out[static_cast<std::size_t>(idx)] += p[k] * taps[t];
      }
    }
    pols.push_back(std::move(out));
  }
  return ComplexSignal(SamplingGrid(symbol_rate * sps, n, usps), std::move(pols));
}

SymbolFrame matched_filter_downsample(const ComplexSignal& sig, std::span<const double> taps, std::size_t delay,
                                      std::size_t n_symbols) {
  const std::size_t n = sig.size();
  const std::size_t full = n + taps.size() - 1;
  const std::size_t sps = sig.grid().samples_per_symbol();
  if (n_symbols == 0) return SymbolFrame{std::vector<std::vector<cplx>>(sig.n_pols()), 0, true};
  if (delay + (n_symbols - 1) * sps >= full)
    throw BoundsError("matched_filter_downsample: delay/symbol count exceed the filtered signal");
  SymbolFrame out;
  out.modulation_order = 0;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) {
    const auto x = sig.pol(p);
    std::vector<cplx> y(n_symbols);
    for (std::size_t k = 0; k < n_symbols; ++k) {
      const std::size_t m = delay + k * sps;
      cplx acc{};
      const std::size_t t_lo = m >= n ? m - n + 1 : 0;
      const std::size_t t_hi = std::min(taps.size() - 1, m);
      for (std::size_t t = t_lo; t <= t_hi; ++t) acc += taps[t] * x[m - t];
      y[k] = acc;
    }
    out.pols.push_back(std::move(y));
  }
  return out;
}

double effective_snr(const SymbolFrame& rx, const SymbolFrame& tx) {
  if (rx.size() == 0 || tx.size() == 0) throw ArgumentError("effective_snr: empty frame");
  if (rx.n_pols() != tx.n_pols() || rx.size() != tx.size())
    throw ArgumentError("effective_snr: frame shapes differ");
  double sig = 0.0;
  double err = 0.0;
  for (std::size_t p = 0; p < rx.n_pols(); ++p) {
    const auto& r = rx.pols[p];
    const auto& t = tx.pols[p];
    cplx num{};
    double den = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      num += std::conj(r[k]) * t[k];
      den += std::norm(r[k]);
    }
    const cplx a = den > 0.0 ? num / den : cplx{};
    for (std::size_t k = 0; k < r.size(); ++k) {
      sig += std::norm(t[k]);
      err += std::norm(a * r[k] - t[k]);
    }
  }
  if (err == 0.0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(sig / err));
}

ComplexSignal resample(const ComplexSignal& sig, std::size_t new_sps) {
  const auto& g = sig.grid();
  if (new_sps == 0) throw ArgumentError("resample: new_sps must be >= 1");
  if (new_sps == g.samples_per_symbol()) return sig;
  const std::size_t n = g.n_samples();
  const std::size_t m = g.n_symbols() * new_sps;
  const std::size_t keep = std::min(n, m);
  std::vector<std::vector<cplx>> pols;
  for (std::size_t p = 0; p < sig.n_pols(); ++p) {
    std::vector<cplx> spec(sig.pol(p).begin(), sig.pol(p).end());
    fft_inplace(spec);
    std::vector<cplx> out(m);
    // Signed bins -keep/2 .. (keep+1)/2 - 1 are carried over.
    const long lo = -static_cast<long>(keep / 2);
    const long hi = static_cast<long>((keep + 1) / 2);
    for (long b = lo; b < hi; ++b) {
      const std::size_t src = static_cast<std::size_t>(b < 0 ? b + static_cast<long>(n) : b);
      const std::size_t dst = static_cast<std::size_t>(b < 0 ? b + static_cast<long>(m) : b);
      out[dst] = spec[src];
    }
    ifft_unnormalized_inplace(out);
    const double s = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= s;
    pols.push_back(std::move(out));
  }
  return ComplexSignal(SamplingGrid(g.symbol_rate() * static_cast<double>(new_sps), m, new_sps), std::move(pols));
}

std::vector<cplx> convolve_same(std::span<const cplx> x, std::span<const double> taps) {
  const long n = static_cast<long>(x.size());
  const long k = static_cast<long>(taps.size());
  const long c = (k - 1) / 2;
  std::vector<cplx> y(x.size());
  for (long i = 0; i < n; ++i) {
    cplx acc{};
    for (long t = 0; t < k; ++t) {
      const long j = i + c - t;
      if (j < 0 || j >= n) continue;
      acc += taps[static_cast<std::size_t>(t)] * x[static_cast<std::size_t>(j)];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

}  // namespace ldbp
