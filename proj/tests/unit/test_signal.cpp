#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "ldbp/errors.hpp"
#include "ldbp/rng.hpp"
#include "ldbp/signal.hpp"

using namespace ldbp;

namespace {

std::vector<cplx> random_vec(Rng& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  std::vector<cplx> v(n);
  for (auto& x : v) x = {nd(rng), nd(rng)};
  return v;
}

// Direct evaluation of the RRC impulse response at t (in symbol periods).
double rrc_value(double t, double b) {
  const double pi = std::numbers::pi;
  if (t == 0.0) return 1.0 - b + 4.0 * b / pi;
  return (std::sin(pi * t * (1 - b)) + 4 * b * t * std::cos(pi * t * (1 + b))) / (pi * t * (1 - 16 * b * b * t * t));
}

}  // namespace

TEST_CASE("sampling grid validation") {
  CHECK_THROWS_AS(SamplingGrid(0.0, 8, 2), ArgumentError);
  CHECK_THROWS_AS(SamplingGrid(1.0, 0, 1), ArgumentError);
  CHECK_THROWS_AS(SamplingGrid(1.0, 8, 0), ArgumentError);
  CHECK_THROWS_AS(SamplingGrid(1.0, 9, 2), ArgumentError);
  const SamplingGrid g(20e9, 16, 2);
  CHECK(g.symbol_rate() == 10e9);
  CHECK(g.n_symbols() == 8);
  CHECK_THROWS_AS(ComplexSignal(g, std::vector<cplx>(15)), ArgumentError);
  CHECK_THROWS_AS(ComplexSignal(g, std::vector<cplx>(16), std::vector<cplx>(8)), ArgumentError);
}

TEST_CASE("fft round trip and bin ordering") {
  Rng rng(3);
  auto x = random_vec(rng, 24);
  auto y = x;
  fft_inplace(y);
  // DFT oracle on one bin.
  cplx ref = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) ref += x[n] * std::polar(1.0, -2 * std::numbers::pi * 5.0 * n / 24.0);
  CHECK(std::abs(y[5] - ref) < 1e-10);
  ifft_inplace(y);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-12);
  CHECK(signed_bin(0, 8) == 0);
  CHECK(signed_bin(3, 8) == 3);
  CHECK(signed_bin(4, 8) == -4);
  CHECK(signed_bin(7, 8) == -1);
  CHECK(bin_omega(1, 8, 8.0) == doctest::Approx(2 * std::numbers::pi));
}

TEST_CASE("qam_map examples") {
  const int zero[] = {0};
  const auto q0 = qam_map(zero, 4);
  CHECK(std::abs(q0.pols[0][0] - cplx(1, 1) / std::sqrt(2.0)) < 1e-15);

  const int four[] = {0, 1, 2, 3};
  const auto q4 = qam_map(four, 4);
  std::set<std::pair<double, double>> distinct;
  double e = 0.0;
  for (auto v : q4.pols[0]) {
    distinct.insert({v.real(), v.imag()});
    e += std::norm(v);
  }
  CHECK(distinct.size() == 4);
  CHECK(e / 4 == doctest::Approx(1.0).epsilon(1e-12));

  // 16-QAM label 0101: two bits per axis, in-phase bits 01, quadrature bits 01.
  // Gray sequence along an axis from the positive corner: 00, 01, 11, 10 -> 3, 1, -1, -3.
  const int five[] = {5};
  const auto q5 = qam_map(five, 16);
  const cplx expected = cplx(1, 1) / std::sqrt(10.0);
  CHECK(std::abs(q5.pols[0][0] - expected) < 1e-15);
  CHECK(std::norm(q5.pols[0][0]) == doctest::Approx(0.2));

  const int bad[] = {4};
  CHECK_THROWS_AS(qam_map(bad, 4), ArgumentError);
  CHECK_THROWS_AS(qam_map(zero, 8), ConfigError);
}

TEST_CASE("qam constellations: injective, unit energy, Gray neighbours") {
  for (int order : {4, 16, 64}) {
    const auto pts = qam_constellation(order);
    std::set<std::pair<double, double>> distinct;
    double e = 0.0;
    for (auto v : pts) {
      distinct.insert({v.real(), v.imag()});
      e += std::norm(v);
    }
    CHECK(distinct.size() == static_cast<std::size_t>(order));
    CHECK(std::abs(e / order - 1.0) < 1e-12);
    // Nearest neighbours differ in exactly one label bit.
    double dmin = 1e9;
    for (int a = 0; a < order; ++a)
      for (int b = a + 1; b < order; ++b) dmin = std::min(dmin, std::abs(pts[a] - pts[b]));
    for (int a = 0; a < order; ++a)
      for (int b = a + 1; b < order; ++b)
        if (std::abs(std::abs(pts[a] - pts[b]) - dmin) < 1e-12) CHECK(std::popcount(static_cast<unsigned>(a ^ b)) == 1);
  }
}

TEST_CASE("random symbols are reproducible constellation members") {
  const auto a = random_symbols(11, 500, 16, 2);
  const auto b = random_symbols(11, 500, 16, 2);
  CHECK(a.pols == b.pols);
  CHECK(a.n_pols() == 2);
  const auto pts = qam_constellation(16);
  for (const auto& p : a.pols)
    for (auto v : p) {
      bool member = false;
      for (auto c : pts) member = member || v == c;
      CHECK(member);
    }
  CHECK(random_symbols(12, 500, 16, 2).pols != a.pols);
}

TEST_CASE("rrc taps") {
  const auto h = rrc_taps(0.1, 16, 4);
  REQUIRE(h.size() == 65);
  for (std::size_t k = 0; k < h.size(); ++k) CHECK(h[k] == h[h.size() - 1 - k]);
  CHECK(std::max_element(h.begin(), h.end()) - h.begin() == 32);
  // Center tap against the closed form, with the same unit-energy normalization.
  double e = 0.0;
  for (int k = -32; k <= 32; ++k) {
    const double t = k / 4.0;
    const double v = std::abs(std::abs(t) - 1.0 / 0.4) < 1e-12 ? 0.0 : rrc_value(t, 0.1);
    e += v * v;
  }
  // The singular points t = +-1/(4b) = +-2.5 symbols fall on the grid; add their limit.
  const double pi = std::numbers::pi, b = 0.1;
  const double lim = b / std::sqrt(2.0) * ((1 + 2 / pi) * std::sin(pi / (4 * b)) + (1 - 2 / pi) * std::cos(pi / (4 * b)));
  e += 2 * lim * lim;
  CHECK(h[32] == doctest::Approx(rrc_value(0.0, 0.1) / std::sqrt(e)).epsilon(1e-12));

  // Root-Nyquist: autocorrelation at multiples of sps vanishes.
  const auto g = rrc_taps(0.25, 16, 2);
  for (int m = 0; m <= 6; ++m) {
    double c = 0.0;
    for (std::size_t k = 0; k + 2 * m < g.size(); ++k) c += g[k] * g[k + 2 * m];
    CHECK(std::abs(c - (m == 0 ? 1.0 : 0.0)) < 1e-3);
  }
  CHECK_THROWS_AS(rrc_taps(0.0, 16, 2), ConfigError);
  CHECK_THROWS_AS(rrc_taps(1.5, 16, 2), ConfigError);
}

TEST_CASE("shape examples") {
  const auto h = rrc_taps(0.1, 16, 2);
  SymbolFrame one{{{cplx(1, 0)}}, 0, true};
  const auto s1 = shape(one, 2, h);
  for (std::size_t k = 0; k < h.size(); ++k) CHECK(s1.signal.pol_x()[k] == cplx(h[k], 0));
  SymbolFrame zeros{{std::vector<cplx>(10)}, 0, true};
  const auto sz = shape(zeros, 2, h);
  for (auto v : sz.signal.pol_x()) CHECK(v == cplx{});
  SymbolFrame two{{{cplx(1, 0), cplx(1, 0)}}, 0, true};
  const auto s2 = shape(two, 2, h);
  for (std::size_t n = 0; n < s2.signal.size(); ++n) {
    double ref = 0.0;
    for (std::size_t k = 0; k < 2; ++k)
      if (n >= 2 * k && n - 2 * k < h.size()) ref += h[n - 2 * k];
    CHECK(std::abs(s2.signal.pol_x()[n] - ref) < 1e-15);
  }
}

TEST_CASE("matched filter back-to-back") {
  for (double beta : {0.1, 0.25}) {
    const auto h = rrc_taps(beta, 32, 2);
    const auto tx = random_symbols(5, 1000, 4, 1);
    const auto sh = shape(tx, 2, h);
    const auto rx = matched_filter_downsample(sh.signal, h, 2 * sh.delay, tx.size());
    // Edge symbols see a truncated pulse tail; use the interior.
    CHECK(effective_snr(rx.slice(40, 960), tx.slice(40, 960)) > 40.0);
  }
  const auto h = rrc_taps(0.1, 16, 2);
  SymbolFrame single{{{cplx(0.3, -0.7)}}, 0, true};
  const auto sh = shape(single, 2, h);
  const auto rx = matched_filter_downsample(sh.signal, h, 2 * sh.delay, 1);
  CHECK(std::abs(rx.pols[0][0] - single.pols[0][0]) < 1e-3 * std::abs(single.pols[0][0]));
  const auto z = matched_filter_downsample(ComplexSignal::zeros(SamplingGrid(2.0, 40, 2), 1), h, 16, 5);
  for (auto v : z.pols[0]) CHECK(v == cplx{});
  CHECK_THROWS_AS(matched_filter_downsample(sh.signal, h, 10'000, 1), BoundsError);
}

TEST_CASE("effective snr") {
  const auto tx = random_symbols(9, 20000, 4, 1);
  CHECK(effective_snr(tx, tx) == kSnrCapDb);
  SymbolFrame rot = tx;
  for (auto& v : rot.pols[0]) v *= cplx(0, 1);
  CHECK(effective_snr(rot, tx) == kSnrCapDb);

  Rng rng(4);
  std::normal_distribution<double> nd(0.0, std::sqrt(0.005));
  SymbolFrame noisy = tx;
  for (auto& v : noisy.pols[0]) v += cplx(nd(rng), nd(rng));
  const double snr = effective_snr(noisy, tx);
  CHECK(std::abs(snr - 20.0) < 0.5);

  // Invariance under complex scaling.
  SymbolFrame scaled = noisy;
  for (auto& v : scaled.pols[0]) v *= cplx(-0.3, 2.1);
  CHECK(std::abs(effective_snr(scaled, tx) - snr) < 1e-9);

  SymbolFrame empty{{{}}, 0, true};
  CHECK_THROWS_AS(effective_snr(empty, empty), ArgumentError);
}

TEST_CASE("resample and convolve_same") {
  const auto h = rrc_taps(0.1, 16, 8);
  const auto tx = random_symbols(2, 256, 16, 1);
  const auto s8 = shape_cyclic(tx, 8, h);
  const auto s2 = resample(s8, 2);
  CHECK(s2.size() == 512);
  const auto back = resample(s2, 8);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < s8.size(); ++i) {
    err += std::norm(back.pol_x()[i] - s8.pol_x()[i]);
    ref += std::norm(s8.pol_x()[i]);
  }
  // Band limit 0.55 Rs fits within the 2 sps Nyquist band.
  CHECK(10 * std::log10(err / ref) < -40.0);

  Rng rng(8);
  const auto x = random_vec(rng, 20);
  const std::vector<double> t{0.25, -1.0, 0.5};
  const auto y = convolve_same(x, t);
  for (std::size_t n = 0; n < x.size(); ++n) {
    cplx ref_n = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const long i = static_cast<long>(n) + 1 - static_cast<long>(k);
      if (i >= 0 && i < 20) ref_n += t[k] * x[static_cast<std::size_t>(i)];
    }
    CHECK(std::abs(y[n] - ref_n) < 1e-14);
  }
}

TEST_CASE("keyed seeds depend only on keys") {
  CHECK(keyed_seed(1, {2, 3}) == keyed_seed(1, {2, 3}));
  CHECK(keyed_seed(1, {2, 3}) != keyed_seed(1, {3, 2}));
  CHECK(keyed_seed(1, {2}) != keyed_seed(2, {2}));
}
