#include <cmath>
#include <random>

#include "doctest.h"
#include "ldbp/dbp.hpp"
#include "ldbp/errors.hpp"
#include "ldbp/fft.hpp"
#include "ldbp/subband.hpp"

using namespace ldbp;

namespace {

SubbandFrame make_frame(const std::vector<std::vector<cplx>>& bands, std::size_t n_pols = 1) {
  SubbandFrame f;
  const std::size_t n = bands[0].size();
  for (std::size_t b = 0; b < bands.size() / n_pols; ++b) {
    std::vector<std::vector<cplx>> pols(bands.begin() + static_cast<long>(b * n_pols),
                                        bands.begin() + static_cast<long>((b + 1) * n_pols));
    f.bands.emplace_back(SamplingGrid(1.0, n, 1), pols);
    f.center_hz.push_back(0.0);
  }
  f.input_sample_rate = 1.0;
  f.input_samples = n;
  f.padded_samples = n;
  f.n_pols = n_pols;
  return f;
}

std::vector<cplx> random_vec(Rng& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  std::vector<cplx> v(n);
  for (auto& x : v) x = {nd(rng), nd(rng)};
  return v;
}

// White noise restricted to [lo, hi) (fractions of fs, signed) via the FFT.
std::vector<cplx> band_noise(Rng& rng, std::size_t n, double lo, double hi) {
  auto x = random_vec(rng, n);
  fft_inplace(x);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(signed_bin(k, n)) / static_cast<double>(n);
    if (f < lo || f >= hi) x[k] = 0.0;
  }
  ifft_inplace(x);
  return x;
}

double rel_error_db(std::span<const cplx> a, std::span<const cplx> ref, std::size_t from, std::size_t to) {
  double e = 0.0, p = 0.0;
  for (std::size_t n = from; n < to; ++n) {
    e += std::norm(a[n] - ref[n]);
    p += std::norm(ref[n]);
  }
  return 10.0 * std::log10(e / p);
}

MimoIntensityTensor random_tensor(Rng& rng, std::size_t s, std::size_t taps, double keep) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), pick(0.0, 1.0);
  auto t = MimoIntensityTensor::zeros(s, taps);
  for (double& c : t.coeffs) c = pick(rng) < keep ? u(rng) : 0.0;
  return t;
}

}  // namespace

TEST_CASE("merge of split reconstructs bandlimited signals") {
  for (int s : {2, 3, 7}) {
    CAPTURE(s);
    Rng rng(100 + s);
    const auto bank = FilterBankConfig::rrc(s);
    const std::size_t n = 4096;
    const SamplingGrid g(20e9, n, 2);
    const ComplexSignal x(g, band_noise(rng, n, -0.45, 0.45), band_noise(rng, n, -0.45, 0.45));
    const auto fr = split(x, bank);
    CHECK(fr.n_subbands() == static_cast<std::size_t>(s));
    const auto y = merge(fr, bank);
    REQUIRE(y.size() == n);
    for (std::size_t p = 0; p < 2; ++p) CHECK(rel_error_db(y.pol(p), x.pol(p), 0, n) < -40.0);
  }
}

TEST_CASE("split pads to the frame multiple and merge restores the length") {
  Rng rng(5);
  const auto bank = FilterBankConfig::rrc(3);
  const std::size_t n = 1000;
  const ComplexSignal x(SamplingGrid(20e9, n, 2), band_noise(rng, n, -0.4, 0.4));
  const auto fr = split(x, bank);
  CHECK(fr.input_samples == n);
  CHECK(fr.padded_samples % 6 == 0);
  CHECK(fr.padded_samples >= n);
  CHECK(merge(fr, bank).size() == n);
}

TEST_CASE("S=7 configuration round-trips") {
  const auto bank = FilterBankConfig::rrc(7);
  CHECK_NOTHROW(bank.validate());
  Rng rng(7);
  const std::size_t n = 7 * 2 * 256;
  const ComplexSignal x(SamplingGrid(96e9, n, 2), band_noise(rng, n, -0.45, 0.45));
  const auto y = merge(split(x, bank), bank);
  CHECK(rel_error_db(y.pol(0), x.pol(0), 0, n) < -40.0);
}

TEST_CASE("merge round-trip delay of an impulse") {
  const auto bank = FilterBankConfig::rrc(3);
  const std::size_t n = 3 * 2 * 512;
  Rng rng(9);
  auto pulse = band_noise(rng, n, -0.45, 0.45);
  const auto y = merge(split(ComplexSignal(SamplingGrid(1.0, n, 2), pulse), bank), bank);
  std::size_t best = 0;
  double best_c = -1.0;
  for (std::size_t d = 0; d < n; ++d) {
    cplx c = 0.0;
    for (std::size_t k = 0; k < n; ++k) c += y.pol(0)[(k + d) % n] * std::conj(pulse[k]);
    if (std::abs(c) > best_c) {
      best_c = std::abs(c);
      best = d;
    }
  }
  CHECK(best == kFilterBankDelay);
}

TEST_CASE("band isolation for S=2") {
  Rng rng(13);
  const auto bank = FilterBankConfig::rrc(2);
  const std::size_t n = 4096;
  const ComplexSignal x(SamplingGrid(20e9, n, 2), band_noise(rng, n, -0.47, -0.03));
  const auto fr = split(x, bank);
  REQUIRE(fr.n_subbands() == 2);
  REQUIRE(fr.center_hz[1] > 0.0);
  const double lower = fr.bands[0].energy();
  const double upper = fr.bands[1].energy();
  CHECK(10.0 * std::log10(upper / (lower + upper)) < -40.0);
}

TEST_CASE("zero input gives zero subbands and zero output") {
  const auto bank = FilterBankConfig::rrc(3);
  const auto zero = ComplexSignal::zeros(SamplingGrid(20e9, 600, 2), 2);
  const auto fr = split(zero, bank);
  for (const auto& b : fr.bands) CHECK(b.energy() == 0.0);
  CHECK(merge(fr, bank).energy() == 0.0);
}

TEST_CASE("coupled_phase examples") {
  Rng rng(17);
  const auto u0 = random_vec(rng, 3), u1 = random_vec(rng, 3);
  const auto fr = make_frame({u0, u1});

  const auto diag = MimoIntensityTensor::diagonal(2, 5, 0.7);
  const auto phi = coupled_phase(fr, diag);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(phi[0][n] == doctest::Approx(0.7 * std::norm(u0[n])));
    CHECK(phi[1][n] == doctest::Approx(0.7 * std::norm(u1[n])));
  }

  auto cross = MimoIntensityTensor::zeros(2, 1);
  cross.at(0, 1, 0) = 1.0;
  cross.at(1, 0, 0) = 1.0;
  const auto xp = coupled_phase(fr, cross);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(xp[0][n] == std::norm(u1[n]));
    CHECK(xp[1][n] == std::norm(u0[n]));
  }

  CHECK(MimoIntensityTensor::zeros(7, 13).coeffs.size() == 637);
}

TEST_CASE("coupled_phase is linear in intensity") {
  Rng rng(19);
  const std::vector<std::vector<cplx>> bands{random_vec(rng, 64), random_vec(rng, 64), random_vec(rng, 64)};
  const auto t = random_tensor(rng, 3, 7, 1.0);
  const double a = 2.5;
  auto scaled = bands;
  for (auto& b : scaled)
    for (auto& v : b) v *= std::sqrt(a);
  const auto p1 = coupled_phase(make_frame(bands), t);
  const auto pa = coupled_phase(make_frame(scaled), t);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t n = 0; n < 64; ++n) CHECK(pa[i][n] == doctest::Approx(a * p1[i][n]).epsilon(1e-12));
}

TEST_CASE("cascade composition") {
  Rng rng(23);
  const std::vector<std::vector<cplx>> bands{random_vec(rng, 200), random_vec(rng, 200), random_vec(rng, 200)};
  const auto fr = make_frame(bands);

  SUBCASE("single stage equals the dense tensor") {
    const auto t = random_tensor(rng, 3, 9, 0.6);
    TensorCascade c{{t}};
    CHECK(cascade_phase(fr, c) == coupled_phase(fr, t));
    CHECK(c.composed().coeffs == t.coeffs);
  }

  SUBCASE("two identity-diagonal stages give g squared") {
    const double g = 0.8;
    TensorCascade c{{MimoIntensityTensor::diagonal(3, 3, g), MimoIntensityTensor::diagonal(3, 5, g)}};
    const auto d = c.composed();
    CHECK(d.taps == 7);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 7; ++k)
          CHECK(d.at(i, j, k) == doctest::Approx(i == j && k == 3 ? g * g : 0.0));
  }

  SUBCASE("sparse 3-stage cascade matches its composed equivalent") {
    TensorCascade c{{random_tensor(rng, 3, 5, 0.1), random_tensor(rng, 3, 5, 0.1), random_tensor(rng, 3, 5, 0.1)}};
    for (auto& st : c.stages) st.at(0, 0, 2) = 1.0;
    CHECK(sparsity_report(c).fraction >= 0.85);
    const auto dense = c.composed();
    const auto a = cascade_phase(fr, c);
    const auto b = coupled_phase(fr, dense);
    const std::size_t edge = dense.taps;
    double err = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t n = edge; n + edge < 200; ++n) err = std::max(err, std::abs(a[i][n] - b[i][n]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("sparsity_report examples") {
  TensorCascade zero{{MimoIntensityTensor::zeros(3, 5), MimoIntensityTensor::zeros(3, 3)}};
  CHECK(sparsity_report(zero).fraction == 1.0);
  CHECK(sparsity_report(zero).total == 3 * 3 * 8);
  auto dense = MimoIntensityTensor::zeros(2, 3);
  for (double& c : dense.coeffs) c = 0.5;
  CHECK(sparsity_report(TensorCascade{{dense}}).fraction == 0.0);
}

TEST_CASE("subband_dbp_forward identity") {
  Rng rng(29);
  const auto fr = make_frame({random_vec(rng, 50), random_vec(rng, 50)});
  SubbandDbpModel m;
  m.steps.push_back({{{cplx(1.0)}, {cplx(1.0)}}, TensorCascade{{MimoIntensityTensor::zeros(2, 3)}}});
  const auto out = subband_dbp_forward(fr, m);
  for (std::size_t b = 0; b < 2; ++b) CHECK(std::vector<cplx>(out.bands[b].pol(0).begin(), out.bands[b].pol(0).end()) ==
                                            std::vector<cplx>(fr.bands[b].pol(0).begin(), fr.bands[b].pol(0).end()));
}

TEST_CASE("rotation preserves per-sample magnitude") {
  Rng rng(31);
  const auto fr = make_frame({random_vec(rng, 40), random_vec(rng, 40), random_vec(rng, 40)});
  SubbandDbpModel m;
  m.steps.push_back({{{cplx(1.0)}, {cplx(1.0)}, {cplx(1.0)}}, TensorCascade{{random_tensor(rng, 3, 5, 0.8)}}});
  const auto out = subband_dbp_forward(fr, m);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t n = 0; n < 40; ++n)
      CHECK(std::abs(out.bands[b].pol(0)[n]) == doctest::Approx(std::abs(fr.bands[b].pol(0)[n])).epsilon(1e-14));
}

TEST_CASE("S=1 reduces to plain DBP") {
  for (std::size_t n_pols : {1u, 2u}) {
    CAPTURE(n_pols);
    Rng rng(37 + n_pols);
    std::vector<std::vector<cplx>> pols;
    for (std::size_t p = 0; p < n_pols; ++p) pols.push_back(random_vec(rng, 120));
    const auto fr = make_frame(pols, n_pols);
    const ComplexSignal sig(SamplingGrid(1.0, 120, 1), pols);

    SubbandDbpModel sm;
    DbpModel dm;
    const std::vector<std::size_t> lens{5, 3, 5};
    for (std::size_t s = 0; s < lens.size(); ++s) {
      auto half = random_vec(rng, (lens[s] + 1) / 2);
      for (auto& v : half) v *= 0.3;
      const FoldedFir f(half, lens[s]);
      const double g = 0.05 * (1.0 + static_cast<double>(s));
      dm.steps.push_back({f, g});
      sm.steps.push_back({{f.expand()}, TensorCascade{{MimoIntensityTensor::diagonal(1, 1, g)}}});
    }
    const auto a = subband_dbp_forward(fr, sm);
    const auto b = dbp_forward(sig, dm);
    for (std::size_t p = 0; p < n_pols; ++p) {
      double err = 0.0, ref = 0.0;
      for (std::size_t n = 0; n < 120; ++n) {
        err = std::max(err, std::abs(a.bands[0].pol(p)[n] - b.pol(p)[n]));
        ref = std::max(ref, std::abs(b.pol(p)[n]));
      }
      CHECK(err / ref < 1e-12);
    }
  }
}

TEST_CASE("initializer shape and parameter round trip") {
  FiberParams fiber;
  const auto bank = FilterBankConfig::rrc(3);
  SubbandInitOptions opts;
  opts.taps = 7;
  opts.stage_taps = {3, 5, 7};
  const auto m = init_subband_model(fiber, 4, bank, 40e9, opts);
  REQUIRE(m.steps.size() == 4);
  CHECK_NOTHROW(m.validate(3));
  const auto& c0 = m.steps[0].coupling;
  CHECK(c0.stages.size() == 3);
  CHECK(c0.stages[0].at(0, 0, 1) == doctest::Approx(0.5 * c0.stages[0].at(0, 1, 1)));
  CHECK(c0.stages[1].at(2, 2, 2) == 1.0);
  const auto ps = subband_params(m);
  const auto back = subband_from_params(m, ps);
  CHECK(subband_params(back) == ps);
}
