#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ldbp/fft.hpp"

namespace ldbp {

/// Uniform time grid of a sampled waveform.
class SamplingGrid {
 public:
  /// Throws ArgumentError unless sample_rate > 0, n_samples > 0,
  /// samples_per_symbol >= 1 and n_samples % samples_per_symbol == 0.
  SamplingGrid(double sample_rate, std::size_t n_samples, std::size_t samples_per_symbol);

  double sample_rate() const { return sample_rate_; }
  std::size_t n_samples() const { return n_samples_; }
  std::size_t samples_per_symbol() const { return sps_; }
  double symbol_rate() const { return sample_rate_ / static_cast<double>(sps_); }
  double dt() const { return 1.0 / sample_rate_; }
  std::size_t n_symbols() const { return n_samples_ / sps_; }

  bool operator==(const SamplingGrid&) const = default;

 private:
  double sample_rate_;
  std::size_t n_samples_;
  std::size_t sps_;
};

/// Complex baseband waveform (units sqrt(W)) with one or two polarizations.
class ComplexSignal {
 public:
  ComplexSignal(SamplingGrid grid, std::vector<cplx> pol_x);
  ComplexSignal(SamplingGrid grid, std::vector<cplx> pol_x, std::vector<cplx> pol_y);
  /// Builds a signal from 1 or 2 polarization buffers.
  ComplexSignal(SamplingGrid grid, std::vector<std::vector<cplx>> pols);

  static ComplexSignal zeros(SamplingGrid grid, std::size_t n_pols);

  const SamplingGrid& grid() const { return grid_; }
  std::size_t n_pols() const { return pols_.size(); }
  bool dual_pol() const { return pols_.size() == 2; }
  std::size_t size() const { return grid_.n_samples(); }
  std::span<const cplx> pol(std::size_t p) const { return pols_.at(p); }
  std::span<const cplx> pol_x() const { return pols_[0]; }
  std::span<const cplx> pol_y() const;
  const std::vector<std::vector<cplx>>& pols() const { return pols_; }

  /// Sum over polarizations and samples of |u|^2.
  double energy() const;
  /// Mean power per sample, summed over polarizations.
  double mean_power() const;

 private:
  void validate() const;

  SamplingGrid grid_;
  std::vector<std::vector<cplx>> pols_;
};

/// Symbols per polarization. modulation_order == 0 marks an unconstrained
/// (received / equalized) frame; otherwise every symbol is a constellation point.
struct SymbolFrame {
  std::vector<std::vector<cplx>> pols;
  int modulation_order = 0;
  bool normalized = true;

  std::size_t n_pols() const { return pols.size(); }
  std::size_t size() const { return pols.empty() ? 0 : pols[0].size(); }
  /// Symbols [begin, end) of every polarization, as an unconstrained frame.
  SymbolFrame slice(std::size_t begin, std::size_t end) const;
};

/// Gray-labelled square QAM constellation point table, unit mean energy.
std::vector<cplx> qam_constellation(int order);

/// Maps label indices onto unit-energy Gray-coded QAM points (order 4, 16 or 64).
SymbolFrame qam_map(std::span<const int> indices, int order);

/// Draws n uniformly random symbols per polarization.
SymbolFrame random_symbols(std::uint64_t seed, std::size_t n, int order, std::size_t n_pols);

/// Unit-energy root-raised-cosine taps; length span_symbols * sps + 1.
std::vector<double> rrc_taps(double rolloff, int span_symbols, int sps);

struct ShapedSignal {
  ComplexSignal signal;
  std::size_t delay;  ///< sample index of the first symbol's pulse peak
};

/// Zero-stuffing upsample followed by linear convolution with `taps`.
ShapedSignal shape(const SymbolFrame& symbols, int sps, std::span<const double> taps,
                   double symbol_rate = 1.0);

/// Periodic pulse shaping: the symbol sequence is treated as one period of a
/// cyclic stream and pulse k peaks at sample k*sps. Output length n*sps.
ComplexSignal shape_cyclic(const SymbolFrame& symbols, int sps, std::span<const double> taps,
                           double symbol_rate = 1.0);

/// Full linear convolution with `taps`, then samples delay + k*sps for
/// k = 0..n_symbols-1. Throws BoundsError when a sample lies outside the output.
SymbolFrame matched_filter_downsample(const ComplexSignal& sig, std::span<const double> taps,
                                      std::size_t delay, std::size_t n_symbols);

/// Cap returned by effective_snr when the aligned residual is exactly zero.
inline constexpr double kSnrCapDb = 100.0;

/// Effective SNR (dB) after least-squares complex gain alignment of rx onto tx.
/// Each polarization gets its own alignment scalar; the ratio is formed from
/// the totals over all polarizations.
double effective_snr(const SymbolFrame& rx, const SymbolFrame& tx);

/// Ideal band-limited resampling of a signal to new_sps samples per symbol
/// (FFT zero-padding or truncation). The signal is treated as periodic.
ComplexSignal resample(const ComplexSignal& sig, std::size_t new_sps);

/// Linear convolution of complex x with real taps, "same" alignment
/// (output index n aligned with input index n for a centered odd filter).
std::vector<cplx> convolve_same(std::span<const cplx> x, std::span<const double> taps);

}  // namespace ldbp
