#pragma once

#include <complex>
#include <span>
#include <vector>

namespace ldbp {

using cplx = std::complex<double>;

/// In-place forward DFT, X[k] = sum_n x[n] exp(-j 2 pi k n / N). Unnormalized.
void fft_inplace(std::span<cplx> data);

/// In-place inverse DFT, normalized by 1/N so that ifft(fft(x)) == x.
void ifft_inplace(std::span<cplx> data);

/// In-place inverse DFT without the 1/N factor.
void ifft_unnormalized_inplace(std::span<cplx> data);

/// Angular frequency (rad/s) of DFT bin k for an N-point transform at the
/// given sample rate, using the signed ordering 0, 1, ..., N/2-1, -N/2, ..., -1.
double bin_omega(std::size_t k, std::size_t n, double sample_rate);

/// Signed bin index for DFT bin k (same ordering as bin_omega).
long signed_bin(std::size_t k, std::size_t n);

}  // namespace ldbp
