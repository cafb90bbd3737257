#include "ldbp/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <numbers>

namespace ldbp {
namespace {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

// FFTW's planner is not thread-safe; execution of an existing plan is.
// FFTW_ESTIMATE keeps plan selection (and therefore rounding) identical from
// run to run, which the reproducibility guarantees depend on.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.backward);
    }
  }

  const PlanPair& get(std::size_t n) {
    std::lock_guard lock(mu_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    PlanPair p;
    p.forward = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_FORWARD, flags);
    p.backward = fftw_plan_dft_1d(static_cast<int>(n), buf, buf, FFTW_BACKWARD, flags);
    fftw_free(buf);
    return plans_.emplace(n, p).first->second;
  }

 private:
  std::mutex mu_;
  std::map<std::size_t, PlanPair> plans_;
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

fftw_complex* as_fftw(std::span<cplx> data) {
  return reinterpret_cast<fftw_complex*>(data.data());
}

}  // namespace

void fft_inplace(std::span<cplx> data) {
  if (data.empty()) return;
  fftw_execute_dft(cache().get(data.size()).forward, as_fftw(data), as_fftw(data));
}

void ifft_unnormalized_inplace(std::span<cplx> data) {
  if (data.empty()) return;
  fftw_execute_dft(cache().get(data.size()).backward, as_fftw(data), as_fftw(data));
}

void ifft_inplace(std::span<cplx> data) {
  ifft_unnormalized_inplace(data);
  const double s = 1.0 / static_cast<double>(data.size());
  for (auto& v : data) v *= s;
}

long signed_bin(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

double bin_omega(std::size_t k, std::size_t n, double sample_rate) {
  return 2.0 * std::numbers::pi * static_cast<double>(signed_bin(k, n)) * sample_rate /
         static_cast<double>(n);
}

}  // namespace ldbp
