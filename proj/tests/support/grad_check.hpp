#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"
#include "ldbp/rng.hpp"

namespace ldbp::testing {

/// Builds a graph from leaves holding the given inputs and returns its output.
using GraphBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Projects the output onto fixed random weights, back-propagates, and
/// compares the analytic gradient of every input entry against central
/// differences of the same projection. Returns
/// max |analytic - numeric| / max |numeric| over all entries.
double gradient_error(const GraphBuilder& build, const std::vector<ad::Tensor>& inputs, Rng& rng, double h = 1e-6);

/// Random tensors with entries uniform in [-scale, scale].
ad::Tensor random_complex(Rng& rng, std::size_t channels, std::size_t length, double scale = 1.0);
ad::Tensor random_real(Rng& rng, std::size_t channels, std::size_t length, double scale = 1.0);

struct OpCheck {
  std::string op;
  int instances = 0;
  double max_error = 0.0;
};

inline constexpr double kGradientTolerance = 1e-4;

/// Finite-difference sweep over every differentiable operation, `instances`
/// randomized small problems each.
std::vector<OpCheck> gradient_suite(int instances, std::uint64_t seed);

}  // namespace ldbp::testing
