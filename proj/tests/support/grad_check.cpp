#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ldbp::testing {

namespace {

ad::Var project(ad::Var y, const std::vector<double>& w) {
  double s = 0.0;
  const auto& d = y.value().data;
  for (std::size_t i = 0; i < d.size(); ++i) s += w[i] * d[i];
  return y.tape().record("project", ad::Tensor::scalar(s), {y}, [w](const ad::Tensor& g, std::span<ad::Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < w.size(); ++i) gi[0]->data[i] += g.data[0] * w[i];
  });
}

double projected(const GraphBuilder& build, const std::vector<ad::Tensor>& inputs, const std::vector<double>& w) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  return project(build(tape, leaves), w).value().item();
}

}  // namespace

ad::Tensor random_complex(Rng& rng, std::size_t channels, std::size_t length, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  ad::Tensor t = ad::Tensor::complex(channels, length);
  for (double& v : t.data) v = u(rng);
  return t;
}

ad::Tensor random_real(Rng& rng, std::size_t channels, std::size_t length, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  ad::Tensor t = ad::Tensor::real(channels, length);
  for (double& v : t.data) v = u(rng);
  return t;
}

double gradient_error(const GraphBuilder& build, const std::vector<ad::Tensor>& inputs, Rng& rng, double h) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  ad::Var y = build(tape, leaves);
  std::normal_distribution<double> nd;
  std::vector<double> w(y.value().data.size());
  for (double& v : w) v = nd(rng);
  ad::Var loss = project(y, w);
  tape.backward(loss);

  double max_diff = 0.0, max_ref = 0.0;
  std::vector<ad::Tensor> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const ad::Tensor* g = tape.grad(leaves[t]);
    for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
      const double x0 = inputs[t].data[i];
      const double step = h * std::max(1.0, std::abs(x0));
      probe[t].data[i] = x0 + step;
      const double fp = projected(build, probe, w);
      probe[t].data[i] = x0 - step;
      const double fm = projected(build, probe, w);
      probe[t].data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = g ? g->data[i] : 0.0;
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_ref = std::max(max_ref, std::abs(numeric));
    }
  }
  return max_diff / std::max(max_ref, 1e-12);
}

}  // namespace ldbp::testing
