#include "ldbp/params.hpp"

#include <cmath>
#include <numeric>

#include "ldbp/errors.hpp"

namespace ldbp {

std::size_t Param::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ad::Tensor Param::as_tensor() const {
  ad::Tensor t;
  t.channels = 1;
  t.is_complex = is_complex;
  t.data = values;
  return t;
}

void ParamSet::add(Param p) {
  if (contains(p.name)) throw ContractViolation("ParamSet: duplicate parameter name '" + p.name + "'");
  if (p.values.size() != p.element_count() * (p.is_complex ? 2 : 1))
    throw ContractViolation("ParamSet: parameter '" + p.name + "' size does not match its shape");
  index_[p.name] = params_.size();
  params_.push_back(std::move(p));
}

Param& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParamSet: unknown parameter '" + name + "'");
  return params_[it->second];
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParamSet: unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParamSet::total_dimension() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

bool ParamSet::operator==(const ParamSet& o) const {
  if (params_.size() != o.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = o.params_[i];
    if (a.name != b.name || a.group != b.group || a.shape != b.shape || a.is_complex != b.is_complex ||
        a.values != b.values)
      return false;
  }
  return true;
}

GradRecord GradRecord::zeros_like(const ParamSet& p) {
  GradRecord g;
  for (const auto& q : p) {
    g.names.push_back(q.name);
    g.values.emplace_back(q.values.size(), 0.0);
  }
  return g;
}

void GradRecord::check_compatible(const ParamSet& p) const {
  if (names.size() != p.size()) throw ContractViolation("GradRecord: parameter count mismatch");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != p[i].name || values[i].size() != p[i].values.size())
      throw ContractViolation("GradRecord: shape mismatch at '" + names[i] + "'");
  }
}

void GradRecord::accumulate(const GradRecord& o) {
  if (names != o.names) throw ContractViolation("GradRecord: accumulating incompatible records");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != o.values[i].size()) throw ContractViolation("GradRecord: size mismatch");
    for (std::size_t k = 0; k < values[i].size(); ++k) values[i][k] += o.values[i][k];
  }
}

void GradRecord::scale(double s) {
  for (auto& v : values)
    for (double& x : v) x *= s;
}

const std::vector<double>& GradRecord::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw ContractViolation("GradRecord: unknown parameter '" + name + "'");
}

double GradRecord::max_abs() const {
  double m = 0.0;
  for (const auto& v : values)
    for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

ad::Var ParamVars::get(const std::string& name) const {
  for (std::size_t i = 0; i < set->size(); ++i)
    if ((*set)[i].name == name) return used[i];
  throw ContractViolation("ParamVars: unknown parameter '" + name + "'");
}

GradRecord ParamVars::gradients() const {
  GradRecord g = GradRecord::zeros_like(*set);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const ad::Tensor* t = leaves[i].tape().grad(leaves[i]);
    if (t) g.values[i] = t->data;
  }
  return g;
}

}  // namespace ldbp
