#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ldbp/autodiff.hpp"

namespace ldbp {

/// Named parameter groups used to select regularization / quantization targets.
namespace groups {
inline constexpr const char* kCdTaps = "cd_taps";
inline constexpr const char* kNlScale = "nl_scale";
inline constexpr const char* kTensor = "tensor";
inline constexpr const char* kRotation = "rotation";
inline constexpr const char* kFdTaps = "fd_taps";
inline constexpr const char* kMimo = "mimo";
}  // namespace groups

/// One named parameter block. Complex blocks hold interleaved (re, im) pairs
/// and `shape` counts complex elements.
struct Param {
  std::string name;
  std::string group;
  std::vector<std::size_t> shape;
  bool is_complex = false;
  std::vector<double> values;

  std::size_t element_count() const;
  ad::Tensor as_tensor() const;
};

/// Ordered collection of named parameter blocks (insertion order is stable
/// and defines serialization order).
class ParamSet {
 public:
  void add(Param p);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_dimension() const;
  const Param& operator[](std::size_t i) const { return params_[i]; }
  Param& operator[](std::size_t i) { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  bool operator==(const ParamSet& o) const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// Gradient of a scalar loss, index-aligned with a ParamSet.
struct GradRecord {
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;

  static GradRecord zeros_like(const ParamSet& p);
  /// Throws ContractViolation if names or sizes differ from `p`.
  void check_compatible(const ParamSet& p) const;
  void accumulate(const GradRecord& o);
  void scale(double s);
  const std::vector<double>& at(const std::string& name) const;
  double max_abs() const;
};

/// Parameters placed on a tape. `leaves` are the differentiation targets;
/// `used` are the values consumed by the forward graph (equal to the leaves
/// unless fake quantization is active).
struct ParamVars {
  const ParamSet* set = nullptr;
  std::vector<ad::Var> leaves;
  std::vector<ad::Var> used;

  ad::Var get(const std::string& name) const;
  GradRecord gradients() const;
};

}  // namespace ldbp
