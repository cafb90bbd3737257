#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ldbp::ad {

using cplx = std::complex<double>;

/// Dense multi-channel buffer. Complex tensors store interleaved (re, im)
/// pairs, so a complex tensor of length L per channel holds 2*L doubles per
/// channel. Gradients use the same layout: for a complex entry the pair holds
/// (dLoss/dRe, dLoss/dIm).
struct Tensor {
  std::vector<double> data;
  std::size_t channels = 1;
  bool is_complex = false;

  static Tensor real(std::size_t channels, std::size_t length);
  static Tensor complex(std::size_t channels, std::size_t length);
  static Tensor scalar(double v);
  static Tensor from_complex(std::span<const cplx> values);
  static Tensor from_complex_channels(const std::vector<std::vector<cplx>>& chans);
  static Tensor from_real(std::span<const double> values);

  /// Elements per channel (complex elements for complex tensors).
  std::size_t length() const;
  std::size_t width() const { return is_complex ? 2 : 1; }
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && is_complex == o.is_complex && data.size() == o.data.size();
  }

  std::span<cplx> cch(std::size_t c);
  std::span<const cplx> cch(std::size_t c) const;
  std::span<double> rch(std::size_t c);
  std::span<const double> rch(std::size_t c) const;
  std::vector<cplx> complex_channel(std::size_t c) const;
  double item() const;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse rule: receives the gradient flowing into the node's output and
/// accumulates into the input gradients. Entries of `in_grads` are null for
/// inputs that do not require gradients.
using ReverseRule = std::function<void(const Tensor& out_grad, std::span<Tensor* const> in_grads)>;

/// Operation-level tape for reverse-mode differentiation. Every operation that
/// participates in a differentiated graph records a reverse rule; reaching a
/// node without one during backward() raises ContractViolation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad, std::string_view name = "leaf");
  Var constant(Tensor value) { return leaf(std::move(value), false, "constant"); }

  /// Records an op output. If no input requires gradients the rule is dropped.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, ReverseRule rule);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, ReverseRule rule);
  /// Records an op output without a reverse rule.
  Var record_opaque(std::string_view op, Tensor value, std::initializer_list<Var> inputs);

  /// Back-propagates from a scalar real node.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward() with respect to v (null if none reached it).
  const Tensor* grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::string op;
    std::vector<std::size_t> inputs;
    ReverseRule rule;
    bool requires_grad = false;
    bool has_rule = false;
  };
  Var push(Node n);

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

// ---- generic ops -----------------------------------------------------------

/// Channel c of x as a single-channel tensor.
Var channel(Var x, std::size_t c);
/// Concatenates single- or multi-channel tensors of equal length/kind along channels.
Var stack(std::span<const Var> parts);
/// Sum of scalars.
Var add(Var a, Var b);
Var scale(Var a, double s);
/// |x|^2 elementwise; complex in, real out.
Var intensity(Var x);
/// x * exp(j * sign * phi) elementwise; phi real with the same channel count.
Var phase_rotate(Var x, Var phi, double sign);
/// Samples offset, offset+factor, ... of every channel.
Var decimate(Var x, std::size_t factor, std::size_t offset);
/// Contiguous window [begin, begin+len) of every channel.
Var window(Var x, std::size_t begin, std::size_t len);
/// Linear "same" convolution of every complex channel with fixed real taps.
Var fir_real_fixed(Var x, std::vector<double> taps);
/// Complex (2-channel) <-> real 4-channel (Re x, Im x, Re y, Im y) views.
Var complex_to_real(Var x);
Var real_to_complex(Var x);
/// Real MIMO convolution: out[o][n] = sum_i sum_k w[o][i][k] in[i][n - k + c],
/// w stored row-major (o, i, k), c = (L-1)/2, zero padding.
Var mimo_conv(Var in, Var w, std::size_t n_out, std::size_t taps);

/// Generic real-valued map with an elementwise derivative, exposed for tests.
Var elementwise(std::string_view op, Var x, const std::function<double(double)>& f,
                const std::function<double(double)>& df);

}  // namespace ldbp::ad
