#ifndef ECGI_AUTODIFF_HPP
#define ECGI_AUTODIFF_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace ecgi::ad {

enum class Op : std::uint8_t { Input, Constant, Add, Sub, Mul, Div, Tanh, Exp, Square };

class Tape;

/// Handle to one node of a tape. The id is the node's index; nodes only
/// reference lower ids, so the tape is topologically ordered by construction.
struct VarRef {
  Tape* tape = nullptr;
  std::int32_t id = -1;
};

/// Append-only scalar expression tape for reverse-mode differentiation.
/// Derivatives can be materialized either as values (gradient) or as new
/// tape nodes (gradient_as_graph); the latter is differentiable again,
/// which is how the second-order spatial terms are formed.
class Tape {
 public:
  VarRef input(double value) { return push(Op::Input, -1, -1, value); }
  VarRef constant(double value);  // deduplicated per tape

  VarRef record(Op op, VarRef a, VarRef b = {});

  VarRef add(VarRef a, VarRef b) {
    const auto ia = check(a), ib = check(b);
    return push(Op::Add, ia, ib, nodes_[ia].val + nodes_[ib].val);
  }
  VarRef sub(VarRef a, VarRef b) {
    const auto ia = check(a), ib = check(b);
    return push(Op::Sub, ia, ib, nodes_[ia].val - nodes_[ib].val);
  }
  VarRef mul(VarRef a, VarRef b) {
    const auto ia = check(a), ib = check(b);
    return push(Op::Mul, ia, ib, nodes_[ia].val * nodes_[ib].val);
  }
  VarRef div(VarRef a, VarRef b) {
    const auto ia = check(a), ib = check(b);
    if (nodes_[ib].val == 0.0) throw std::domain_error("autodiff: division by exact zero");
    return push(Op::Div, ia, ib, nodes_[ia].val / nodes_[ib].val);
  }
  VarRef tanh(VarRef a) {
    const auto ia = check(a);
    if (std::abs(nodes_[ia].val) > 50.0) throw std::domain_error("autodiff: tanh input magnitude exceeds 50");
    return push(Op::Tanh, ia, -1, std::tanh(nodes_[ia].val));
  }
  VarRef exp(VarRef a) {
    const auto ia = check(a);
    if (std::abs(nodes_[ia].val) > 50.0) throw std::domain_error("autodiff: exp input magnitude exceeds 50");
    return push(Op::Exp, ia, -1, std::exp(nodes_[ia].val));
  }
  VarRef square(VarRef a) {
    const auto ia = check(a);
    return push(Op::Square, ia, -1, nodes_[ia].val * nodes_[ia].val);
  }
  VarRef add_const(VarRef a, double c) { return add(a, constant(c)); }
  VarRef mul_const(VarRef a, double c) { return mul(a, constant(c)); }

  double value(VarRef v) const { return nodes_[check(v)].val; }
  std::int32_t size() const { return static_cast<std::int32_t>(nodes_.size()); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Reverse sweep by value: d(output)/d(w) for each requested node.
  /// Nodes that are not ancestors of the output get exact zero.
  std::vector<double> gradient(VarRef output, std::span<const VarRef> wrt) const;

  /// Builds the derivative d(output)/d(wrt) as new tape nodes. Nodes below
  /// scan_begin (e.g. shared network parameters) are treated as constants
  /// of the sweep, which keeps repeated per-point derivative graphs from
  /// rescanning the whole tape.
  VarRef gradient_as_graph(VarRef output, VarRef wrt, std::int32_t scan_begin = 0);

  /// Same adjoint sweep, extracting several derivatives at once; one
  /// emission pass serves every requested input.
  std::vector<VarRef> gradients_as_graph(VarRef output, std::span<const VarRef> wrt,
                                         std::int32_t scan_begin = 0);

 private:
  void emit_adjoint_graph(std::int32_t out, std::int32_t scan_begin);
  struct Node {
    double val;
    std::int32_t a;
    std::int32_t b;
    Op op;
  };

  std::int32_t check(VarRef v) const {
    if (v.tape != this || v.id < 0 || v.id >= size())
      throw std::invalid_argument("autodiff: VarRef does not belong to this tape");
    return v.id;
  }

  VarRef push(Op op, std::int32_t a, std::int32_t b, double value) {
    if (!std::isfinite(value)) throw_nonfinite(op);
    nodes_.push_back({value, a, b, op});
    return {this, size() - 1};
  }

  [[noreturn]] static void throw_nonfinite(Op op);

  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::int32_t> const_cache_;

  // scratch reused across gradient_as_graph calls
  std::vector<std::uint8_t> mark_;
  std::vector<std::int32_t> adj_;
  // local-derivative nodes (tanh', square', 1/b of div) already emitted for
  // a node; later sweeps over the same region reuse them
  std::unordered_map<std::int32_t, std::int32_t> deriv_memo_;
};

}  // namespace ecgi::ad

#endif
