#include "ecgi/autodiff.hpp"

#include <cstring>
#include <string>

namespace ecgi::ad {

namespace {
const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Square: return "square";
  }
  return "?";
}
}  // namespace

void Tape::throw_nonfinite(Op op) {
  throw std::runtime_error(std::string("autodiff: non-finite value from ") + op_name(op));
}

VarRef Tape::constant(double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  auto it = const_cache_.find(bits);
  if (it != const_cache_.end()) return {this, it->second};
  VarRef v = push(Op::Constant, -1, -1, value);
  const_cache_.emplace(bits, v.id);
  return v;
}

VarRef Tape::record(Op op, VarRef a, VarRef b) {
  switch (op) {
    case Op::Input:
    case Op::Constant:
      throw std::invalid_argument("autodiff: use input()/constant() to create leaf nodes");
    case Op::Add: return add(a, b);
    case Op::Sub: return sub(a, b);
    case Op::Mul: return mul(a, b);
    case Op::Div: return div(a, b);
    case Op::Tanh: return tanh(a);
    case Op::Exp: return exp(a);
    case Op::Square: return square(a);
  }
  throw std::invalid_argument("autodiff: unknown op");
}

std::vector<double> Tape::gradient(VarRef output, std::span<const VarRef> wrt) const {
  const std::int32_t out = check(output);
  std::vector<double> adjoint(static_cast<std::size_t>(out) + 1, 0.0);
  adjoint[out] = 1.0;
  const Node* nodes = nodes_.data();
  for (std::int32_t k = out; k >= 0; --k) {
    const double w = adjoint[k];
    if (w == 0.0) continue;
    const Node& n = nodes[k];
    switch (n.op) {
      case Op::Input:
      case Op::Constant: break;
      case Op::Add:
        adjoint[n.a] += w;
        adjoint[n.b] += w;
        break;
      case Op::Sub:
        adjoint[n.a] += w;
        adjoint[n.b] -= w;
        break;
      case Op::Mul:
        adjoint[n.a] += w * nodes[n.b].val;
        adjoint[n.b] += w * nodes[n.a].val;
        break;
      case Op::Div:
        adjoint[n.a] += w / nodes[n.b].val;
        adjoint[n.b] -= w * n.val / nodes[n.b].val;
        break;
      case Op::Tanh:
        adjoint[n.a] += w * (1.0 - n.val * n.val);
        break;
      case Op::Exp:
        adjoint[n.a] += w * n.val;
        break;
      case Op::Square:
        adjoint[n.a] += w * 2.0 * nodes[n.a].val;
        break;
    }
  }
  std::vector<double> out_grads;
  out_grads.reserve(wrt.size());
  for (VarRef v : wrt) {
    const std::int32_t i = check(v);
    out_grads.push_back(i <= out ? adjoint[i] : 0.0);
  }
  return out_grads;
}

void Tape::emit_adjoint_graph(std::int32_t out, std::int32_t scan_begin) {
  const std::size_t len = static_cast<std::size_t>(out - scan_begin) + 1;
  mark_.assign(len, 0);
  adj_.assign(len, -1);
  auto local = [scan_begin](std::int32_t id) { return static_cast<std::size_t>(id - scan_begin); };

  mark_[local(out)] = 1;
  for (std::int32_t k = out; k > scan_begin; --k) {
    if (!mark_[local(k)]) continue;
    const Node& n = nodes_[k];
    if (n.a >= scan_begin) mark_[local(n.a)] = 1;
    if (n.b >= scan_begin) mark_[local(n.b)] = 1;
  }

  const VarRef one = constant(1.0);
  adj_[local(out)] = one.id;

  // Contribution accumulators. A weight equal to the seed constant 1 is
  // multiplied away, and the first contribution assigns instead of adding.
  auto acc = [&](std::int32_t node, VarRef contrib) {
    if (node < scan_begin) return;
    auto& slot = adj_[local(node)];
    slot = (slot < 0) ? contrib.id : add({this, slot}, contrib).id;
  };
  auto acc_neg = [&](std::int32_t node, VarRef contrib) {
    if (node < scan_begin) return;
    auto& slot = adj_[local(node)];
    slot = (slot < 0) ? sub(constant(0.0), contrib).id : sub({this, slot}, contrib).id;
  };
  auto weighted = [&](VarRef w, VarRef x) { return w.id == one.id ? x : mul(w, x); };
  auto memo = [&](std::int32_t k, auto&& make) -> VarRef {
    auto it = deriv_memo_.find(k);
    if (it != deriv_memo_.end()) return {this, it->second};
    VarRef d = make();
    deriv_memo_.emplace(k, d.id);
    return d;
  };

  for (std::int32_t k = out; k >= scan_begin; --k) {
    if (!mark_[local(k)] || adj_[local(k)] < 0) continue;
    const VarRef w{this, adj_[local(k)]};
    // copy: nodes_ may reallocate while emitting
    const std::int32_t a = nodes_[k].a, b = nodes_[k].b;
    const Op op = nodes_[k].op;
    switch (op) {
      case Op::Input:
      case Op::Constant: break;
      case Op::Add:
        acc(a, w);
        acc(b, w);
        break;
      case Op::Sub:
        acc(a, w);
        acc_neg(b, w);
        break;
      case Op::Mul:
        acc(a, weighted(w, {this, b}));
        acc(b, weighted(w, {this, a}));
        break;
      case Op::Div: {
        VarRef kb = memo(k, [&] { return div({this, k}, {this, b}); });  // a / b^2
        acc(a, div(w, {this, b}));
        acc_neg(b, weighted(w, kb));
        break;
      }
      case Op::Tanh: {
        VarRef d = memo(k, [&] { return sub(one, square({this, k})); });
        acc(a, weighted(w, d));
        break;
      }
      case Op::Exp:
        acc(a, weighted(w, {this, k}));
        break;
      case Op::Square: {
        VarRef d = memo(k, [&] { return mul_const({this, a}, 2.0); });
        acc(a, weighted(w, d));
        break;
      }
    }
  }
}

VarRef Tape::gradient_as_graph(VarRef output, VarRef wrt, std::int32_t scan_begin) {
  return gradients_as_graph(output, std::span<const VarRef>{&wrt, 1}, scan_begin)[0];
}

std::vector<VarRef> Tape::gradients_as_graph(VarRef output, std::span<const VarRef> wrt,
                                             std::int32_t scan_begin) {
  const std::int32_t out = check(output);
  if (scan_begin < 0) scan_begin = 0;
  for (VarRef v : wrt)
    if (check(v) < scan_begin) scan_begin = 0;

  emit_adjoint_graph(out, scan_begin);

  std::vector<VarRef> res;
  res.reserve(wrt.size());
  for (VarRef v : wrt) {
    if (v.id > out) {
      res.push_back(constant(0.0));
      continue;
    }
    const std::int32_t id = adj_[static_cast<std::size_t>(v.id - scan_begin)];
    res.push_back(id >= 0 ? VarRef{this, id} : constant(0.0));
  }
  return res;
}

}  // namespace ecgi::ad
