#include "borderflow/autodiff.hpp"

namespace borderflow {

const Array& Var::value() const { return tape_->value_of(id_); }

Var Tape::constant(Array value) { return record(std::move(value), {}, nullptr); }

Var Tape::variable(Array value) {
  Var v = record(std::move(value), {}, nullptr);
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(p.value, {}, nullptr);
  nodes_[v.id()].requires_grad = true;
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Array value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (auto i : inputs) node.requires_grad = node.requires_grad || nodes_[i].requires_grad;
  if (node.requires_grad) node.backward = std::move(fn);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  return Var(this, nodes_.size() - 1);
}

Array& Tape::grad_buffer(std::size_t id) {
  Array& g = grads_[id];
  if (g.shape() != nodes_[id].value.shape() || g.size() != nodes_[id].value.size())
    g = Array(nodes_[id].value.shape(), 0.0);
  return g;
}

void Tape::backward(Var out) {
  if (out.tape_ != this) throw std::invalid_argument("backward: variable belongs to another tape");
  if (nodes_[out.id()].value.size() != 1)
    throw ShapeError("backward: output must be scalar, got " + shape_string(nodes_[out.id()].value.shape()));
  for (auto& g : grads_) g = Array();
  grad_buffer(out.id())[0] = 1.0;
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    if (grads_[i].empty() && nodes_[i].value.size() != 0) continue;
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
  for (const auto& [p, id] : param_nodes_) {
    if (!grads_[id].empty()) {
      auto dst = p->grad.values();
      auto src = grads_[id].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    p->grad_ready = true;
  }
}

Array Tape::grad(Var v) const {
  const Array& g = grads_[v.id()];
  if (g.empty() && nodes_[v.id()].value.size() != 0) return Array(nodes_[v.id()].value.shape(), 0.0);
  return g;
}

}  // namespace borderflow
