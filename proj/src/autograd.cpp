// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#include "morekit/autograd.hpp"

namespace morekit::ag {

Parameter::Parameter(std::string n, Tensor v, bool is_trainable)
    : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0), trainable(is_trainable) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
  else grad.fill(0.0);
}

Graph& Var::graph() const {
  if (graph_ == nullptr) throw std::logic_error("use of an unbound Var");
  return *graph_;
}
const Tensor& Var::value() const { return graph().value(id_); }
Tensor Var::grad() const { return graph().grad(id_); }
bool Var::requires_grad() const { return graph().requires_grad(id_); }

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("non-finite constant");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NumericalError("non-finite parameter " + p.name);
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = track_ && p.trainable;
  n.param = n.requires_grad ? &p : nullptr;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite output from op ") + op);
  Node n;
  n.op = op;
  n.value = std::move(value);
  bool any = false;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw std::logic_error("Var from a different graph");
    n.inputs.push_back(v.id());
    any = any || nodes_[v.id()].requires_grad;
  }
  n.requires_grad = track_ && any;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::detached(const char* op, Tensor value) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite output from op ") + op);
  Node n;
  n.op = op;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::grad(int id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw std::logic_error("loss from a different graph");
  Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + to_string(root.value.shape()));
  }
  if (!root.requires_grad) return;
  for (auto& n : nodes_) n.grad = Tensor();
  root.grad = Tensor(root.value.shape(), 1.0);

  std::vector<Tensor*> slots;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (!n.grad.all_finite()) throw NumericalError(std::string("non-finite gradient at op ") + n.op);
    if (n.param != nullptr) {
      n.param->grad += n.grad;
      continue;
    }
    if (!n.backward) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& in = nodes_[n.inputs[i]];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad = Tensor(in.value.shape(), 0.0);
      slots[i] = &in.grad;
    }
    n.backward(n.grad, slots);
  }
}

}  // namespace morekit::ag
