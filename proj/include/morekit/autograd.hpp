// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation. A Graph is rebuilt for every step:
// ops append nodes in evaluation order, so node ids are already a topological
// order and backward() is a single reverse sweep.

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "morekit/tensor.hpp"

namespace morekit::ag {

/// Named model weight living outside any graph. Gradients from every graph
/// that references it are accumulated into `grad` by Graph::backward().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_trainable = true);

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const;
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  /// Gradient after backward(); a zero tensor if no gradient reached the node.
  Tensor grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  /// Receives the output gradient and one slot per input; a slot is nullptr
  /// when that input does not require a gradient.
  using BackwardFn = std::function<void(const Tensor& dout, std::vector<Tensor*>& dinputs)>;

  Graph() = default;
  /// A graph built with `track = false` never records parameters as
  /// differentiable and stores no backward closures.
  explicit Graph(bool track) : track_(track) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. The same parameter maps to one node per graph.
  Var param(Parameter& p);

  /// Appends an op node. Throws NumericalError if `value` is not finite.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);
  /// Appends a node that is forward-identity to `value` but never propagates.
  Var detached(const char* op, Tensor value);

  /// Reverse sweep from a scalar node; accumulates into Parameter::grad.
  void backward(Var loss);

  bool tracking() const { return track_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  Tensor grad(int id) const;
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  const char* op(int id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool track_ = true;
};

}  // namespace morekit::ag
