#pragma once

// Reverse-mode differentiation over a linear tape.
//
// A Tape records every primitive applied to its Vars together with a closure
// that propagates the output gradient to the inputs. Leaves bound to a
// ParameterSet entry add their gradient into Parameter::grad on backward(),
// so several losses (possibly on several tapes) accumulate additively.

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "borderflow/array.hpp"
#include "borderflow/params.hpp"

namespace borderflow {

class Tape;

class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  // Leaf whose gradient is readable through grad() after backward().
  Var variable(Array value);
  Var parameter(Parameter& p);
  Var parameter(ParameterSet& set, const std::string& name) { return parameter(set.at(name)); }

  // Seeds d(out)/d(out) = 1 and propagates; out must hold exactly one value.
  void backward(Var out);
  // Zero array of the right shape when nothing reached v.
  Array grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Primitive construction interface used by ops.cpp.
  Var record(Array value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Array& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node id, allocated (zeroed) on first use.
  Array& grad_buffer(std::size_t id);
  const Array& out_grad(std::size_t id) const { return grads_[id]; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Array value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::vector<Array> grads_;
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise ops broadcast with numpy rules (rank <= 4).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Throws DomainError if any denominator is zero.
Var div(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var neg(Var a);

Var exp(Var a);
// Throws DomainError on non-positive input.
Var log(Var a);
Var tanh(Var a);
Var elu(Var a);
Var relu(Var a);
Var sigmoid(Var a);  // composed: 1 / (1 + exp(-a))

Var sum(Var a);
Var mean(Var a);
// Sum over every axis but the first: [N, ...] -> [N].
Var sum_per_sample(Var a);
// log(sum(exp(a))) along axis, computed with the max shift; keeps the axis with extent 1.
Var logsumexp(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);  // composed: a - logsumexp(a)
Var softmax(Var a, std::size_t axis);      // composed: exp(log_softmax(a))

// x[N,K], weight[M,K], bias[M] -> [N,M]
Var linear(Var x, Var weight, Var bias);
// x[N,C,H,W], weight[O,C,k,k], bias[O] -> [N,O,H',W']
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
// Bilinear resize with half-pixel centres, x[N,C,H,W] -> [N,C,out_h,out_w].
Var upsample_bilinear(Var x, std::size_t out_h, std::size_t out_w);

Var reshape(Var x, Shape shape);
// out[i] = x[index[i]]; gradients are scatter-added, so a source may repeat.
Var gather(Var x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index);
// Space-to-channel: [N,C,H,W] -> [N,4C,H/2,W/2] and its inverse.
Var squeeze2x2(Var x);
Var unsqueeze2x2(Var x);
// Channel slice along axis 1, [begin, end).
Var slice_channels(Var x, std::size_t begin, std::size_t end);
Var concat_channels(const std::vector<Var>& parts);
// Spatial window of a rank-4 array.
Var crop(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
// Places x[N,C,h,w] into a zero canvas [N,C,height,width] at per-sample offsets.
Var pad_into(Var x, std::size_t height, std::size_t width, const std::vector<std::size_t>& tops,
             const std::vector<std::size_t>& lefts);

Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace borderflow
