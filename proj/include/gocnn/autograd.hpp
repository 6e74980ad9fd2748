#pragma once

#include <functional>
#include <vector>

#include "gocnn/tensor.hpp"

namespace gocnn {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over a fixed vocabulary of CNN operations. Every op
// validates shapes up front and records a closure that routes the output
// gradient back to its inputs. Nodes are appended in evaluation order, so the
// list is already topologically sorted; backward() walks it in reverse.
//
// Single-threaded by design: one tape per training step, fixed iteration
// order everywhere, so runs with the same seed are bit-identical.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, Var)>;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records a custom differentiable node. `backprop` receives the tape and
  // the node's own handle; it must accumulate into grad_buffer() of each
  // input that requires_grad().
  Var record(Tensor value, const std::vector<Var>& inputs, Backprop backprop);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Gradient of the last backward() target w.r.t. v. Throws if backward has
  // not reached v; grad_or_zero returns zeros instead.
  const Tensor& grad(Var v) const;
  Tensor grad_or_zero(Var v) const;
  bool grad_defined(Var v) const;
  // Lazily allocated zero-initialized buffer; for use inside backprop closures.
  Tensor& grad_buffer(Var v);

  // --- operation vocabulary ---

  // Cross-correlation (no kernel flip), zero padding.
  // input [B,Cin,H,W] * weight [Cout,Cin,kh,kw] + bias [Cout] -> [B,Cout,H',W']
  Var conv2d(Var input, Var weight, Var bias, int stride, int pad);
  Var relu(Var x);
  // 2x2 window mean, stride 2; spatial dims must be even.
  Var avg_pool2x2(Var x);
  // [B,C,H,W] -> [B,C]
  Var global_avg_pool(Var x);
  // input [B,D] * weight [K,D]^T + bias [K] -> [B,K]
  Var fully_connected(Var input, Var weight, Var bias);
  // [B,C,H,W] -> [B,c_end-c_begin,H,W]
  Var slice_channels(Var x, int c_begin, int c_end);
  // [R,C] -> [R,c_end-c_begin]
  Var slice_cols(Var m, int c_begin, int c_end);
  // [B,D1] ++ [B,D2] -> [B,D1+D2]
  Var concat_cols(Var a, Var b);
  // Elementwise product with a constant gate; mask is [H,W] or per-sample
  // [B,H,W], broadcast over channels. No gradient flows into the mask.
  Var mask_mul(Var x, Tensor mask);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  Var sum(Var x);
  // mean of squared entries -> scalar
  Var squared_mean(Var x);

  // Populates gradients of everything `loss` depends on. `loss` must be a
  // scalar. Resets previously computed gradients first.
  void backward(Var loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_defined = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;

  const Node& node(Var v) const;
  Node& node(Var v);
};

}  // namespace gocnn
