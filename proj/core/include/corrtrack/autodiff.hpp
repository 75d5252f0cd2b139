#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "corrtrack/tensor.hpp"

namespace corrtrack::ad {

class Tape;

// Handle to a node on the tape.
struct Value {
  Tape* tape = nullptr;
  int32_t id = -1;
  bool ok() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode autodiff over coarse tensor ops. Nodes are recorded in
// construction order (a topological order); backward() walks the tape in
// reverse. Every op has a hand-written adjoint, validated against central
// finite differences in the test suite.
class Tape {
 public:
  Value constant(Tensor v) { return make(std::move(v), false); }
  Value leaf(Tensor v, bool requires_grad = true) { return make(std::move(v), requires_grad); }

  const Tensor& val(Value v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Tensor& grad(Value v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  bool requires_grad(Value v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every
  // requires_grad node reachable from it. `root` must be a scalar.
  void backward(Value root);

  size_t num_nodes() const { return nodes_.size(); }

  // --- internal plumbing used by the op builders ---
  Value make(Tensor v, bool requires_grad);
  void set_backprop(Value v, std::function<void(Tape&)> fn) {
    nodes_[static_cast<size_t>(v.id)].backprop = std::move(fn);
  }
  Tensor& grad_mut(Value v) { return nodes_[static_cast<size_t>(v.id)].grad; }
  Tensor& grad_mut(int32_t id) { return nodes_[static_cast<size_t>(id)].grad; }
  const Tensor& val(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool id_requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated by backward()
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;  // empty for leaves/constants
  };
  // deque: references returned by val()/grad() stay valid while new nodes
  // are recorded.
  std::deque<Node> nodes_;
};

// Elementwise and scalar ops.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value min2(Value a, Value b);          // elementwise min; ties route grad to a
Value scale(Value a, double c);
Value add_const(Value a, double c);
Value exp_(Value a);
Value log_(Value a);
Value tanh_(Value a);
Value one_plus_exp(Value a);           // 1 + exp(x), the confidence map
Value reshape(Value a, std::vector<int64_t> shape);

// Reductions.
Value sum(Value a);                                    // -> scalar {1}
Value mean(Value a);                                   // -> scalar {1}
Value weighted_sum(Value a, Tensor weights);           // sum_i w_i a_i -> {1}
Value div_scalar(Value a, Value s);                    // a / s, s scalar {1}

// Neural net building blocks. Feature maps are H x W x C row-major.
Value conv3x3_same(Value x, Value w, Value b);         // w: 3x3xCinxCout, b: Cout
Value pixelwise_linear(Value x, Value w, Value b);     // w: CinxCout
// Per-pixel linear on [x[p]; ctx]: w is (Cin + K) x Cout, ctx is a K-vector.
Value pixelwise_linear_ctx(Value x, Value ctx, Value w, Value b);
Value mean_over_pixels(Value x);                       // HWC -> C
// Mean-pools a grid_y x grid_x tiling of the image; output is the tile
// means concatenated row-major -> [grid_y * grid_x * C].
Value mean_over_tiles(Value x, int64_t grid_y, int64_t grid_x);
Value concat_channels(Value a, Value b);               // HWC1, HWC2 -> HW(C1+C2)
Value slice_channels(Value x, int64_t c0, int64_t c1); // HWC -> HW(c1-c0)
Value l2_normalize_rows(Value x);                      // rows over last dim
Value rownorm(Value x);                                // [.., C] -> [..] Euclidean row norms

// Sampling / matching ops.
// points: N x 2 pixel coordinates (x, y), fractional; bilinear with clamped
// +1 neighbors at the image border.
Value gather_bilinear(Value x, Tensor points);         // HWC -> N x C
Value matmul_nt(Value a, Value b);                     // [M,K] x [N,K] -> [M,N]
Value rowwise_dot(Value a, Value b);                   // [N,K], [N,K] -> [N]
Value concat_rows(Value a, Value b);                   // [M,K], [N,K] -> [M+N,K]
// out[j] = log sum_i exp(tau * s[i][j]).
Value logsumexp_cols_scaled(Value s, double tau);
// sum_i w_i * bce_with_logits(l_i, y_i); labels/weights are constants.
Value bce_logits_weighted_sum(Value logits, Tensor labels, Tensor weights);

}  // namespace corrtrack::ad
