#pragma once

// Differentiable numerical primitives on dense tensors.
//
// A Graph is a tape: every op computes its value eagerly and records a
// backward closure. Gradients flow by replaying the tape in reverse.
// Templated on the element type: double for gradient checks and numeric
// tests, float (BLAS-backed convolutions) for training speed.
//
// Layout: canonical order with the last axis fastest. Rank-4 activations
// are [channels, a, b, e]; conv weights are rank-5 [c_out, c_in, k1, k2, k3].

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "common.hpp"

namespace fnet {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
      throw DimensionError("tensor data length does not match shape");
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("tensor extents must be positive");
      n *= d;
    }
    return n;
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  // rank-4 accessor, [c][a][b][e] with e fastest
  T& at4(int c, int a, int b, int e) {
    return data[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(c) * shape[1] + a) * shape[2] + b) * shape[3] + e)];
  }
  const T& at4(int c, int a, int b, int e) const {
    return data[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(c) * shape[1] + a) * shape[2] + b) * shape[3] + e)];
  }
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};

  void validate() const;
  // ⌊(in + 2·pad − k)/stride⌋ + 1, checked ≥ 1
  std::array<int, 3> out_extents(const std::array<int, 3>& in) const;
  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(out_channels) * in_channels * kernel[0] * kernel[1] *
           kernel[2];
  }
};

template <typename T>
class Graph {
 public:
  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // -- graph inputs ---------------------------------------------------------
  int leaf(const Tensor<T>& t, bool requires_grad = false);
  int leaf(std::vector<int> shape, std::vector<T> data, bool requires_grad = false);

  // -- structure ------------------------------------------------------------
  int conv3d(int x, int w, int b, const ConvSpec& spec);
  int dense(int x, int w, int b);                       // x [n], w [m,n], b [m] -> [m]
  int avg_pool(int x, std::array<int, 3> factor);       // mean-pool spatial axes
  int upsample2(int x, std::array<bool, 3> axes);       // nearest, double selected axes
  int permute4(int x, std::array<int, 4> perm);         // new axis i carries old axis perm[i]
  int reshape(int x, std::vector<int> shape);
  int concat0(const std::vector<int>& xs);              // concatenate along axis 0

  // -- elementwise ----------------------------------------------------------
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int scale(int x, T c);
  int add_const(int x, T c);
  int exp_(int x);
  int log_(int x);
  int sigmoid(int x);
  int relu(int x);
  int clamp(int x, T lo, T hi);  // zero gradient outside (lo, hi)

  // -- reductions and losses --------------------------------------------------
  int sum(int x);   // -> [1]
  int mean(int x);  // -> [1]
  // 1 − (2·Σpg + eps) / (Σp + Σg + eps); target may be a plain data leaf
  int soft_dice_loss(int pred, int target, T eps);
  // KL(N(mu_q, e^lv_q) ‖ N(mu_p, e^lv_p)), summed over elements -> [1]
  int kl_diag_gaussian(int mu_q, int lv_q, int mu_p, int lv_p);

  // -- evaluation -------------------------------------------------------------
  const std::vector<int>& shape(int id) const { return nodes_[static_cast<std::size_t>(id)].shape; }
  const std::vector<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<T> tensor(int id) const {
    return Tensor<T>(nodes_[static_cast<std::size_t>(id)].shape,
                     nodes_[static_cast<std::size_t>(id)].value);
  }
  T scalar(int id) const;

  void backward(int loss_id);  // loss must be [1]
  const std::vector<T>& grad(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void()> backprop;  // adds into input grads
  };

  int push(std::vector<int> shape, std::vector<T> value, bool needs_grad);
  void check_node(int id) const;
  Node& n(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& n(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void require_same_shape(int a, int b, const char* op) const;

  std::deque<Node> nodes_;
  bool check_finite_;
  bool ran_backward_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace fnet
