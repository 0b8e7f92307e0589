#include "tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace fnet {

// ---------------------------------------------------------------------------
// ConvSpec
// ---------------------------------------------------------------------------

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1)
    throw DimensionError("conv: channel counts must be >= 1");
  for (int i = 0; i < 3; ++i) {
    if (kernel[static_cast<std::size_t>(i)] < 1 || stride[static_cast<std::size_t>(i)] < 1)
      throw DimensionError("conv: kernel and stride components must be >= 1");
    if (padding[static_cast<std::size_t>(i)] < 0)
      throw DimensionError("conv: padding must be >= 0");
  }
}

std::array<int, 3> ConvSpec::out_extents(const std::array<int, 3>& in) const {
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) {
    auto u = static_cast<std::size_t>(i);
    int num = in[u] + 2 * padding[u] - kernel[u];
    if (num < 0)
      throw DimensionError("conv: kernel larger than padded input on axis " + std::to_string(i));
    out[u] = num / stride[u] + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph plumbing
// ---------------------------------------------------------------------------

template <typename T>
int Graph<T>::push(std::vector<int> shape, std::vector<T> value, bool needs_grad) {
  if (static_cast<std::int64_t>(value.size()) != Tensor<T>::numel_of(shape))
    throw DimensionError("graph node value length does not match shape");
  Node node;
  node.shape = std::move(shape);
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size()) - 1;
  check_node(id);
  return id;
}

template <typename T>
void Graph<T>::check_node(int id) const {
  if (!check_finite_) return;
  for (T v : n(id).value)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("non-finite value produced at graph node " + std::to_string(id));
}

template <typename T>
void Graph<T>::require_same_shape(int a, int b, const char* op) const {
  if (n(a).shape != n(b).shape)
    throw DimensionError(std::string(op) + ": operands have different shapes");
}

template <typename T>
T Graph<T>::scalar(int id) const {
  if (n(id).value.size() != 1) throw DimensionError("scalar: node is not a single value");
  return n(id).value[0];
}

template <typename T>
int Graph<T>::leaf(const Tensor<T>& t, bool requires_grad) {
  return push(t.shape, t.data, requires_grad);
}

template <typename T>
int Graph<T>::leaf(std::vector<int> shape, std::vector<T> data, bool requires_grad) {
  return push(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
void Graph<T>::backward(int loss_id) {
  if (ran_backward_) throw InvalidArgumentError("backward may run only once per graph");
  if (n(loss_id).value.size() != 1)
    throw InvalidArgumentError("backward target must be a single value");
  if (!n(loss_id).needs_grad)
    throw InvalidArgumentError("backward target does not depend on any gradient leaf");
  ran_backward_ = true;
  for (auto& node : nodes_)
    if (node.needs_grad) node.grad.assign(node.value.size(), T(0));
  n(loss_id).grad[0] = T(1);
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& node = n(id);
    if (node.needs_grad && node.backprop) node.backprop();
  }
}

template <typename T>
const std::vector<T>& Graph<T>::grad(int id) const {
  if (!ran_backward_) throw InvalidArgumentError("grad requested before backward");
  if (!n(id).needs_grad) throw InvalidArgumentError("node does not carry a gradient");
  return n(id).grad;
}

// ---------------------------------------------------------------------------
// Convolution: im2col + GEMM
//
// col is [K][M] with K = C_in·k1·k2·k3 (taps in c,i,j,l order) and
// M = A'·B'·E' output sites. Out-of-bounds taps contribute an exact 0,
// so in double precision the per-site accumulation visits the same
// operations, in the same order, as a direct nested-loop evaluation
// seeded with the bias.
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int C_in, A, B, E;     // input
  int C_out, Ao, Bo, Eo; // output
  std::int64_t K, M;
};

template <typename T>
void im2col(const T* x, const ConvDims& d, const ConvSpec& s, T* col) {
  const int k1 = s.kernel[0], k2 = s.kernel[1], k3 = s.kernel[2];
  const int s1 = s.stride[0], s2 = s.stride[1], s3 = s.stride[2];
  const int p1 = s.padding[0], p2 = s.padding[1], p3 = s.padding[2];
  std::int64_t k = 0;
  for (int ci = 0; ci < d.C_in; ++ci)
    for (int i = 0; i < k1; ++i)
      for (int j = 0; j < k2; ++j)
        for (int l = 0; l < k3; ++l, ++k) {
          T* crow = col + k * d.M;
          for (int a = 0; a < d.Ao; ++a) {
            int ia = a * s1 + i - p1;
            bool a_ok = (ia >= 0 && ia < d.A);
            for (int b = 0; b < d.Bo; ++b) {
              int ib = b * s2 + j - p2;
              T* dst = crow + (static_cast<std::int64_t>(a) * d.Bo + b) * d.Eo;
              if (!a_ok || ib < 0 || ib >= d.B) {
                std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(d.Eo));
                continue;
              }
              const T* src = x + ((static_cast<std::int64_t>(ci) * d.A + ia) * d.B + ib) * d.E;
              if (s3 == 1) {
                int off = l - p3;  // ie = e + off
                int lo = std::max(0, -off);
                int hi = std::min(d.Eo, d.E - off);
                if (hi < lo) hi = lo;
                for (int e = 0; e < lo; ++e) dst[e] = T(0);
                if (hi > lo)
                  std::memcpy(dst + lo, src + lo + off,
                              sizeof(T) * static_cast<std::size_t>(hi - lo));
                for (int e = hi; e < d.Eo; ++e) dst[e] = T(0);
              } else {
                for (int e = 0; e < d.Eo; ++e) {
                  int ie = e * s3 + l - p3;
                  dst[e] = (ie >= 0 && ie < d.E) ? src[ie] : T(0);
                }
              }
            }
          }
        }
}

// C[m×n] (+)= A[m×k]·B[k×n], all row-major. The double path accumulates the
// inner index in ascending order per output element; the float path uses BLAS.
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t nn, std::int64_t kk, const T* A, const T* B, T* C,
             bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(nn), static_cast<int>(kk), 1.0f, A, static_cast<int>(kk), B,
                static_cast<int>(nn), accumulate ? 1.0f : 0.0f, C, static_cast<int>(nn));
  } else {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < nn; ++j) {
        T acc = accumulate ? C[i * nn + j] : T(0);
        for (std::int64_t p = 0; p < kk; ++p) acc += A[i * kk + p] * B[p * nn + j];
        C[i * nn + j] = acc;
      }
  }
}

// C[m×n] (+)= A^T[m×k]·B[k×n] where A is stored [k×m] row-major.
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t nn, std::int64_t kk, const T* A, const T* B, T* C,
             bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m),
                static_cast<int>(nn), static_cast<int>(kk), 1.0f, A, static_cast<int>(m), B,
                static_cast<int>(nn), accumulate ? 1.0f : 0.0f, C, static_cast<int>(nn));
  } else {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < nn; ++j) {
        T acc = accumulate ? C[i * nn + j] : T(0);
        for (std::int64_t p = 0; p < kk; ++p) acc += A[p * m + i] * B[p * nn + j];
        C[i * nn + j] = acc;
      }
  }
}

// C[m×n] (+)= A[m×k]·B^T[k×n] where B is stored [n×k] row-major.
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t nn, std::int64_t kk, const T* A, const T* B, T* C,
             bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                static_cast<int>(nn), static_cast<int>(kk), 1.0f, A, static_cast<int>(kk), B,
                static_cast<int>(kk), accumulate ? 1.0f : 0.0f, C, static_cast<int>(nn));
  } else {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < nn; ++j) {
        T acc = accumulate ? C[i * nn + j] : T(0);
        for (std::int64_t p = 0; p < kk; ++p) acc += A[i * kk + p] * B[j * kk + p];
        C[i * nn + j] = acc;
      }
  }
}

}  // namespace

template <typename T>
int Graph<T>::conv3d(int x, int w, int b, const ConvSpec& spec) {
  spec.validate();
  const auto& xs = n(x).shape;
  const auto& ws = n(w).shape;
  const auto& bs = n(b).shape;
  if (xs.size() != 4) throw DimensionError("conv: input must be rank 4");
  if (xs[0] != spec.in_channels) throw DimensionError("conv: input channel count mismatch");
  std::vector<int> want_w{spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1],
                          spec.kernel[2]};
  if (ws != want_w) throw DimensionError("conv: weight shape mismatch");
  if (bs != std::vector<int>{spec.out_channels}) throw DimensionError("conv: bias shape mismatch");

  ConvDims d;
  d.C_in = xs[0];
  d.A = xs[1];
  d.B = xs[2];
  d.E = xs[3];
  auto oe = spec.out_extents({d.A, d.B, d.E});
  d.C_out = spec.out_channels;
  d.Ao = oe[0];
  d.Bo = oe[1];
  d.Eo = oe[2];
  d.K = static_cast<std::int64_t>(d.C_in) * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  d.M = static_cast<std::int64_t>(d.Ao) * d.Bo * d.Eo;

  std::vector<T> col(static_cast<std::size_t>(d.K * d.M));
  im2col(n(x).value.data(), d, spec, col.data());

  std::vector<T> out(static_cast<std::size_t>(d.C_out) * static_cast<std::size_t>(d.M));
  const T* bias = n(b).value.data();
  if constexpr (std::is_same_v<T, float>) {
    for (int co = 0; co < d.C_out; ++co)
      for (std::int64_t mI = 0; mI < d.M; ++mI) out[static_cast<std::size_t>(co * d.M + mI)] = bias[co];
    gemm_nn<T>(d.C_out, d.M, d.K, n(w).value.data(), col.data(), out.data(), true);
  } else {
    // bias-seeded, tap-ascending accumulation: matches a direct nested loop bitwise
    const T* W = n(w).value.data();
    for (int co = 0; co < d.C_out; ++co)
      for (std::int64_t mI = 0; mI < d.M; ++mI) {
        T acc = bias[co];
        const T* wrow = W + static_cast<std::int64_t>(co) * d.K;
        for (std::int64_t k = 0; k < d.K; ++k) acc += wrow[k] * col[static_cast<std::size_t>(k * d.M + mI)];
        out[static_cast<std::size_t>(co * d.M + mI)] = acc;
      }
  }
  col.clear();
  col.shrink_to_fit();

  bool ng = n(x).needs_grad || n(w).needs_grad || n(b).needs_grad;
  int id = push({d.C_out, d.Ao, d.Bo, d.Eo}, std::move(out), ng);
  if (!ng) return id;

  n(id).backprop = [this, x, w, b, spec, d, id]() {
    const std::vector<T>& go = n(id).grad;
    std::vector<T> col2(static_cast<std::size_t>(d.K * d.M));
    im2col(n(x).value.data(), d, spec, col2.data());
    if (n(b).needs_grad) {
      T* db = n(b).grad.data();
      for (int co = 0; co < d.C_out; ++co) {
        T acc = T(0);
        for (std::int64_t mI = 0; mI < d.M; ++mI) acc += go[static_cast<std::size_t>(co * d.M + mI)];
        db[co] += acc;
      }
    }
    if (n(w).needs_grad)
      gemm_nt<T>(d.C_out, d.K, d.M, go.data(), col2.data(), n(w).grad.data(), true);
    if (n(x).needs_grad) {
      std::vector<T> dcol(static_cast<std::size_t>(d.K * d.M));
      gemm_tn<T>(d.K, d.M, d.C_out, n(w).value.data(), go.data(), dcol.data(), false);
      // col2im: scatter-add, skipping padding taps
      T* dx = n(x).grad.data();
      const int k1 = spec.kernel[0], k2 = spec.kernel[1], k3 = spec.kernel[2];
      std::int64_t k = 0;
      for (int ci = 0; ci < d.C_in; ++ci)
        for (int i = 0; i < k1; ++i)
          for (int j = 0; j < k2; ++j)
            for (int l = 0; l < k3; ++l, ++k) {
              const T* crow = dcol.data() + k * d.M;
              for (int a = 0; a < d.Ao; ++a) {
                int ia = a * spec.stride[0] + i - spec.padding[0];
                if (ia < 0 || ia >= d.A) continue;
                for (int bb = 0; bb < d.Bo; ++bb) {
                  int ib = bb * spec.stride[1] + j - spec.padding[1];
                  if (ib < 0 || ib >= d.B) continue;
                  const T* src = crow + (static_cast<std::int64_t>(a) * d.Bo + bb) * d.Eo;
                  T* dst =
                      dx + ((static_cast<std::int64_t>(ci) * d.A + ia) * d.B + ib) * d.E;
                  for (int e = 0; e < d.Eo; ++e) {
                    int ie = e * spec.stride[2] + l - spec.padding[2];
                    if (ie >= 0 && ie < d.E) dst[ie] += src[e];
                  }
                }
              }
            }
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename T>
int Graph<T>::dense(int x, int w, int b) {
  const auto& xs = n(x).shape;
  const auto& ws = n(w).shape;
  const auto& bs = n(b).shape;
  if (xs.size() != 1 || ws.size() != 2 || bs.size() != 1)
    throw DimensionError("dense: expects x [n], w [m,n], b [m]");
  int nn = xs[0], mm = ws[0];
  if (ws[1] != nn || bs[0] != mm) throw DimensionError("dense: shape mismatch");

  std::vector<T> out(static_cast<std::size_t>(mm));
  const T* X = n(x).value.data();
  const T* W = n(w).value.data();
  const T* B = n(b).value.data();
  for (int i = 0; i < mm; ++i) {
    T acc = B[i];
    const T* row = W + static_cast<std::int64_t>(i) * nn;
    for (int j = 0; j < nn; ++j) acc += row[j] * X[j];
    out[static_cast<std::size_t>(i)] = acc;
  }
  bool ng = n(x).needs_grad || n(w).needs_grad || n(b).needs_grad;
  int id = push({mm}, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, w, b, nn, mm, id]() {
    const T* go = n(id).grad.data();
    if (n(b).needs_grad) {
      T* db = n(b).grad.data();
      for (int i = 0; i < mm; ++i) db[i] += go[i];
    }
    if (n(w).needs_grad) {
      const T* X = n(x).value.data();
      T* dw = n(w).grad.data();
      for (int i = 0; i < mm; ++i)
        for (int j = 0; j < nn; ++j) dw[static_cast<std::int64_t>(i) * nn + j] += go[i] * X[j];
    }
    if (n(x).needs_grad) {
      const T* W = n(w).value.data();
      T* dx = n(x).grad.data();
      for (int i = 0; i < mm; ++i)
        for (int j = 0; j < nn; ++j) dx[j] += W[static_cast<std::int64_t>(i) * nn + j] * go[i];
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// Resampling / layout
// ---------------------------------------------------------------------------

template <typename T>
int Graph<T>::avg_pool(int x, std::array<int, 3> factor) {
  const auto& xs = n(x).shape;
  if (xs.size() != 4) throw DimensionError("avg_pool: input must be rank 4");
  for (int i = 0; i < 3; ++i) {
    auto u = static_cast<std::size_t>(i);
    if (factor[u] < 1) throw DimensionError("avg_pool: factors must be >= 1");
    if (xs[u + 1] % factor[u] != 0)
      throw DimensionError("avg_pool: extent " + std::to_string(xs[u + 1]) +
                           " not divisible by factor " + std::to_string(factor[u]));
  }
  int C = xs[0], A = xs[1] / factor[0], B = xs[2] / factor[1], E = xs[3] / factor[2];
  std::int64_t window = static_cast<std::int64_t>(factor[0]) * factor[1] * factor[2];
  T inv = T(1) / static_cast<T>(window);

  std::vector<T> out(static_cast<std::size_t>(C) * A * B * E);
  std::vector<T> win(static_cast<std::size_t>(window));
  const T* X = n(x).value.data();
  std::int64_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < B; ++b)
        for (int e = 0; e < E; ++e, ++o) {
          std::int64_t wn = 0;
          for (int da = 0; da < factor[0]; ++da)
            for (int db = 0; db < factor[1]; ++db)
              for (int de = 0; de < factor[2]; ++de) {
                std::int64_t src =
                    ((static_cast<std::int64_t>(c) * xs[1] + (a * factor[0] + da)) * xs[2] +
                     (b * factor[1] + db)) *
                        xs[3] +
                    (e * factor[2] + de);
                win[static_cast<std::size_t>(wn++)] = X[src];
              }
          // pairwise reduction: exact for equal values in power-of-two windows
          while (wn > 1) {
            std::int64_t half = wn / 2;
            for (std::int64_t i = 0; i < half; ++i)
              win[static_cast<std::size_t>(i)] = win[static_cast<std::size_t>(2 * i)] +
                                                 win[static_cast<std::size_t>(2 * i + 1)];
            if (wn % 2) win[static_cast<std::size_t>(half)] = win[static_cast<std::size_t>(wn - 1)];
            wn = half + (wn % 2);
          }
          out[static_cast<std::size_t>(o)] = win[0] * inv;
        }
  bool ng = n(x).needs_grad;
  int id = push({C, A, B, E}, std::move(out), ng);
  if (!ng) return id;
  auto ins = xs;
  n(id).backprop = [this, x, factor, ins, C, A, B, E, inv, id]() {
    const T* go = n(id).grad.data();
    T* dx = n(x).grad.data();
    std::int64_t o = 0;
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
          for (int e = 0; e < E; ++e, ++o) {
            T g = go[o] * inv;
            for (int da = 0; da < factor[0]; ++da)
              for (int db = 0; db < factor[1]; ++db)
                for (int de = 0; de < factor[2]; ++de) {
                  std::int64_t dst =
                      ((static_cast<std::int64_t>(c) * ins[1] + (a * factor[0] + da)) * ins[2] +
                       (b * factor[1] + db)) *
                          ins[3] +
                      (e * factor[2] + de);
                  dx[dst] += g;
                }
          }
  };
  return id;
}

template <typename T>
int Graph<T>::upsample2(int x, std::array<bool, 3> axes) {
  const auto& xs = n(x).shape;
  if (xs.size() != 4) throw DimensionError("upsample2: input must be rank 4");
  int C = xs[0];
  int A = xs[1] * (axes[0] ? 2 : 1);
  int B = xs[2] * (axes[1] ? 2 : 1);
  int E = xs[3] * (axes[2] ? 2 : 1);
  std::vector<T> out(static_cast<std::size_t>(C) * A * B * E);
  const T* X = n(x).value.data();
  std::int64_t o = 0;
  for (int c = 0; c < C; ++c)
    for (int a = 0; a < A; ++a)
      for (int b = 0; b < B; ++b)
        for (int e = 0; e < E; ++e, ++o) {
          std::int64_t src = ((static_cast<std::int64_t>(c) * xs[1] + (axes[0] ? a / 2 : a)) * xs[2] +
                              (axes[1] ? b / 2 : b)) *
                                 xs[3] +
                             (axes[2] ? e / 2 : e);
          out[static_cast<std::size_t>(o)] = X[src];
        }
  bool ng = n(x).needs_grad;
  int id = push({C, A, B, E}, std::move(out), ng);
  if (!ng) return id;
  auto ins = xs;
  n(id).backprop = [this, x, axes, ins, C, A, B, E, id]() {
    const T* go = n(id).grad.data();
    T* dx = n(x).grad.data();
    std::int64_t o = 0;
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
          for (int e = 0; e < E; ++e, ++o) {
            std::int64_t src =
                ((static_cast<std::int64_t>(c) * ins[1] + (axes[0] ? a / 2 : a)) * ins[2] +
                 (axes[1] ? b / 2 : b)) *
                    ins[3] +
                (axes[2] ? e / 2 : e);
            dx[src] += go[o];
          }
  };
  return id;
}

template <typename T>
int Graph<T>::permute4(int x, std::array<int, 4> perm) {
  const auto& xs = n(x).shape;
  if (xs.size() != 4) throw DimensionError("permute4: input must be rank 4");
  {
    std::array<bool, 4> seen{};
    for (int v : perm) {
      if (v < 0 || v > 3 || seen[static_cast<std::size_t>(v)])
        throw InvalidArgumentError("permute4: not a bijection");
      seen[static_cast<std::size_t>(v)] = true;
    }
  }
  std::vector<int> os(4);
  for (int i = 0; i < 4; ++i) os[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  std::vector<T> out(n(x).value.size());
  const T* X = n(x).value.data();
  std::array<std::int64_t, 4> xstride{static_cast<std::int64_t>(xs[1]) * xs[2] * xs[3],
                                      static_cast<std::int64_t>(xs[2]) * xs[3], xs[3], 1};
  std::int64_t o = 0;
  std::array<int, 4> c{};
  for (c[0] = 0; c[0] < os[0]; ++c[0])
    for (c[1] = 0; c[1] < os[1]; ++c[1])
      for (c[2] = 0; c[2] < os[2]; ++c[2])
        for (c[3] = 0; c[3] < os[3]; ++c[3], ++o) {
          std::int64_t src = 0;
          for (int i = 0; i < 4; ++i)
            src += static_cast<std::int64_t>(c[static_cast<std::size_t>(i)]) *
                   xstride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
          out[static_cast<std::size_t>(o)] = X[src];
        }
  bool ng = n(x).needs_grad;
  int id = push(std::move(os), std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, perm, xstride, id]() {
    const auto& osh = n(id).shape;
    const T* go = n(id).grad.data();
    T* dx = n(x).grad.data();
    std::int64_t o = 0;
    std::array<int, 4> c{};
    for (c[0] = 0; c[0] < osh[0]; ++c[0])
      for (c[1] = 0; c[1] < osh[1]; ++c[1])
        for (c[2] = 0; c[2] < osh[2]; ++c[2])
          for (c[3] = 0; c[3] < osh[3]; ++c[3], ++o) {
            std::int64_t src = 0;
            for (int i = 0; i < 4; ++i)
              src += static_cast<std::int64_t>(c[static_cast<std::size_t>(i)]) *
                     xstride[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            dx[src] += go[o];
          }
  };
  return id;
}

template <typename T>
int Graph<T>::reshape(int x, std::vector<int> shape) {
  if (Tensor<T>::numel_of(shape) != static_cast<std::int64_t>(n(x).value.size()))
    throw DimensionError("reshape: element count mismatch");
  bool ng = n(x).needs_grad;
  int id = push(std::move(shape), n(x).value, ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    const auto& go = n(id).grad;
    T* dx = n(x).grad.data();
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
  };
  return id;
}

template <typename T>
int Graph<T>::concat0(const std::vector<int>& xs) {
  if (xs.empty()) throw InvalidArgumentError("concat0: no inputs");
  const auto& s0 = n(xs[0]).shape;
  if (s0.size() != 4) throw DimensionError("concat0: inputs must be rank 4");
  int C = 0;
  bool ng = false;
  for (int x : xs) {
    const auto& s = n(x).shape;
    if (s.size() != 4 || s[1] != s0[1] || s[2] != s0[2] || s[3] != s0[3])
      throw DimensionError("concat0: trailing extents differ");
    C += s[0];
    ng = ng || n(x).needs_grad;
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(C) * s0[1] * s0[2] * s0[3]);
  for (int x : xs) out.insert(out.end(), n(x).value.begin(), n(x).value.end());
  int id = push({C, s0[1], s0[2], s0[3]}, std::move(out), ng);
  if (!ng) return id;
  auto inputs = xs;
  n(id).backprop = [this, inputs, id]() {
    const T* go = n(id).grad.data();
    std::int64_t off = 0;
    for (int x : inputs) {
      std::int64_t len = static_cast<std::int64_t>(n(x).value.size());
      if (n(x).needs_grad) {
        T* dx = n(x).grad.data();
        for (std::int64_t i = 0; i < len; ++i) dx[i] += go[off + i];
      }
      off += len;
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
int Graph<T>::add(int a, int b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(n(a).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(a).value[i] + n(b).value[i];
  bool ng = n(a).needs_grad || n(b).needs_grad;
  int id = push(n(a).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, a, b, id]() {
    const auto& go = n(id).grad;
    if (n(a).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(a).grad[i] += go[i];
    if (n(b).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(b).grad[i] += go[i];
  };
  return id;
}

template <typename T>
int Graph<T>::sub(int a, int b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(n(a).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(a).value[i] - n(b).value[i];
  bool ng = n(a).needs_grad || n(b).needs_grad;
  int id = push(n(a).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, a, b, id]() {
    const auto& go = n(id).grad;
    if (n(a).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(a).grad[i] += go[i];
    if (n(b).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(b).grad[i] -= go[i];
  };
  return id;
}

template <typename T>
int Graph<T>::mul(int a, int b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(n(a).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(a).value[i] * n(b).value[i];
  bool ng = n(a).needs_grad || n(b).needs_grad;
  int id = push(n(a).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, a, b, id]() {
    const auto& go = n(id).grad;
    if (n(a).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(a).grad[i] += go[i] * n(b).value[i];
    if (n(b).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(b).grad[i] += go[i] * n(a).value[i];
  };
  return id;
}

template <typename T>
int Graph<T>::div(int a, int b) {
  require_same_shape(a, b, "div");
  std::vector<T> out(n(a).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(a).value[i] / n(b).value[i];
  bool ng = n(a).needs_grad || n(b).needs_grad;
  int id = push(n(a).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, a, b, id]() {
    const auto& go = n(id).grad;
    if (n(a).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i) n(a).grad[i] += go[i] / n(b).value[i];
    if (n(b).needs_grad)
      for (std::size_t i = 0; i < go.size(); ++i)
        n(b).grad[i] -= go[i] * n(a).value[i] / (n(b).value[i] * n(b).value[i]);
  };
  return id;
}

template <typename T>
int Graph<T>::scale(int x, T c) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(x).value[i] * c;
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, c, id]() {
    const auto& go = n(id).grad;
    for (std::size_t i = 0; i < go.size(); ++i) n(x).grad[i] += go[i] * c;
  };
  return id;
}

template <typename T>
int Graph<T>::add_const(int x, T c) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(x).value[i] + c;
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    const auto& go = n(id).grad;
    for (std::size_t i = 0; i < go.size(); ++i) n(x).grad[i] += go[i];
  };
  return id;
}

template <typename T>
int Graph<T>::exp_(int x) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(n(x).value[i]);
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    const auto& go = n(id).grad;
    const auto& y = n(id).value;
    for (std::size_t i = 0; i < go.size(); ++i) n(x).grad[i] += go[i] * y[i];
  };
  return id;
}

template <typename T>
int Graph<T>::log_(int x) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(n(x).value[i]);
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    const auto& go = n(id).grad;
    for (std::size_t i = 0; i < go.size(); ++i) n(x).grad[i] += go[i] / n(x).value[i];
  };
  return id;
}

template <typename T>
int Graph<T>::sigmoid(int x) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = n(x).value[i];
    out[i] = (v >= T(0)) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
  }
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    const auto& go = n(id).grad;
    const auto& y = n(id).value;
    for (std::size_t i = 0; i < go.size(); ++i) n(x).grad[i] += go[i] * y[i] * (T(1) - y[i]);
  };
  return id;
}

template <typename T>
int Graph<T>::relu(int x) {
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = n(x).value[i] > T(0) ? n(x).value[i] : T(0);
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {  // subgradient at 0 is 0
    const auto& go = n(id).grad;
    for (std::size_t i = 0; i < go.size(); ++i)
      if (n(x).value[i] > T(0)) n(x).grad[i] += go[i];
  };
  return id;
}

template <typename T>
int Graph<T>::clamp(int x, T lo, T hi) {
  if (!(lo < hi)) throw InvalidArgumentError("clamp: lo must be < hi");
  std::vector<T> out(n(x).value.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, n(x).value[i]));
  bool ng = n(x).needs_grad;
  int id = push(n(x).shape, std::move(out), ng);
  if (!ng) return id;
  n(id).backprop = [this, x, lo, hi, id]() {  // zero gradient at and beyond the rails
    const auto& go = n(id).grad;
    for (std::size_t i = 0; i < go.size(); ++i) {
      T v = n(x).value[i];
      if (v > lo && v < hi) n(x).grad[i] += go[i];
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
int Graph<T>::sum(int x) {
  T acc = T(0);
  for (T v : n(x).value) acc += v;
  bool ng = n(x).needs_grad;
  int id = push({1}, {acc}, ng);
  if (!ng) return id;
  n(id).backprop = [this, x, id]() {
    T g = n(id).grad[0];
    for (auto& d : n(x).grad) d += g;
  };
  return id;
}

template <typename T>
int Graph<T>::mean(int x) {
  T acc = T(0);
  for (T v : n(x).value) acc += v;
  T inv = T(1) / static_cast<T>(n(x).value.size());
  bool ng = n(x).needs_grad;
  int id = push({1}, {acc * inv}, ng);
  if (!ng) return id;
  n(id).backprop = [this, x, inv, id]() {
    T g = n(id).grad[0] * inv;
    for (auto& d : n(x).grad) d += g;
  };
  return id;
}

template <typename T>
int Graph<T>::soft_dice_loss(int pred, int target, T eps) {
  require_same_shape(pred, target, "soft_dice_loss");
  if (!(eps > T(0))) throw InvalidArgumentError("soft_dice_loss: eps must be > 0");
  const auto& P = n(pred).value;
  const auto& G = n(target).value;
  T pg = T(0), ps = T(0), gs = T(0);
  for (std::size_t i = 0; i < P.size(); ++i) {
    pg += P[i] * G[i];
    ps += P[i];
    gs += G[i];
  }
  T num = T(2) * pg + eps;
  T den = ps + gs + eps;
  T loss = T(1) - num / den;
  bool ng = n(pred).needs_grad || n(target).needs_grad;
  int id = push({1}, {loss}, ng);
  if (!ng) return id;
  n(id).backprop = [this, pred, target, num, den, id]() {
    T g = n(id).grad[0];
    T den2 = den * den;
    const auto& P = n(pred).value;
    const auto& G = n(target).value;
    if (n(pred).needs_grad) {
      T* dp = n(pred).grad.data();
      for (std::size_t i = 0; i < P.size(); ++i)
        dp[i] += g * (num - T(2) * G[i] * den) / den2;
    }
    if (n(target).needs_grad) {
      T* dg = n(target).grad.data();
      for (std::size_t i = 0; i < G.size(); ++i)
        dg[i] += g * (num - T(2) * P[i] * den) / den2;
    }
  };
  return id;
}

template <typename T>
int Graph<T>::kl_diag_gaussian(int mu_q, int lv_q, int mu_p, int lv_p) {
  require_same_shape(mu_q, lv_q, "kl_diag_gaussian");
  require_same_shape(mu_q, mu_p, "kl_diag_gaussian");
  require_same_shape(mu_q, lv_p, "kl_diag_gaussian");
  const auto& MQ = n(mu_q).value;
  const auto& LQ = n(lv_q).value;
  const auto& MP = n(mu_p).value;
  const auto& LP = n(lv_p).value;
  T acc = T(0);
  for (std::size_t i = 0; i < MQ.size(); ++i) {
    T vq = std::exp(LQ[i]);
    T vp = std::exp(LP[i]);
    T dm = MQ[i] - MP[i];
    acc += T(0.5) * ((vq + dm * dm) / vp + LP[i] - LQ[i] - T(1));
  }
  bool ng = n(mu_q).needs_grad || n(lv_q).needs_grad || n(mu_p).needs_grad || n(lv_p).needs_grad;
  int id = push({1}, {acc}, ng);
  if (!ng) return id;
  n(id).backprop = [this, mu_q, lv_q, mu_p, lv_p, id]() {
    T g = n(id).grad[0];
    const auto& MQ = n(mu_q).value;
    const auto& LQ = n(lv_q).value;
    const auto& MP = n(mu_p).value;
    const auto& LP = n(lv_p).value;
    for (std::size_t i = 0; i < MQ.size(); ++i) {
      T vq = std::exp(LQ[i]);
      T vp = std::exp(LP[i]);
      T dm = MQ[i] - MP[i];
      if (n(mu_q).needs_grad) n(mu_q).grad[i] += g * dm / vp;
      if (n(mu_p).needs_grad) n(mu_p).grad[i] -= g * dm / vp;
      if (n(lv_q).needs_grad) n(lv_q).grad[i] += g * T(0.5) * (vq / vp - T(1));
      if (n(lv_p).needs_grad) n(lv_p).grad[i] += g * T(0.5) * (T(1) - (vq + dm * dm) / vp);
    }
  };
  return id;
}

template class Graph<float>;
template class Graph<double>;
template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace fnet
