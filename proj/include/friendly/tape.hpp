#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/rng.hpp"
#include "friendly/tensor.hpp"

namespace friendly {

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  scale,
  tanh_fn,
  relu,
  softmax,
  conv2d,
  maxpool2d,
  pad2d,
  upsample2d,
  batchnorm1d,
  dropout,
  square,
  sum,
  mean,
  concat,
  reshape,
  cross_entropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::scale: return "scale";
    case Op::tanh_fn: return "tanh";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2d: return "maxpool2d";
    case Op::pad2d: return "pad2d";
    case Op::upsample2d: return "upsample2d";
    case Op::batchnorm1d: return "batchnorm1d";
    case Op::dropout: return "dropout";
    case Op::square: return "square";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::concat: return "concat";
    case Op::reshape: return "reshape";
    case Op::cross_entropy: return "cross_entropy";
  }
  return "?";
}

// --- dense matrix helpers (row-major) ---

template <class Real>
void mat_mul_into(const Real* a, std::size_t m, std::size_t k, const Real* b,
                  std::size_t n, Real* c) {
  std::fill(c, c + m * n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m×n] += a^T[(k×m)^T] · b[k×n], with a stored as [k×m].
template <class Real>
void mat_mul_at_b_accum(const Real* a, std::size_t k, std::size_t m, const Real* b,
                        std::size_t n, Real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == Real(0)) continue;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// c[m×k] += a[m×n] · b^T[(k×n)^T], with b stored as [k×n].
template <class Real>
void mat_mul_a_bt_accum(const Real* a, std::size_t m, std::size_t n, const Real* b,
                        std::size_t k, Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * n;
    Real* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* brow = b + p * n;
      Real acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// --- im2col lowering for conv2d (stride 1, valid padding) ---

template <class Real>
void im2col(const Tensor<Real>& x, std::size_t kh, std::size_t kw,
            std::vector<Real>& cols) {
  const std::size_t b = x.shape[0], cin = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t ho = h - kh + 1, wo = w - kw + 1;
  const std::size_t patch = cin * kh * kw;
  cols.assign(b * ho * wo * patch, Real(0));
  std::size_t r = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j, ++r) {
        Real* dst = cols.data() + r * patch;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v)
              *dst++ = x.at4(n, c, i + u, j + v);
      }
}

template <class Real>
void col2im_accum(const std::vector<Real>& cols, std::size_t kh, std::size_t kw,
                  Tensor<Real>& dx) {
  const std::size_t b = dx.shape[0], cin = dx.shape[1], h = dx.shape[2],
                    w = dx.shape[3];
  const std::size_t ho = h - kh + 1, wo = w - kw + 1;
  const std::size_t patch = cin * kh * kw;
  std::size_t r = 0;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j, ++r) {
        const Real* src = cols.data() + r * patch;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v)
              dx.at4(n, c, i + u, j + v) += *src++;
      }
}

/// Reverse-mode tape. Every builder records the forward value plus whatever the
/// backward rule needs; backward() visits nodes once in reverse order.
template <class Real>
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    std::vector<int> in;
    Tensor<Real> value;
    bool requires_grad = false;
    Real scalar = 0;               // scale factor / dropout rate
    Tensor<Real> saved;            // dropout mask, bn x_hat, ce probs
    Tensor<Real> saved2;           // bn inv_std, ce per-example losses
    std::vector<int> aux;          // maxpool argmax, pad width, labels, axis
    bool flag = false;             // bn/dropout train mode
  };

  int leaf(Tensor<Real> v, bool requires_grad = false) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  int matmul(int a, int b) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
      shape_error(Op::matmul, A, B);
    Tensor<Real> out({A.shape[0], B.shape[1]});
    mat_mul_into(A.data.data(), A.shape[0], A.shape[1], B.data.data(), B.shape[1],
                 out.data.data());
    return push(make(Op::matmul, {a, b}, std::move(out)));
  }

  // add supports: same shape; [b×n]+[n]; [b,c,h,w]+[c].
  int add(int a, int b) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(b);
    Tensor<Real> out = A;
    if (A.same_shape(B)) {
      for (std::size_t i = 0; i < out.numel(); ++i) out[i] += B[i];
    } else if (A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
      for (std::size_t i = 0; i < A.shape[0]; ++i)
        for (std::size_t j = 0; j < A.shape[1]; ++j) out.at2(i, j) += B[j];
    } else if (A.rank() == 4 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
      for (std::size_t n = 0; n < A.shape[0]; ++n)
        for (std::size_t c = 0; c < A.shape[1]; ++c)
          for (std::size_t h = 0; h < A.shape[2]; ++h)
            for (std::size_t w = 0; w < A.shape[3]; ++w) out.at4(n, c, h, w) += B[c];
    } else {
      shape_error(Op::add, A, B);
    }
    return push(make(Op::add, {a, b}, std::move(out)));
  }

  int sub(int a, int b) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(b);
    if (!A.same_shape(B)) shape_error(Op::sub, A, B);
    Tensor<Real> out = A;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
    return push(make(Op::sub, {a, b}, std::move(out)));
  }

  int scale(int a, Real c) {
    Tensor<Real> out = val(a);
    for (Real& v : out.data) v *= c;
    Node n = make(Op::scale, {a}, std::move(out));
    n.scalar = c;
    return push(std::move(n));
  }

  int tanh_fn(int a) {
    Tensor<Real> out = val(a);
    for (Real& v : out.data) v = std::tanh(v);
    return push(make(Op::tanh_fn, {a}, std::move(out)));
  }

  int relu(int a) {
    Tensor<Real> out = val(a);
    for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
    return push(make(Op::relu, {a}, std::move(out)));
  }

  int square(int a) {
    Tensor<Real> out = val(a);
    for (Real& v : out.data) v = v * v;
    return push(make(Op::square, {a}, std::move(out)));
  }

  /// Row-wise softmax with log-sum-exp stabilization.
  int softmax(int a) {
    const Tensor<Real>& A = val(a);
    if (A.rank() != 2) shape_error(Op::softmax, A, A);
    Tensor<Real> out = A;
    const std::size_t b = A.shape[0], c = A.shape[1];
    for (std::size_t i = 0; i < b; ++i) {
      Real mx = out.at2(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at2(i, j));
      Real z = 0;
      for (std::size_t j = 0; j < c; ++j) {
        const Real e = std::exp(out.at2(i, j) - mx);
        out.at2(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < c; ++j) out.at2(i, j) /= z;
    }
    return push(make(Op::softmax, {a}, std::move(out)));
  }

  int conv2d(int x, int k) {
    const Tensor<Real>& X = val(x);
    const Tensor<Real>& K = val(k);
    if (X.rank() != 4 || K.rank() != 4 || X.shape[1] != K.shape[1] ||
        X.shape[2] < K.shape[2] || X.shape[3] < K.shape[3])
      shape_error(Op::conv2d, X, K);
    const std::size_t b = X.shape[0], cout = K.shape[0], kh = K.shape[2],
                      kw = K.shape[3];
    const std::size_t ho = X.shape[2] - kh + 1, wo = X.shape[3] - kw + 1;
    const std::size_t patch = X.shape[1] * kh * kw;
    std::vector<Real> cols;
    im2col(X, kh, kw, cols);
    // kmat[q][o] = K[o][...q...]
    std::vector<Real> kmat(patch * cout);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t q = 0; q < patch; ++q) kmat[q * cout + o] = K.data[o * patch + q];
    std::vector<Real> rows(b * ho * wo * cout);
    mat_mul_into(cols.data(), b * ho * wo, patch, kmat.data(), cout, rows.data());
    Tensor<Real> out({b, cout, ho, wo});
    std::size_t r = 0;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j, ++r)
          for (std::size_t o = 0; o < cout; ++o) out.at4(n, o, i, j) = rows[r * cout + o];
    return push(make(Op::conv2d, {x, k}, std::move(out)));
  }

  /// 2x2 max pooling, stride 2; spatial dims must be even.
  int maxpool2d(int x) {
    const Tensor<Real>& X = val(x);
    if (X.rank() != 4 || X.shape[2] % 2 != 0 || X.shape[3] % 2 != 0)
      shape_error(Op::maxpool2d, X, X);
    const std::size_t b = X.shape[0], c = X.shape[1], ho = X.shape[2] / 2,
                      wo = X.shape[3] / 2;
    Tensor<Real> out({b, c, ho, wo});
    std::vector<int> arg(out.numel());
    std::size_t oi = 0;
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j, ++oi) {
            Real best = X.at4(n, ch, 2 * i, 2 * j);
            std::size_t bu = 2 * i, bv = 2 * j;
            for (std::size_t u = 2 * i; u < 2 * i + 2; ++u)
              for (std::size_t v = 2 * j; v < 2 * j + 2; ++v)
                if (X.at4(n, ch, u, v) > best) {
                  best = X.at4(n, ch, u, v);
                  bu = u;
                  bv = v;
                }
            out.data[oi] = best;
            arg[oi] = static_cast<int>(((n * c + ch) * X.shape[2] + bu) * X.shape[3] + bv);
          }
    Node nd = make(Op::maxpool2d, {x}, std::move(out));
    nd.aux = std::move(arg);
    return push(std::move(nd));
  }

  /// Zero padding of p pixels on all four sides.
  int pad2d(int x, int p) {
    const Tensor<Real>& X = val(x);
    if (X.rank() != 4 || p < 0) shape_error(Op::pad2d, X, X);
    const std::size_t b = X.shape[0], c = X.shape[1], h = X.shape[2], w = X.shape[3];
    const std::size_t pp = static_cast<std::size_t>(p);
    Tensor<Real> out({b, c, h + 2 * pp, w + 2 * pp});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out.at4(n, ch, i + pp, j + pp) = X.at4(n, ch, i, j);
    Node nd = make(Op::pad2d, {x}, std::move(out));
    nd.aux = {p};
    return push(std::move(nd));
  }

  /// Nearest-neighbour 2x upsampling.
  int upsample2d(int x) {
    const Tensor<Real>& X = val(x);
    if (X.rank() != 4) shape_error(Op::upsample2d, X, X);
    const std::size_t b = X.shape[0], c = X.shape[1], h = X.shape[2], w = X.shape[3];
    Tensor<Real> out({b, c, 2 * h, 2 * w});
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < 2 * h; ++i)
          for (std::size_t j = 0; j < 2 * w; ++j)
            out.at4(n, ch, i, j) = X.at4(n, ch, i / 2, j / 2);
    return push(make(Op::upsample2d, {x}, std::move(out)));
  }

  /// Batch normalization over [b×n]. Running stats live outside the tape and
  /// are only written when update_running is set (train mode of the net that
  /// owns them); gradients never flow into them.
  int batchnorm1d(int x, int gamma, int beta, Tensor<Real>* run_mean,
                  Tensor<Real>* run_var, bool train, bool update_running,
                  Real momentum = Real(0.1), Real eps = Real(1e-5)) {
    const Tensor<Real>& X = val(x);
    const Tensor<Real>& G = val(gamma);
    if (X.rank() != 2 || G.rank() != 1 || G.shape[0] != X.shape[1])
      shape_error(Op::batchnorm1d, X, G);
    const std::size_t b = X.shape[0], nfeat = X.shape[1];
    Tensor<Real> xhat({b, nfeat});
    Tensor<Real> inv_std({nfeat});
    if (train) {
      for (std::size_t j = 0; j < nfeat; ++j) {
        Real m = 0;
        for (std::size_t i = 0; i < b; ++i) m += X.at2(i, j);
        m /= static_cast<Real>(b);
        Real v = 0;
        for (std::size_t i = 0; i < b; ++i) {
          const Real d = X.at2(i, j) - m;
          v += d * d;
        }
        v /= static_cast<Real>(b);
        const Real is = Real(1) / std::sqrt(v + eps);
        inv_std[j] = is;
        for (std::size_t i = 0; i < b; ++i) xhat.at2(i, j) = (X.at2(i, j) - m) * is;
        if (update_running && run_mean && run_var) {
          (*run_mean)[j] = (Real(1) - momentum) * (*run_mean)[j] + momentum * m;
          (*run_var)[j] = (Real(1) - momentum) * (*run_var)[j] + momentum * v;
        }
      }
    } else {
      for (std::size_t j = 0; j < nfeat; ++j) {
        const Real m = run_mean ? (*run_mean)[j] : Real(0);
        const Real v = run_var ? (*run_var)[j] : Real(1);
        const Real is = Real(1) / std::sqrt(v + eps);
        inv_std[j] = is;
        for (std::size_t i = 0; i < b; ++i) xhat.at2(i, j) = (X.at2(i, j) - m) * is;
      }
    }
    Tensor<Real> out({b, nfeat});
    const Tensor<Real>& Bt = val(beta);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < nfeat; ++j)
        out.at2(i, j) = G[j] * xhat.at2(i, j) + Bt[j];
    Node nd = make(Op::batchnorm1d, {x, gamma, beta}, std::move(out));
    nd.saved = std::move(xhat);
    nd.saved2 = std::move(inv_std);
    nd.flag = train;
    return push(std::move(nd));
  }

  /// Inverted dropout; the mask depends only on the provided key.
  int dropout(int x, Real rate, bool train, std::uint64_t key) {
    const Tensor<Real>& X = val(x);
    if (rate < Real(0) || rate >= Real(1))
      throw Error(std::string("dropout: rate out of range [0,1): ") +
                  std::to_string(static_cast<double>(rate)));
    if (!train || rate == Real(0)) {
      Node nd = make(Op::dropout, {x}, X);
      nd.flag = false;
      return push(std::move(nd));
    }
    Rng rng(key);
    const Real keep = Real(1) - rate;
    Tensor<Real> mask(X.shape);
    for (std::size_t i = 0; i < mask.numel(); ++i)
      mask[i] = rng.uniform01() < static_cast<double>(keep) ? Real(1) / keep : Real(0);
    Tensor<Real> out = X;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    Node nd = make(Op::dropout, {x}, std::move(out));
    nd.saved = std::move(mask);
    nd.flag = true;
    nd.scalar = rate;
    return push(std::move(nd));
  }

  int sum(int a) {
    const Tensor<Real>& A = val(a);
    Real s = 0;
    for (Real v : A.data) s += v;
    return push(make(Op::sum, {a}, Tensor<Real>::scalar(s)));
  }

  int mean(int a) {
    const Tensor<Real>& A = val(a);
    Real s = 0;
    for (Real v : A.data) s += v;
    return push(make(Op::mean, {a}, Tensor<Real>::scalar(s / static_cast<Real>(A.numel()))));
  }

  /// Concatenate along axis 1 (features for 2-d, channels for 4-d).
  int concat(int a, int b) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(b);
    if (A.rank() == 2 && B.rank() == 2 && A.shape[0] == B.shape[0]) {
      Tensor<Real> out({A.shape[0], A.shape[1] + B.shape[1]});
      for (std::size_t i = 0; i < A.shape[0]; ++i) {
        for (std::size_t j = 0; j < A.shape[1]; ++j) out.at2(i, j) = A.at2(i, j);
        for (std::size_t j = 0; j < B.shape[1]; ++j) out.at2(i, A.shape[1] + j) = B.at2(i, j);
      }
      return push(make(Op::concat, {a, b}, std::move(out)));
    }
    if (A.rank() == 4 && B.rank() == 4 && A.shape[0] == B.shape[0] &&
        A.shape[2] == B.shape[2] && A.shape[3] == B.shape[3]) {
      Tensor<Real> out({A.shape[0], A.shape[1] + B.shape[1], A.shape[2], A.shape[3]});
      for (std::size_t n = 0; n < A.shape[0]; ++n)
        for (std::size_t h = 0; h < A.shape[2]; ++h)
          for (std::size_t w = 0; w < A.shape[3]; ++w) {
            for (std::size_t c = 0; c < A.shape[1]; ++c)
              out.at4(n, c, h, w) = A.at4(n, c, h, w);
            for (std::size_t c = 0; c < B.shape[1]; ++c)
              out.at4(n, A.shape[1] + c, h, w) = B.at4(n, c, h, w);
          }
      return push(make(Op::concat, {a, b}, std::move(out)));
    }
    shape_error(Op::concat, A, B);
    return -1;
  }

  int reshape(int a, std::vector<std::size_t> new_shape) {
    const Tensor<Real>& A = val(a);
    if (Tensor<Real>::count(new_shape) != A.numel()) shape_error(Op::reshape, A, A);
    Tensor<Real> out(std::move(new_shape), A.data);
    return push(make(Op::reshape, {a}, std::move(out)));
  }

  /// Fused log-softmax + NLL, mean over the batch. Saves the softmax
  /// probabilities and the per-example losses.
  int cross_entropy(int logits, const std::vector<int>& labels) {
    const Tensor<Real>& L = val(logits);
    if (L.rank() != 2 || L.shape[0] != labels.size())
      throw Error("cross_entropy: logits " + L.shape_str() + " vs " +
                  std::to_string(labels.size()) + " labels");
    const std::size_t b = L.shape[0], c = L.shape[1];
    Tensor<Real> probs({b, c});
    Tensor<Real> per({b});
    Real total = 0;
    for (std::size_t i = 0; i < b; ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= c)
        throw Error("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                    std::to_string(c) + ")");
      Real mx = L.at2(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, L.at2(i, j));
      Real z = 0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(L.at2(i, j) - mx);
      const Real lse = mx + std::log(z);
      for (std::size_t j = 0; j < c; ++j) probs.at2(i, j) = std::exp(L.at2(i, j) - lse);
      per[i] = lse - L.at2(i, static_cast<std::size_t>(y));
      total += per[i];
    }
    Node nd = make(Op::cross_entropy, {logits},
                   Tensor<Real>::scalar(total / static_cast<Real>(b)));
    nd.saved = std::move(probs);
    nd.saved2 = std::move(per);
    nd.aux = labels;
    return push(std::move(nd));
  }

  const Tensor<Real>& value(int id) const { return val(id); }

  /// Per-example losses of a cross_entropy node.
  const Tensor<Real>& per_example(int id) const {
    check_id(id);
    if (nodes_[static_cast<std::size_t>(id)].op != Op::cross_entropy)
      throw Error("per_example: node is not a cross_entropy node");
    return nodes_[static_cast<std::size_t>(id)].saved2;
  }

  /// Softmax probabilities saved by a cross_entropy node.
  const Tensor<Real>& ce_probs(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].saved;
  }

  void backward(int root) {
    check_id(root);
    const auto& rn = nodes_[static_cast<std::size_t>(root)];
    if (rn.value.numel() != 1)
      throw Error("backward: root must be scalar, got " + rn.value.shape_str());
    grads_.assign(nodes_.size(), Tensor<Real>());
    if (!rn.requires_grad) return;  // constant root: all gradients stay zero
    grads_[static_cast<std::size_t>(root)] = Tensor<Real>::scalar(Real(1));
    for (int i = root; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || grads_[static_cast<std::size_t>(i)].numel() == 0) continue;
      propagate(static_cast<std::size_t>(i));
    }
  }

  /// Gradient of a node after backward(); zeros if the node was not reached.
  Tensor<Real> grad(int id) const {
    check_id(id);
    const auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.numel() == 0) return Tensor<Real>::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor<Real>> grads_;

  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error("tape: node " + std::to_string(id) + " is not on this tape");
  }

  const Tensor<Real>& val(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  Node make(Op op, std::vector<int> in, Tensor<Real> value) {
    Node n;
    n.op = op;
    n.requires_grad = false;
    for (int i : in) {
      check_id(i);
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
    }
    n.in = std::move(in);
    n.value = std::move(value);
    return n;
  }

  int push(Node n) {
    if (debug_checks_enabled() && !n.value.all_finite())
      throw Error(std::string("non-finite forward value in ") + op_name(n.op));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  [[noreturn]] void shape_error(Op op, const Tensor<Real>& a, const Tensor<Real>& b) const {
    throw Error(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() +
                " and " + b.shape_str());
  }

  Tensor<Real>& grad_slot(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.numel() == 0) g = Tensor<Real>::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  }

  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void propagate(std::size_t i) {
    const Node& n = nodes_[i];
    const Tensor<Real>& gy = grads_[i];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const Tensor<Real>& A = val(n.in[0]);
        const Tensor<Real>& B = val(n.in[1]);
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          mat_mul_a_bt_accum(gy.data.data(), A.shape[0], B.shape[1], B.data.data(),
                             A.shape[1], ga.data.data());
        }
        if (wants(n.in[1])) {
          Tensor<Real>& gb = grad_slot(n.in[1]);
          mat_mul_at_b_accum(A.data.data(), A.shape[0], A.shape[1], gy.data.data(),
                             B.shape[1], gb.data.data());
        }
        break;
      }
      case Op::add: {
        const Tensor<Real>& A = val(n.in[0]);
        const Tensor<Real>& B = val(n.in[1]);
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += gy[k];
        }
        if (wants(n.in[1])) {
          Tensor<Real>& gb = grad_slot(n.in[1]);
          if (A.same_shape(B)) {
            for (std::size_t k = 0; k < gy.numel(); ++k) gb[k] += gy[k];
          } else if (A.rank() == 2) {
            for (std::size_t r = 0; r < A.shape[0]; ++r)
              for (std::size_t c = 0; c < A.shape[1]; ++c) gb[c] += gy.at2(r, c);
          } else {
            for (std::size_t nn = 0; nn < A.shape[0]; ++nn)
              for (std::size_t c = 0; c < A.shape[1]; ++c)
                for (std::size_t h = 0; h < A.shape[2]; ++h)
                  for (std::size_t w = 0; w < A.shape[3]; ++w) gb[c] += gy.at4(nn, c, h, w);
          }
        }
        break;
      }
      case Op::sub: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += gy[k];
        }
        if (wants(n.in[1])) {
          Tensor<Real>& gb = grad_slot(n.in[1]);
          for (std::size_t k = 0; k < gy.numel(); ++k) gb[k] -= gy[k];
        }
        break;
      }
      case Op::scale: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += n.scalar * gy[k];
        }
        break;
      }
      case Op::tanh_fn: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k)
            ga[k] += gy[k] * (Real(1) - n.value[k] * n.value[k]);
        }
        break;
      }
      case Op::relu: {
        if (wants(n.in[0])) {
          const Tensor<Real>& X = val(n.in[0]);
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k)
            if (X[k] > Real(0)) ga[k] += gy[k];
        }
        break;
      }
      case Op::square: {
        if (wants(n.in[0])) {
          const Tensor<Real>& X = val(n.in[0]);
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += Real(2) * X[k] * gy[k];
        }
        break;
      }
      case Op::softmax: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          const std::size_t b = n.value.shape[0], c = n.value.shape[1];
          for (std::size_t r = 0; r < b; ++r) {
            Real dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += gy.at2(r, j) * n.value.at2(r, j);
            for (std::size_t j = 0; j < c; ++j)
              ga.at2(r, j) += n.value.at2(r, j) * (gy.at2(r, j) - dot);
          }
        }
        break;
      }
      case Op::conv2d: {
        const Tensor<Real>& X = val(n.in[0]);
        const Tensor<Real>& K = val(n.in[1]);
        const std::size_t b = X.shape[0], cout = K.shape[0], kh = K.shape[2],
                          kw = K.shape[3];
        const std::size_t ho = n.value.shape[2], wo = n.value.shape[3];
        const std::size_t patch = X.shape[1] * kh * kw;
        // gy rows: [(b*ho*wo) × cout]
        std::vector<Real> gyrows(b * ho * wo * cout);
        std::size_t r = 0;
        for (std::size_t nn = 0; nn < b; ++nn)
          for (std::size_t i2 = 0; i2 < ho; ++i2)
            for (std::size_t j = 0; j < wo; ++j, ++r)
              for (std::size_t o = 0; o < cout; ++o)
                gyrows[r * cout + o] = gy.at4(nn, o, i2, j);
        if (wants(n.in[1])) {
          std::vector<Real> cols;
          im2col(X, kh, kw, cols);
          // dKmat[q][o] = cols^T · gyrows, then scatter to dK[o][q]
          std::vector<Real> dkmat(patch * cout, Real(0));
          mat_mul_at_b_accum(cols.data(), b * ho * wo, patch, gyrows.data(), cout,
                             dkmat.data());
          Tensor<Real>& gk = grad_slot(n.in[1]);
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t q = 0; q < patch; ++q)
              gk.data[o * patch + q] += dkmat[q * cout + o];
        }
        if (wants(n.in[0])) {
          // dcols = gyrows · Kmat^T, with Kmat[q][o] = K[o][q]
          std::vector<Real> kmat_t(cout * patch);  // [cout × patch] = K reshaped
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t q = 0; q < patch; ++q) kmat_t[o * patch + q] = K.data[o * patch + q];
          std::vector<Real> dcols(b * ho * wo * patch, Real(0));
          mat_mul_into(gyrows.data(), b * ho * wo, cout, kmat_t.data(), patch,
                       dcols.data());
          Tensor<Real>& gx = grad_slot(n.in[0]);
          col2im_accum(dcols, kh, kw, gx);
        }
        break;
      }
      case Op::maxpool2d: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k)
            ga.data[static_cast<std::size_t>(n.aux[k])] += gy[k];
        }
        break;
      }
      case Op::pad2d: {
        if (wants(n.in[0])) {
          const std::size_t p = static_cast<std::size_t>(n.aux[0]);
          Tensor<Real>& ga = grad_slot(n.in[0]);
          const auto& s = ga.shape;
          for (std::size_t nn = 0; nn < s[0]; ++nn)
            for (std::size_t c = 0; c < s[1]; ++c)
              for (std::size_t i2 = 0; i2 < s[2]; ++i2)
                for (std::size_t j = 0; j < s[3]; ++j)
                  ga.at4(nn, c, i2, j) += gy.at4(nn, c, i2 + p, j + p);
        }
        break;
      }
      case Op::upsample2d: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          const auto& s = n.value.shape;
          for (std::size_t nn = 0; nn < s[0]; ++nn)
            for (std::size_t c = 0; c < s[1]; ++c)
              for (std::size_t i2 = 0; i2 < s[2]; ++i2)
                for (std::size_t j = 0; j < s[3]; ++j)
                  ga.at4(nn, c, i2 / 2, j / 2) += gy.at4(nn, c, i2, j);
        }
        break;
      }
      case Op::batchnorm1d: {
        const Tensor<Real>& xhat = n.saved;
        const Tensor<Real>& inv_std = n.saved2;
        const Tensor<Real>& G = val(n.in[1]);
        const std::size_t b = xhat.shape[0], nf = xhat.shape[1];
        if (wants(n.in[1])) {
          Tensor<Real>& gg = grad_slot(n.in[1]);
          for (std::size_t j = 0; j < nf; ++j) {
            Real s = 0;
            for (std::size_t i2 = 0; i2 < b; ++i2) s += gy.at2(i2, j) * xhat.at2(i2, j);
            gg[j] += s;
          }
        }
        if (wants(n.in[2])) {
          Tensor<Real>& gb = grad_slot(n.in[2]);
          for (std::size_t j = 0; j < nf; ++j) {
            Real s = 0;
            for (std::size_t i2 = 0; i2 < b; ++i2) s += gy.at2(i2, j);
            gb[j] += s;
          }
        }
        if (wants(n.in[0])) {
          Tensor<Real>& gx = grad_slot(n.in[0]);
          if (n.flag) {  // train mode: batch statistics carried gradients
            for (std::size_t j = 0; j < nf; ++j) {
              Real sum_gy = 0, sum_gy_xhat = 0;
              for (std::size_t i2 = 0; i2 < b; ++i2) {
                sum_gy += gy.at2(i2, j);
                sum_gy_xhat += gy.at2(i2, j) * xhat.at2(i2, j);
              }
              const Real coef = G[j] * inv_std[j] / static_cast<Real>(b);
              for (std::size_t i2 = 0; i2 < b; ++i2)
                gx.at2(i2, j) += coef * (static_cast<Real>(b) * gy.at2(i2, j) - sum_gy -
                                         xhat.at2(i2, j) * sum_gy_xhat);
            }
          } else {  // eval mode: running stats are constants
            for (std::size_t j = 0; j < nf; ++j)
              for (std::size_t i2 = 0; i2 < b; ++i2)
                gx.at2(i2, j) += gy.at2(i2, j) * G[j] * inv_std[j];
          }
        }
        break;
      }
      case Op::dropout: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          if (n.flag) {
            for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += gy[k] * n.saved[k];
          } else {
            for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += gy[k];
          }
        }
        break;
      }
      case Op::sum: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (Real& v : ga.data) v += gy[0];
        }
        break;
      }
      case Op::mean: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          const Real c = gy[0] / static_cast<Real>(ga.numel());
          for (Real& v : ga.data) v += c;
        }
        break;
      }
      case Op::concat: {
        const Tensor<Real>& A = val(n.in[0]);
        const Tensor<Real>& B = val(n.in[1]);
        if (A.rank() == 2) {
          if (wants(n.in[0])) {
            Tensor<Real>& ga = grad_slot(n.in[0]);
            for (std::size_t i2 = 0; i2 < A.shape[0]; ++i2)
              for (std::size_t j = 0; j < A.shape[1]; ++j) ga.at2(i2, j) += gy.at2(i2, j);
          }
          if (wants(n.in[1])) {
            Tensor<Real>& gb = grad_slot(n.in[1]);
            for (std::size_t i2 = 0; i2 < B.shape[0]; ++i2)
              for (std::size_t j = 0; j < B.shape[1]; ++j)
                gb.at2(i2, j) += gy.at2(i2, A.shape[1] + j);
          }
        } else {
          if (wants(n.in[0])) {
            Tensor<Real>& ga = grad_slot(n.in[0]);
            for (std::size_t nn = 0; nn < A.shape[0]; ++nn)
              for (std::size_t c = 0; c < A.shape[1]; ++c)
                for (std::size_t h = 0; h < A.shape[2]; ++h)
                  for (std::size_t w = 0; w < A.shape[3]; ++w)
                    ga.at4(nn, c, h, w) += gy.at4(nn, c, h, w);
          }
          if (wants(n.in[1])) {
            Tensor<Real>& gb = grad_slot(n.in[1]);
            for (std::size_t nn = 0; nn < B.shape[0]; ++nn)
              for (std::size_t c = 0; c < B.shape[1]; ++c)
                for (std::size_t h = 0; h < B.shape[2]; ++h)
                  for (std::size_t w = 0; w < B.shape[3]; ++w)
                    gb.at4(nn, c, h, w) += gy.at4(nn, A.shape[1] + c, h, w);
          }
        }
        break;
      }
      case Op::reshape: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          for (std::size_t k = 0; k < gy.numel(); ++k) ga[k] += gy[k];
        }
        break;
      }
      case Op::cross_entropy: {
        if (wants(n.in[0])) {
          Tensor<Real>& ga = grad_slot(n.in[0]);
          const Tensor<Real>& probs = n.saved;
          const std::size_t b = probs.shape[0], c = probs.shape[1];
          const Real inv_b = Real(1) / static_cast<Real>(b);
          for (std::size_t i2 = 0; i2 < b; ++i2) {
            const std::size_t y = static_cast<std::size_t>(n.aux[i2]);
            for (std::size_t j = 0; j < c; ++j) {
              Real g = probs.at2(i2, j);
              if (j == y) g -= Real(1);
              ga.at2(i2, j) += gy[0] * g * inv_b;
            }
          }
        }
        break;
      }
    }
  }
};

}  // namespace friendly
