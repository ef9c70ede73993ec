#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/params.hpp"
#include "friendly/tensor.hpp"

namespace friendly {

/// Adam with bias correction, constants from the original method
/// (beta1=0.9, beta2=0.999, eps=1e-8). Moment buffers are aligned with the
/// store's entry order and persist across epochs.
template <class Real>
class Adam {
 public:
  explicit Adam(const ParamStore<Real>& store, Real beta1 = Real(0.9),
                Real beta2 = Real(0.999), Real eps = Real(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : store.entries()) {
      m_.push_back(Tensor<Real>::zeros(e.value.shape));
      v_.push_back(Tensor<Real>::zeros(e.value.shape));
    }
  }

  std::int64_t step_count() const { return t_; }

  void reset() {
    t_ = 0;
    for (auto& t : m_) t.data.assign(t.data.size(), Real(0));
    for (auto& t : v_) t.data.assign(t.data.size(), Real(0));
  }

  /// One update over all trainable entries; grads must be entry-aligned.
  void step(ParamStore<Real>& store, const std::vector<Tensor<Real>>& grads, Real lr) {
    if (lr <= Real(0)) throw Error("adam: learning rate must be positive");
    if (grads.size() != store.size()) throw Error("adam: gradient count mismatch");
    ++t_;
    const Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(t_));
    const Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(t_));
    auto& entries = store.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      if (!entries[p].trainable) continue;
      auto& w = entries[p].value;
      const auto& g = grads[p];
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.numel(); ++i) {
        m[i] = beta1_ * m[i] + (Real(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (Real(1) - beta2_) * g[i] * g[i];
        const Real mhat = m[i] / bc1;
        const Real vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  Real beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor<Real>> m_, v_;
};

}  // namespace friendly
