#pragma once

#include <cmath>
#include <vector>

#include "lossforge/tensor.hpp"

namespace lossforge {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Param<T>>& params, AdamOptions opt) : opt_(opt) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.n(), p.value.c(), p.value.h(), p.value.w());
      v_.emplace_back(p.value.n(), p.value.c(), p.value.h(), p.value.w());
    }
  }

  AdamOptions& options() { return opt_; }
  const AdamOptions& options() const { return opt_; }
  long long steps() const { return t_; }

  void step(std::vector<Param<T>>& params) {
    require(params.size() == m_.size(), Errc::InvalidArgument, "optimizer/parameter count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const double step = opt_.lr / bc1;
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T c1 = T(1) - b1, c2 = T(1) - b2;
    const T inv_bc2 = static_cast<T>(1.0 / bc2), lr = static_cast<T>(step), eps = static_cast<T>(opt_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      T* w = params[k].value.data();
      const T* g = params[k].grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const std::size_t n = params[k].value.size();
      // Explicit fma: peeled and vectorised elements must round identically.
      for (std::size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        const T mi = std::fma(b1, m[i], c1 * gi);
        const T vi = std::fma(b2, v[i], c2 * (gi * gi));
        m[i] = mi;
        v[i] = vi;
        w[i] -= lr * mi / (std::sqrt(vi * inv_bc2) + eps);
      }
    }
  }

  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(long long t) { t_ = t; }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(&t_, sizeof t_);
    for (const auto& m : m_) h = hash_tensor(m, h);
    for (const auto& v : v_) h = hash_tensor(v, h);
    return h;
  }

 private:
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  long long t_ = 0;
};

}  // namespace lossforge
