#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "lossforge/tensor.hpp"

namespace lossforge::layers {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
struct ConvCache {
  RowMat<T> cols;  // (C*k*k, N*Ho*Wo); empty when parameter grads are not needed
  int n = 0, c = 0, h = 0, w = 0, ho = 0, wo = 0;
};

namespace detail {

/// Output columns [lo, hi) whose input column ox*stride - pad + kj lies inside [0, W).
inline std::pair<int, int> valid_range(int Wo, int W, const ConvGeom& g, int kj) {
  const int off = kj - g.pad;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = (W - 1 - off) >= 0 ? (W - 1 - off) / g.stride + 1 : 0;
  lo = std::min(lo, Wo);
  hi = std::clamp(hi, lo, Wo);
  return {lo, hi};
}

template <typename T>
void im2col(const T* img, int C, int H, int W, const ConvGeom& g, int Ho, int Wo, T* dst,
            std::ptrdiff_t row_stride) {
  const int k = g.kernel;
  for (int c = 0; c < C; ++c) {
    const T* src = img + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* out = dst + ((static_cast<std::ptrdiff_t>(c) * k + ki) * k + kj) * row_stride;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* orow = out + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill_n(orow, Wo, T(0));
            continue;
          }
          const T* irow = src + static_cast<std::ptrdiff_t>(iy) * W;
          const auto [lo, hi] = valid_range(Wo, W, g, kj);
          std::fill_n(orow, lo, T(0));
          const int s = g.stride;
          const T* ip = irow + lo * s - g.pad + kj;
          if (s == 1) {
            std::copy_n(ip, hi - lo, orow + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox, ip += s) orow[ox] = *ip;
          }
          std::fill(orow + hi, orow + Wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, const ConvGeom& g, int Ho, int Wo, T* img,
            std::ptrdiff_t row_stride) {
  const int k = g.kernel;
  for (int c = 0; c < C; ++c) {
    T* dst = img + static_cast<std::ptrdiff_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* in = cols + ((static_cast<std::ptrdiff_t>(c) * k + ki) * k + kj) * row_stride;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= H) continue;
          T* drow = dst + static_cast<std::ptrdiff_t>(iy) * W;
          const T* irow = in + oy * Wo;
          const auto [lo, hi] = valid_range(Wo, W, g, kj);
          const int s = g.stride;
          T* dp = drow + lo * s - g.pad + kj;
          for (int ox = lo; ox < hi; ++ox, dp += s) *dp += irow[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Batched im2col + GEMM convolution. `weight` is (Cout, Cin, k, k), `bias` is
/// (1, Cout, 1, 1) or null.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                         const ConvGeom& g, ConvCache<T>* cache = nullptr, bool keep_cols = false) {
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int Cout = weight.n();
  require(weight.c() == C && weight.h() == g.kernel && weight.w() == g.kernel, Errc::ShapeMismatch,
          "conv weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  const int Ho = g.out_size(H), Wo = g.out_size(W);
  require(Ho > 0 && Wo > 0, Errc::ShapeMismatch, "conv input too small");
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(Ho) * Wo;
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(C) * g.kernel * g.kernel;

  RowMat<T> cols(K, N * P);
  for (int i = 0; i < N; ++i) detail::im2col(x.image(i), C, H, W, g, Ho, Wo, cols.data() + i * P, N * P);

  Eigen::Map<const RowMat<T>> wm(weight.data(), Cout, K);
  RowMat<T> y = wm * cols;

  Tensor<T> out(N, Cout, Ho, Wo);
  for (int i = 0; i < N; ++i) {
    for (int o = 0; o < Cout; ++o) {
      const T b = bias ? (*bias)[o] : T(0);
      const T* src = y.data() + o * (N * P) + i * P;
      T* dst = out.channel(i, o);
      for (std::ptrdiff_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
  }
  if (cache) {
    cache->n = N, cache->c = C, cache->h = H, cache->w = W, cache->ho = Ho, cache->wo = Wo;
    if (keep_cols) {
      cache->cols = std::move(cols);
    } else {
      cache->cols.resize(0, 0);
    }
  }
  return out;
}

/// Accumulates into `dweight`/`dbias` when given; overwrites `dx` when given.
template <typename T>
void conv2d_backward(const Tensor<T>& dy, const Tensor<T>& weight, const ConvCache<T>& cache,
                     const ConvGeom& g, Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias) {
  const int N = cache.n, Cout = weight.n();
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(cache.ho) * cache.wo;
  const std::ptrdiff_t K = static_cast<std::ptrdiff_t>(cache.c) * g.kernel * g.kernel;
  require(dy.n() == N && dy.c() == Cout && dy.h() == cache.ho && dy.w() == cache.wo,
          Errc::ShapeMismatch, "conv backward gradient shape");

  RowMat<T> dym(Cout, N * P);
  for (int i = 0; i < N; ++i)
    for (int o = 0; o < Cout; ++o) std::copy_n(dy.channel(i, o), P, dym.data() + o * (N * P) + i * P);

  if (dweight) {
    require(cache.cols.rows() == K, Errc::InvalidArgument, "conv cache holds no columns");
    Eigen::Map<RowMat<T>> dw(dweight->data(), Cout, K);
    dw.noalias() += dym * cache.cols.transpose();
  }
  if (dbias) {
    for (int o = 0; o < Cout; ++o) (*dbias)[o] += dym.row(o).sum();
  }
  if (dx) {
    Eigen::Map<const RowMat<T>> wm(weight.data(), Cout, K);
    RowMat<T> dcols = wm.transpose() * dym;
    *dx = Tensor<T>(N, cache.c, cache.h, cache.w);
    for (int i = 0; i < N; ++i)
      detail::col2im(dcols.data() + i * P, cache.c, cache.h, cache.w, g, cache.ho, cache.wo, dx->image(i), N * P);
  }
}

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> scale;  // gamma / sqrt(var + eps), per channel
  std::vector<T> inv_std;
  bool batch_stats = false;
};

/// Per-channel normalization over (N, H, W). With N = batch * time this is the
/// 3-D batch norm whose statistics span the temporal axis.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, bool batch_stats,
                            bool update_running, const BatchNormOptions& opt,
                            BatchNormCache<T>* cache = nullptr) {
  const int N = x.n(), C = x.c();
  const std::size_t P = x.plane();
  const double M = static_cast<double>(N) * P;
  Tensor<T> out(N, C, x.h(), x.w());
  if (cache) {
    cache->batch_stats = batch_stats;
    cache->scale.assign(C, T(0));
    cache->inv_std.assign(C, T(0));
    cache->xhat = Tensor<T>(N, C, x.h(), x.w());
  }
  for (int c = 0; c < C; ++c) {
    double mean, var;
    if (batch_stats) {
      double s = 0.0;
      for (int i = 0; i < N; ++i) {
        const T* p = x.channel(i, c);
        for (std::size_t k = 0; k < P; ++k) s += p[k];
      }
      mean = s / M;
      double ss = 0.0;
      for (int i = 0; i < N; ++i) {
        const T* p = x.channel(i, c);
        for (std::size_t k = 0; k < P; ++k) {
          const double d = p[k] - mean;
          ss += d * d;
        }
      }
      var = ss / M;
      if (update_running) {
        const double unbiased = M > 1 ? ss / (M - 1) : var;
        running_mean[c] = static_cast<T>((1 - opt.momentum) * running_mean[c] + opt.momentum * mean);
        running_var[c] = static_cast<T>((1 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
    const T g = gamma[c], b = beta[c];
    const T m = static_cast<T>(mean);
    for (int i = 0; i < N; ++i) {
      const T* p = x.channel(i, c);
      T* o = out.channel(i, c);
      T* xh = cache ? cache->xhat.channel(i, c) : nullptr;
      for (std::size_t k = 0; k < P; ++k) {
        const T v = (p[k] - m) * inv_std;
        if (xh) xh[k] = v;
        o[k] = g * v + b;
      }
    }
    if (cache) {
      cache->inv_std[c] = inv_std;
      cache->scale[c] = g * inv_std;
    }
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, const BatchNormCache<T>& cache, Tensor<T>* dgamma,
                             Tensor<T>* dbeta, bool need_dx = true) {
  const int N = dy.n(), C = dy.c();
  const std::size_t P = dy.plane();
  const double M = static_cast<double>(N) * P;
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(N, C, dy.h(), dy.w());
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < N; ++i) {
      const T* g = dy.channel(i, c);
      const T* xh = cache.xhat.channel(i, c);
      for (std::size_t k = 0; k < P; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += static_cast<double>(g[k]) * xh[k];
      }
    }
    if (dbeta) (*dbeta)[c] += static_cast<T>(sum_dy);
    if (dgamma) (*dgamma)[c] += static_cast<T>(sum_dy_xhat);
    if (!need_dx) continue;
    const T scale = cache.scale[c];
    if (cache.batch_stats) {
      const T mean_dy = static_cast<T>(sum_dy / M);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / M);
      for (int i = 0; i < N; ++i) {
        const T* g = dy.channel(i, c);
        const T* xh = cache.xhat.channel(i, c);
        T* o = dx.channel(i, c);
        for (std::size_t k = 0; k < P; ++k) o[k] = scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat);
      }
    } else {
      for (int i = 0; i < N; ++i) {
        const T* g = dy.channel(i, c);
        T* o = dx.channel(i, c);
        for (std::size_t k = 0; k < P; ++k) o[k] = scale * g[k];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> out = x;
  for (auto& v : out.vec()) v = v > T(0) ? v : slope * v;
  return out;
}

/// `x` is the forward input.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& dy, const Tensor<T>& x, T slope) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : slope * dy[i];
  return dx;
}

/// (N, C*r*r, h, w) -> (N, C, h*r, w*r).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  require(x.c() % (r * r) == 0, Errc::ShapeMismatch, "pixel_shuffle channels not divisible by r^2");
  const int C = x.c() / (r * r), h = x.h(), w = x.w();
  Tensor<T> out(x.n(), C, h * r, w * r);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(n, c, y * r + i, xx * r + j) = x(n, (c * r + i) * r + j, y, xx);
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  require(x.h() % r == 0 && x.w() % r == 0, Errc::ShapeMismatch, "pixel_unshuffle size");
  const int C = x.c(), h = x.h() / r, w = x.w() / r;
  Tensor<T> out(x.n(), C * r * r, h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out(n, (c * r + i) * r + j, y, xx) = x(n, c, y * r + i, xx * r + j);
  return out;
}

}  // namespace lossforge::layers
