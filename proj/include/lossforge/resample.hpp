#pragma once

#include <cmath>
#include <vector>

#include "lossforge/error.hpp"

namespace lossforge::resample {

/// Keys cubic with a = -0.5 (Catmull-Rom).
inline double catmull_rom(double x) {
  x = std::abs(x);
  if (x < 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

/// Half-sample symmetric reflection: -1 -> 0, n -> n-1.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Sparse 1-D linear map out[i] = sum_k weight[i][k] * in[index[i][k]].
struct Axis {
  int in_size = 0;
  int out_size = 0;
  int taps = 0;
  std::vector<int> index;     // out_size * taps
  std::vector<double> weight;  // out_size * taps, rows sum to 1
};

/// Windowed cubic resampling. For downscaling the kernel is stretched by the
/// scale factor (antialiased) so each output reads `window` input taps; for
/// upscaling the plain 4-tap kernel is used.
inline Axis cubic_axis(int in_size, int out_size, int window = 0) {
  require(in_size > 0 && out_size > 0, Errc::InvalidArgument, "cubic_axis sizes");
  const double ratio = static_cast<double>(in_size) / out_size;
  const double stretch = ratio > 1.0 ? ratio : 1.0;
  int taps = window > 0 ? window : static_cast<int>(std::ceil(4.0 * stretch));
  Axis a{in_size, out_size, taps, {}, {}};
  a.index.resize(static_cast<std::size_t>(out_size) * taps);
  a.weight.resize(a.index.size());
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * ratio - 0.5;
    const int first = static_cast<int>(std::floor(center - taps / 2.0)) + 1;
    double sum = 0.0;
    for (int k = 0; k < taps; ++k) {
      const int j = first + k;
      const double wgt = catmull_rom((j - center) / stretch);
      a.index[i * taps + k] = reflect_index(j, in_size);
      a.weight[i * taps + k] = wgt;
      sum += wgt;
    }
    for (int k = 0; k < taps; ++k) a.weight[i * taps + k] /= sum;
  }
  return a;
}

/// Same-size normalized Gaussian, radius ceil(3 sigma), reflect-padded.
inline Axis gaussian_axis(int size, double sigma) {
  require(sigma > 0.0, Errc::InvalidArgument, "gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const int taps = 2 * radius + 1;
  std::vector<double> kernel(taps);
  double sum = 0.0;
  for (int k = 0; k < taps; ++k) {
    const double d = k - radius;
    kernel[k] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += kernel[k];
  }
  for (auto& v : kernel) v /= sum;
  Axis a{size, size, taps, {}, {}};
  a.index.resize(static_cast<std::size_t>(size) * taps);
  a.weight.resize(a.index.size());
  for (int i = 0; i < size; ++i)
    for (int k = 0; k < taps; ++k) {
      a.index[i * taps + k] = reflect_index(i + k - radius, size);
      a.weight[i * taps + k] = kernel[k];
    }
  return a;
}

/// Applies `ax` along x then `ay` along y to one H x W plane.
template <typename In, typename Out>
void apply(const In* src, const Axis& ay, const Axis& ax, Out* dst) {
  const int H = ay.in_size, W = ax.in_size, Ho = ay.out_size, Wo = ax.out_size;
  std::vector<double> tmp(static_cast<std::size_t>(H) * Wo);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < ax.taps; ++k) s += ax.weight[x * ax.taps + k] * src[y * W + ax.index[x * ax.taps + k]];
      tmp[y * Wo + x] = s;
    }
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < ay.taps; ++k) s += ay.weight[y * ay.taps + k] * tmp[ay.index[y * ay.taps + k] * Wo + x];
      dst[y * Wo + x] = static_cast<Out>(s);
    }
}

/// Transpose of `apply`: scatters an Ho x Wo gradient back to H x W (accumulating).
template <typename T>
void apply_adjoint(const T* grad_out, const Axis& ay, const Axis& ax, T* grad_in) {
  const int W = ax.in_size, Ho = ay.out_size, Wo = ax.out_size, H = ay.in_size;
  std::vector<double> tmp(static_cast<std::size_t>(H) * Wo, 0.0);
  for (int y = 0; y < Ho; ++y)
    for (int k = 0; k < ay.taps; ++k) {
      const double wgt = ay.weight[y * ay.taps + k];
      const int iy = ay.index[y * ay.taps + k];
      for (int x = 0; x < Wo; ++x) tmp[iy * Wo + x] += wgt * grad_out[y * Wo + x];
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wo; ++x)
      for (int k = 0; k < ax.taps; ++k)
        grad_in[y * W + ax.index[x * ax.taps + k]] += static_cast<T>(ax.weight[x * ax.taps + k] * tmp[y * Wo + x]);
}

}  // namespace lossforge::resample
