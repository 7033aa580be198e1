#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lossforge/layers.hpp"
#include "lossforge/resample.hpp"
#include "lossforge/rng.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

/// Restoration network contract: consumes frames (t-1, t, t+1) concatenated
/// along channels, (B, 9, h, w), and produces the centre frame at `scale`
/// times the input size. Trainer and objectives only use this interface.
template <typename T>
class Generator {
 public:
  virtual ~Generator() = default;

  virtual std::string arch_id() const = 0;
  virtual int scale() const = 0;
  virtual int receptive_frames() const { return 3; }

  /// Unclamped output. `keep_cache` retains what `backward` needs.
  virtual Tensor<T> forward(const Tensor<T>& input, bool keep_cache) = 0;
  /// Accumulates parameter gradients for the last cached forward; returns
  /// dL/dinput when `need_dx`.
  virtual Tensor<T> backward(const Tensor<T>& dout, bool need_dx) = 0;

  virtual std::vector<Param<T>>& params() = 0;
  virtual const std::vector<Param<T>>& params() const = 0;

  /// Construction arguments, stored in checkpoints.
  virtual std::map<std::string, std::string> describe() const = 0;

  void zero_grad() { zero_grads(params()); }
  std::uint64_t hash() const { return hash_params(params()); }
};

/// Channel-concatenates each triplet: (B, 9, h, w).
template <typename T, typename Seq>
Tensor<T> stack_inputs(const std::vector<Seq>& seqs) {
  require(!seqs.empty(), Errc::InvalidArgument, "stack_inputs: empty batch");
  const auto& f0 = seqs.front()[0];
  Tensor<T> out(static_cast<int>(seqs.size()), 3 * f0.c(), f0.h(), f0.w());
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    T* dst = out.image(static_cast<int>(b));
    for (int t = 0; t < 3; ++t) {
      const auto& f = seqs[b][t];
      require(f.c() == f0.c() && f.h() == f0.h() && f.w() == f0.w(), Errc::ShapeMismatch,
              "generator input frames differ in size");
      for (std::size_t i = 0; i < f.size(); ++i) dst[t * f.size() + i] = static_cast<T>(f[i]);
    }
  }
  return out;
}

/// Single restored centre frame, clamped to [0, 1].
template <typename T, typename Frame>
Frame generate(Generator<T>& g, const std::array<Frame, 3>& input) {
  std::vector<std::array<Frame, 3>> batch{input};
  Tensor<T> out = g.forward(stack_inputs<T>(batch), false);
  Frame f(1, out.c(), out.h(), out.w());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::clamp(static_cast<double>(out[i]), 0.0, 1.0);
  return f;
}

/// Small residual CNN: `depth` 3x3 conv + leaky-relu blocks of `width`
/// channels on the concatenated triplet, a zero-initialised 3x3 conv to
/// 3*scale^2 channels, pixel shuffle, plus the cubic-upsampled centre frame.
template <typename T>
class ReferenceGenerator final : public Generator<T> {
 public:
  ReferenceGenerator(int scale, int width = 32, int depth = 4, std::uint64_t seed = 0, double slope = 0.1)
      : scale_(scale), width_(width), depth_(depth), seed_(seed), slope_(static_cast<T>(slope)) {
    require(scale == 1 || scale == 4, Errc::InvalidArgument, "reference generator scale must be 1 or 4");
    require(width > 0 && depth > 0, Errc::InvalidArgument, "reference generator width/depth must be positive");
    Rng rng(seed);
    int in_c = 9;
    for (int d = 0; d < depth; ++d) {
      const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * in_c * 9.0));
      Tensor<T> w(width, in_c, 3, 3);
      for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
      params_.emplace_back("g" + std::to_string(d) + ".weight", std::move(w));
      params_.emplace_back("g" + std::to_string(d) + ".bias", Tensor<T>(1, width, 1, 1));
      in_c = width;
    }
    params_.emplace_back("out.weight", Tensor<T>(3 * scale * scale, width, 3, 3));
    params_.emplace_back("out.bias", Tensor<T>(1, 3 * scale * scale, 1, 1));
  }

  /// Closed-form parameter count of the layer stack.
  static std::size_t parameter_count(int scale, int width, int depth) {
    const std::size_t w = width, s2 = static_cast<std::size_t>(scale) * scale;
    return (9 * w * 9 + w) + (depth - 1) * (w * w * 9 + w) + (w * 3 * s2 * 9 + 3 * s2);
  }

  std::string arch_id() const override { return "reference"; }
  int scale() const override { return scale_; }
  std::vector<Param<T>>& params() override { return params_; }
  const std::vector<Param<T>>& params() const override { return params_; }

  std::map<std::string, std::string> describe() const override {
    return {{"arch", arch_id()},
            {"scale", std::to_string(scale_)},
            {"width", std::to_string(width_)},
            {"depth", std::to_string(depth_)},
            {"seed", std::to_string(seed_)}};
  }

  Tensor<T> forward(const Tensor<T>& input, bool keep_cache) override {
    require(input.c() == 9, Errc::ShapeMismatch, "generator expects 9 input channels, got " + shape_str(input.shape()));
    const int B = input.n(), h = input.h(), w = input.w();
    cache_ = {};
    cache_.conv.resize(depth_ + 1);
    Tensor<T> x = input;
    for (int d = 0; d < depth_; ++d) {
      Tensor<T> pre = layers::conv2d_forward(x, params_[2 * d].value, &params_[2 * d + 1].value, geom(),
                                             &cache_.conv[d], keep_cache);
      x = layers::leaky_relu(pre, slope_);
      if (keep_cache) cache_.pre.push_back(std::move(pre));
    }
    Tensor<T> res = layers::conv2d_forward(x, params_[2 * depth_].value, &params_[2 * depth_ + 1].value, geom(),
                                           &cache_.conv[depth_], keep_cache);
    Tensor<T> out = scale_ == 1 ? std::move(res) : layers::pixel_shuffle(res, scale_);

    const int H = h * scale_, W = w * scale_;
    if (scale_ == 1) {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < 3; ++c) {
          const T* src = input.channel(b, 3 + c);
          T* dst = out.channel(b, c);
          for (std::size_t i = 0; i < out.plane(); ++i) dst[i] += src[i];
        }
    } else {
      ensure_axes(h, w);
      std::vector<T> up(static_cast<std::size_t>(H) * W);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < 3; ++c) {
          resample::apply(input.channel(b, 3 + c), ay_, ax_, up.data());
          T* dst = out.channel(b, c);
          for (std::size_t i = 0; i < up.size(); ++i) dst[i] += up[i];
        }
    }
    cache_.valid = keep_cache;
    cache_.in_h = h, cache_.in_w = w, cache_.batch = B;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dout, bool need_dx) override {
    require(cache_.valid, Errc::InvalidArgument, "generator backward without cached forward");
    Tensor<T> dres = scale_ == 1 ? dout : layers::pixel_unshuffle(dout, scale_);
    Tensor<T> dx;
    layers::conv2d_backward(dres, params_[2 * depth_].value, cache_.conv[depth_], geom(), &dx,
                            &params_[2 * depth_].grad, &params_[2 * depth_ + 1].grad);
    for (int d = depth_ - 1; d >= 0; --d) {
      Tensor<T> dpre = layers::leaky_relu_backward(dx, cache_.pre[d], slope_);
      const bool want = d > 0 || need_dx;
      Tensor<T> dprev;
      layers::conv2d_backward(dpre, params_[2 * d].value, cache_.conv[d], geom(), want ? &dprev : nullptr,
                              &params_[2 * d].grad, &params_[2 * d + 1].grad);
      dx = std::move(dprev);
    }
    if (!need_dx) return {};
    for (int b = 0; b < cache_.batch; ++b)
      for (int c = 0; c < 3; ++c) {
        T* dst = dx.channel(b, 3 + c);
        const T* src = dout.channel(b, c);
        if (scale_ == 1) {
          for (std::size_t i = 0; i < dx.plane(); ++i) dst[i] += src[i];
        } else {
          resample::apply_adjoint(src, ay_, ax_, dst);
        }
      }
    return dx;
  }

 private:
  static layers::ConvGeom geom() { return {3, 1, 1}; }

  void ensure_axes(int h, int w) {
    if (ay_.in_size == h && ax_.in_size == w) return;
    ay_ = resample::cubic_axis(h, h * scale_);
    ax_ = resample::cubic_axis(w, w * scale_);
  }

  struct Cache {
    std::vector<layers::ConvCache<T>> conv;
    std::vector<Tensor<T>> pre;
    bool valid = false;
    int in_h = 0, in_w = 0, batch = 0;
  };

  int scale_, width_, depth_;
  std::uint64_t seed_;
  T slope_;
  std::vector<Param<T>> params_;
  resample::Axis ay_, ax_;
  Cache cache_;
};

/// Rebuilds a generator from `describe()` output.
template <typename T>
std::unique_ptr<Generator<T>> make_generator(const std::map<std::string, std::string>& d) {
  const auto get = [&](const char* k) {
    auto it = d.find(k);
    require(it != d.end(), Errc::Config, std::string("generator description lacks '") + k + "'");
    return it->second;
  };
  const std::string arch = get("arch");
  if (arch == "reference") {
    return std::make_unique<ReferenceGenerator<T>>(std::stoi(get("scale")), std::stoi(get("width")),
                                                   std::stoi(get("depth")), std::stoull(get("seed")));
  }
  throw Error(Errc::Config, "unknown generator arch '" + arch + "'");
}

}  // namespace lossforge
