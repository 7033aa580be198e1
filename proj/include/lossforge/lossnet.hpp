#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lossforge/layers.hpp"
#include "lossforge/rng.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

/// Loss network T = (F, C).
///
/// F: four space-only conv layers (1x7x7 then 1x3x3, spatial stride 2), each
/// followed by a batch norm whose statistics span batch, time and space. The
/// leaky relu sits at the *start* of the next layer, so a pyramid level F^j
/// is the batch-norm output of layer j.
///
/// C: lrelu -> 3x3x3 conv (stride (1,2,2), no temporal padding, 256 filters)
/// -> lrelu -> 1x1x1 conv to one logit per patch. The 3x3x3 conv over three
/// stacked frames is stored as a 2-D conv whose input channels are ordered
/// (time, channel), i.e. weight(o, t * C + c, ky, kx).
struct LossNetConfig {
  std::array<int, 4> channels{64, 128, 256, 512};
  int classifier_channels = 256;
  double slope = 0.1;
  layers::BatchNormOptions bn;
};

inline constexpr int kPyramidDepth = 4;
inline constexpr int kSequenceLength = 3;

enum class BnMode { train, eval };

template <typename T>
struct FeaturePyramid {
  std::vector<Tensor<T>> levels;  // level j: (1, c_j, H / 2^(j+1), W / 2^(j+1))
};

/// Forward state of F over a stack of frames (batch-major, time-minor).
template <typename T>
struct FeaturePass {
  std::vector<Tensor<T>> levels;
  std::array<layers::ConvCache<T>, kPyramidDepth> conv;
  std::array<layers::BatchNormCache<T>, kPyramidDepth> bn;

  int frames() const { return levels.empty() ? 0 : levels.front().n(); }

  FeaturePyramid<T> pyramid(int frame) const {
    FeaturePyramid<T> p;
    for (const auto& l : levels) p.levels.push_back(l.slice(frame, 1));
    return p;
  }
};

template <typename T>
struct ClassifierPass {
  Tensor<T> stacked;  // (B, 3 * c4, h, w), pre-activation
  Tensor<T> hidden;   // first conv output, pre-activation
  Tensor<T> logits;   // (B, 1, h / 2, w / 2)
  layers::ConvCache<T> conv1, conv2;
};

/// Packs triplets into a (B*3, 3, H, W) tensor.
template <typename T, typename Seq>
Tensor<T> stack_frames(const std::vector<Seq>& seqs) {
  require(!seqs.empty(), Errc::InvalidArgument, "stack_frames: empty batch");
  const auto& f0 = seqs.front()[0];
  Tensor<T> out(static_cast<int>(seqs.size()) * kSequenceLength, f0.c(), f0.h(), f0.w());
  for (std::size_t b = 0; b < seqs.size(); ++b)
    for (int t = 0; t < kSequenceLength; ++t) {
      const auto& f = seqs[b][t];
      require(f.c() == f0.c() && f.h() == f0.h() && f.w() == f0.w(), Errc::ShapeMismatch,
              "stack_frames: frames differ in size");
      T* dst = out.image(static_cast<int>(b) * kSequenceLength + t);
      for (std::size_t i = 0; i < f.size(); ++i) dst[i] = static_cast<T>(f[i]);
    }
  return out;
}

template <typename T>
class LossNet {
 public:
  explicit LossNet(LossNetConfig cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    Rng rng(seed);
    int in_c = 3;
    for (int j = 0; j < kPyramidDepth; ++j) {
      const int k = j == 0 ? 7 : 3;
      const int out_c = cfg_.channels[j];
      const std::string p = "f" + std::to_string(j + 1);
      params_.emplace_back(p + ".weight", he_uniform(out_c, in_c, k, rng));
      params_.emplace_back(p + ".bias", Tensor<T>(1, out_c, 1, 1));
      params_.emplace_back(p + ".bn.gamma", Tensor<T>(1, out_c, 1, 1, T(1)));
      params_.emplace_back(p + ".bn.beta", Tensor<T>(1, out_c, 1, 1));
      buffers_.push_back({p + ".bn.running_mean", Tensor<T>(1, out_c, 1, 1)});
      buffers_.push_back({p + ".bn.running_var", Tensor<T>(1, out_c, 1, 1, T(1))});
      in_c = out_c;
    }
    params_.emplace_back("c1.weight", he_uniform(cfg_.classifier_channels, kSequenceLength * in_c, 3, rng));
    params_.emplace_back("c1.bias", Tensor<T>(1, cfg_.classifier_channels, 1, 1));
    params_.emplace_back("c2.weight", he_uniform(1, cfg_.classifier_channels, 1, rng));
    params_.emplace_back("c2.bias", Tensor<T>(1, 1, 1, 1));
  }

  const LossNetConfig& config() const { return cfg_; }
  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::vector<Buffer<T>>& buffers() { return buffers_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }
  void zero_grad() { zero_grads(params_); }

  static layers::ConvGeom feature_geom(int j) {
    return j == 0 ? layers::ConvGeom{7, 2, 3} : layers::ConvGeom{3, 2, 1};
  }
  static layers::ConvGeom classifier_geom() { return {3, 2, 1}; }

  /// Runs F over `frames` (B*3, 3, H, W). `update_running` only applies in
  /// train mode; `keep_cols` retains what the weight gradients need.
  FeaturePass<T> extract(const Tensor<T>& frames, BnMode mode, bool update_running = false,
                         bool keep_cols = false) {
    require(frames.c() == 3 && frames.n() % kSequenceLength == 0, Errc::ShapeMismatch,
            "loss network expects (B*3, 3, H, W), got " + shape_str(frames.shape()));
    require(frames.h() > 0 && frames.w() > 0, Errc::ShapeMismatch, "empty frames " + shape_str(frames.shape()));
    FeaturePass<T> pass;
    for (int j = 0; j < kPyramidDepth; ++j) {
      Tensor<T> in = j == 0 ? frames : layers::leaky_relu(pass.levels[j - 1], slope());
      Tensor<T> conv = layers::conv2d_forward(in, weight(j), &bias(j), feature_geom(j), &pass.conv[j], keep_cols);
      pass.levels.push_back(layers::batchnorm_forward(conv, gamma(j), beta(j), running_mean(j), running_var(j),
                                                      mode == BnMode::train, update_running, cfg_.bn, &pass.bn[j]));
    }
    return pass;
  }

  ClassifierPass<T> classify(const FeaturePass<T>& pass, bool keep_cols = false) const {
    const Tensor<T>& f4 = pass.levels.at(kPyramidDepth - 1);
    require(f4.n() % kSequenceLength == 0, Errc::ShapeMismatch, "classifier needs whole sequences");
    ClassifierPass<T> cp;
    cp.stacked = f4.reshaped(f4.n() / kSequenceLength, kSequenceLength * f4.c(), f4.h(), f4.w());
    cp.hidden = layers::conv2d_forward(layers::leaky_relu(cp.stacked, slope()), param(idx_c1w()).value,
                                       &param(idx_c1w() + 1).value, classifier_geom(), &cp.conv1, keep_cols);
    cp.logits = layers::conv2d_forward(layers::leaky_relu(cp.hidden, slope()), param(idx_c1w() + 2).value,
                                       &param(idx_c1w() + 3).value, layers::ConvGeom{1, 1, 0}, &cp.conv2, keep_cols);
    return cp;
  }

  /// Returns dL/dF^4 with shape (B*3, c4, h, w).
  Tensor<T> backward_classifier(const ClassifierPass<T>& cp, const Tensor<T>& dlogits, bool param_grads) {
    Param<T>& w1 = params_[idx_c1w()];
    Param<T>& b1 = params_[idx_c1w() + 1];
    Param<T>& w2 = params_[idx_c1w() + 2];
    Param<T>& b2 = params_[idx_c1w() + 3];
    Tensor<T> da1;
    layers::conv2d_backward(dlogits, w2.value, cp.conv2, layers::ConvGeom{1, 1, 0}, &da1,
                            param_grads ? &w2.grad : nullptr, param_grads ? &b2.grad : nullptr);
    Tensor<T> dh = layers::leaky_relu_backward(da1, cp.hidden, slope());
    Tensor<T> da0;
    layers::conv2d_backward(dh, w1.value, cp.conv1, classifier_geom(), &da0, param_grads ? &w1.grad : nullptr,
                            param_grads ? &b1.grad : nullptr);
    Tensor<T> ds = layers::leaky_relu_backward(da0, cp.stacked, slope());
    const int c4 = cfg_.channels[kPyramidDepth - 1];
    ds.reshape(ds.n() * kSequenceLength, c4, ds.h(), ds.w());
    return ds;
  }

  /// Backpropagates per-level gradients (empty tensors mean zero) through F.
  /// Returns dL/dframes when `need_dx`, otherwise an empty tensor.
  Tensor<T> backward_features(const FeaturePass<T>& pass, const std::vector<Tensor<T>>& dlevels,
                              bool param_grads, bool need_dx) {
    require(dlevels.size() == kPyramidDepth, Errc::InvalidArgument, "need one gradient slot per level");
    int top = kPyramidDepth - 1;
    while (top >= 0 && dlevels[top].empty()) --top;
    if (top < 0) return {};
    Tensor<T> g;
    for (int j = top; j >= 0; --j) {
      if (!dlevels[j].empty()) {
        if (g.empty()) {
          g = dlevels[j];
        } else {
          require_same_shape(g, dlevels[j], "level gradient");
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dlevels[j][i];
        }
      }
      Tensor<T> dconv = layers::batchnorm_backward(g, pass.bn[j], param_grads ? &params_[4 * j + 2].grad : nullptr,
                                                   param_grads ? &params_[4 * j + 3].grad : nullptr);
      const bool want_dx = j > 0 || need_dx;
      Tensor<T> dx;
      layers::conv2d_backward(dconv, weight(j), pass.conv[j], feature_geom(j), want_dx ? &dx : nullptr,
                              param_grads ? &params_[4 * j].grad : nullptr,
                              param_grads ? &params_[4 * j + 1].grad : nullptr);
      if (j > 0) {
        g = layers::leaky_relu_backward(dx, pass.levels[j - 1], slope());
      } else {
        return need_dx ? dx : Tensor<T>{};
      }
    }
    return {};
  }

  std::uint64_t hash() const {
    std::uint64_t h = hash_params(params_);
    for (const auto& b : buffers_) h = hash_tensor(b.value, h);
    return h;
  }

 private:
  T slope() const { return static_cast<T>(cfg_.slope); }
  static int idx_c1w() { return 4 * kPyramidDepth; }
  const Param<T>& param(int i) const { return params_[i]; }
  const Tensor<T>& weight(int j) const { return params_[4 * j].value; }
  const Tensor<T>& bias(int j) const { return params_[4 * j + 1].value; }
  const Tensor<T>& gamma(int j) const { return params_[4 * j + 2].value; }
  const Tensor<T>& beta(int j) const { return params_[4 * j + 3].value; }
  Tensor<T>& running_mean(int j) { return buffers_[2 * j].value; }
  Tensor<T>& running_var(int j) { return buffers_[2 * j + 1].value; }

  Tensor<T> he_uniform(int out_c, int in_c, int k, Rng& rng) const {
    const double fan_in = static_cast<double>(in_c) * k * k;
    const double bound = std::sqrt(6.0 / ((1.0 + cfg_.slope * cfg_.slope) * fan_in));
    Tensor<T> w(out_c, in_c, k, k);
    for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
    return w;
  }

  LossNetConfig cfg_;
  std::vector<Param<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

// ---------------------------------------------------------------------------
// Sequence-classification objective

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
struct BceResult {
  double loss = 0.0;
  Tensor<T> d_real;
  Tensor<T> d_fake;
};

/// -log sigma(real) - log(1 - sigma(fake)), each term averaged over batch and
/// patch grid, in logit form: softplus(-real) + softplus(fake).
template <typename T>
BceResult<T> sequence_bce(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
  require_same_shape(real_logits, fake_logits, "sequence_bce");
  BceResult<T> r;
  r.d_real = Tensor<T>(real_logits.n(), real_logits.c(), real_logits.h(), real_logits.w());
  r.d_fake = r.d_real;
  const double m = static_cast<double>(real_logits.size());
  double real = 0.0, fake = 0.0;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    const double x = real_logits[i], y = fake_logits[i];
    real += softplus(-x);
    fake += softplus(y);
    r.d_real[i] = static_cast<T>((sigmoid(x) - 1.0) / m);
    r.d_fake[i] = static_cast<T>(sigmoid(y) / m);
  }
  r.loss = (real + fake) / m;
  return r;
}

enum class FakeMode { new_fake, all_gen };

/// Fake sequence for T: (GT_{t-1}, Gen_t, GT_{t+1}), or all three generated
/// frames for the legacy construction.
template <typename Frame>
std::array<Frame, 3> make_fake_input(const std::array<Frame, 3>& gt, const Frame& gen_center,
                                     FakeMode mode = FakeMode::new_fake,
                                     const std::optional<std::array<Frame, 2>>& gen_neighbors = std::nullopt) {
  require(gen_center.same_shape(gt[1]), Errc::ShapeMismatch, "generated centre differs from GT centre");
  if (mode == FakeMode::new_fake) return {gt[0], gen_center, gt[2]};
  require(gen_neighbors.has_value(), Errc::InvalidArgument, "all_gen fake needs generated neighbours");
  const auto& nb = *gen_neighbors;
  require(nb[0].same_shape(gt[0]) && nb[1].same_shape(gt[2]), Errc::ShapeMismatch, "generated neighbour size");
  return {nb[0], gen_center, nb[1]};
}

/// L_{F,C} for one batch of real and fake sequences, each (B*3, 3, H, W).
/// Real and fake run as separate passes (each with its own batch statistics).
/// Accumulates parameter gradients when `param_grads`.
template <typename T>
double t_objective(LossNet<T>& net, const Tensor<T>& real, const Tensor<T>& fake, BnMode mode,
                   bool param_grads, bool update_running = false) {
  require_same_shape(real, fake, "t_objective");
  FeaturePass<T> rp = net.extract(real, mode, update_running, param_grads);
  ClassifierPass<T> rc = net.classify(rp, param_grads);
  FeaturePass<T> fp = net.extract(fake, mode, update_running, param_grads);
  ClassifierPass<T> fc = net.classify(fp, param_grads);
  BceResult<T> bce = sequence_bce(rc.logits, fc.logits);
  if (param_grads) {
    std::vector<Tensor<T>> dl(kPyramidDepth);
    dl[kPyramidDepth - 1] = net.backward_classifier(rc, bce.d_real, true);
    net.backward_features(rp, dl, true, false);
    dl[kPyramidDepth - 1] = net.backward_classifier(fc, bce.d_fake, true);
    net.backward_features(fp, dl, true, false);
  }
  return bce.loss;
}

}  // namespace lossforge
