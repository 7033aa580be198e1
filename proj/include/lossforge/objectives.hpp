#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lossforge/lossnet.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

enum class HuberMode {
  /// Branch on the mean absolute difference of the whole array; quadratic
  /// branch is half the mean squared difference.
  aggregate_mean,
  /// Conventional per-element Huber, averaged.
  elementwise,
};

struct LossConfig {
  double delta = 0.01;
  int N = 1;
  int J = kPyramidDepth;
  double w_c = 1.0;
  double w_r = 1.0;
  double w_p = 1.0;
  std::vector<int> layer_mask{1, 2, 3, 4};  // 1-based pyramid levels
  bool use_content = true;
  bool use_relation = true;
  bool new_fake = true;
  bool adversarial_baseline = false;
  HuberMode huber = HuberMode::aggregate_mean;
  /// Use T's running batch-norm statistics (instead of batch statistics) when
  /// computing generator losses.
  bool t_bn_eval_for_g = false;

  bool layer_on(int j1) const { return std::find(layer_mask.begin(), layer_mask.end(), j1) != layer_mask.end(); }
  int active_layers() const { return static_cast<int>(layer_mask.size()); }

  void validate() const {
    require(delta > 0.0, Errc::NonpositiveDelta, "delta must be positive");
    require(N >= 1, Errc::Config, "temporal radius N must be >= 1");
    require(J >= 1, Errc::Config, "J must be >= 1");
    require(!layer_mask.empty(), Errc::Config, "layer mask must not be empty");
    for (int j : layer_mask) require(j >= 1 && j <= J, Errc::Config, "layer " + std::to_string(j) + " outside 1..J");
    require(w_c >= 0 && w_r >= 0 && w_p >= 0, Errc::Config, "term weights must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Huber distance

template <typename T>
double huber(std::span<const T> a, std::span<const T> b, double delta, HuberMode mode = HuberMode::aggregate_mean) {
  require(a.size() == b.size(), Errc::ShapeMismatch,
          "huber: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " elements");
  require(delta > 0.0, Errc::NonpositiveDelta, "huber: delta must be positive");
  require(!a.empty(), Errc::ShapeMismatch, "huber: empty arrays");
  const double n = static_cast<double>(a.size());
  if (mode == HuberMode::elementwise) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = std::abs(static_cast<double>(a[i]) - b[i]);
      s += d <= delta ? 0.5 * d * d : delta * d - 0.5 * delta * delta;
    }
    return s / n;
  }
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    l1 += std::abs(d);
    l2 += d * d;
  }
  l1 /= n;
  l2 /= n;
  return l1 <= delta ? 0.5 * l2 : delta * l1 - 0.5 * delta * delta;
}

template <typename T>
double huber(const Tensor<T>& a, const Tensor<T>& b, double delta, HuberMode mode = HuberMode::aggregate_mean) {
  require_same_shape(a, b, "huber");
  return huber<T>(a.span(), b.span(), delta, mode);
}

inline double huber_scalar(double a, double b, double delta, HuberMode mode = HuberMode::aggregate_mean) {
  return huber<double>(std::span<const double>(&a, 1), std::span<const double>(&b, 1), delta, mode);
}

/// out += scale * dH(a, b)/da.
template <typename T>
void huber_grad(std::span<const T> a, std::span<const T> b, double delta, HuberMode mode, double scale,
                std::span<T> out) {
  require(a.size() == b.size() && a.size() == out.size(), Errc::ShapeMismatch, "huber_grad sizes");
  const double n = static_cast<double>(a.size());
  auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
  if (mode == HuberMode::elementwise) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      out[i] += static_cast<T>(scale * (std::abs(d) <= delta ? d : delta * sgn(d)) / n);
    }
    return;
  }
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(static_cast<double>(a[i]) - b[i]);
  const bool quadratic = l1 / n <= delta;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    out[i] += static_cast<T>(scale * (quadratic ? d : delta * sgn(d)) / n);
  }
}

inline double huber_scalar_grad(double a, double b, double delta, HuberMode mode = HuberMode::aggregate_mean) {
  double g = 0.0;
  huber_grad<double>(std::span<const double>(&a, 1), std::span<const double>(&b, 1), delta, mode, 1.0,
                     std::span<double>(&g, 1));
  return g;
}

// ---------------------------------------------------------------------------
// Loss terms

template <typename T>
using PyramidView = std::vector<std::span<const T>>;

template <typename T>
PyramidView<T> view(const FeaturePyramid<T>& p) {
  PyramidView<T> v;
  for (const auto& l : p.levels) v.push_back(l.span());
  return v;
}

template <typename T>
PyramidView<T> view(const FeaturePass<T>& pass, int frame) {
  PyramidView<T> v;
  for (const auto& l : pass.levels) v.push_back(l.image_span(frame));
  return v;
}

/// Every scalar produced by one generator/loss-network step. Groups that do
/// not apply to a phase stay unset.
struct LossBreakdown {
  std::vector<double> content;                 // [j]
  std::vector<int> directions;                 // n values, e.g. {-1, +1}
  std::vector<std::vector<double>> relation;   // [dir][j]
  std::vector<std::vector<double>> phi_gen;    // [dir][j]
  std::vector<std::vector<double>> phi_gt;     // [dir][j]
  std::optional<double> pixel;
  std::optional<double> total;
  std::optional<double> t_loss;
  std::optional<double> adv;

  bool has_matching() const { return !content.empty(); }
};

namespace detail {
inline void check_levels(std::size_t a, std::size_t b, int J) {
  require(a == b, Errc::ShapeMismatch, "pyramids have different depth");
  require(static_cast<int>(a) >= J, Errc::ShapeMismatch, "pyramid shallower than J");
}
}  // namespace detail

/// L_C^j = H(F^j(gen), F^j(gt)) for masked levels; 0 elsewhere.
template <typename T>
std::vector<double> content_loss(const PyramidView<T>& gen, const PyramidView<T>& gt, const LossConfig& cfg) {
  detail::check_levels(gen.size(), gt.size(), cfg.J);
  std::vector<double> out(cfg.J, 0.0);
  for (int j = 0; j < cfg.J; ++j)
    if (cfg.layer_on(j + 1)) out[j] = huber<T>(gen[j], gt[j], cfg.delta, cfg.huber);
  return out;
}

template <typename T>
std::vector<double> content_loss(const FeaturePyramid<T>& gen, const FeaturePyramid<T>& gt, const LossConfig& cfg) {
  for (std::size_t j = 0; j < std::min(gen.levels.size(), gt.levels.size()); ++j)
    require_same_shape(gen.levels[j], gt.levels[j], "content_loss level");
  return content_loss<T>(view(gen), view(gt), cfg);
}

struct RelationTerms {
  std::vector<int> directions;
  std::vector<std::vector<double>> loss, phi_gen, phi_gt;  // [dir][j]
};

/// phi^{psi,j}_{t+n} = H(F^j(I^psi_t), F^j(I^GT_{t+n})); L_{R,n}^j = H(phi^Gen, phi^GT).
template <typename T>
RelationTerms relation_loss(const PyramidView<T>& gen_t, const PyramidView<T>& gt_t,
                            const std::map<int, PyramidView<T>>& gt_neighbors, const LossConfig& cfg) {
  detail::check_levels(gen_t.size(), gt_t.size(), cfg.J);
  RelationTerms r;
  for (int n = -cfg.N; n <= cfg.N; ++n)
    if (n != 0) r.directions.push_back(n);
  for (int n : r.directions) {
    auto it = gt_neighbors.find(n);
    require(it != gt_neighbors.end(), Errc::MissingNeighbor, "no GT neighbour for n=" + std::to_string(n));
    const PyramidView<T>& nb = it->second;
    detail::check_levels(nb.size(), gt_t.size(), cfg.J);
    std::vector<double> l(cfg.J, 0.0), pg(cfg.J, 0.0), pt(cfg.J, 0.0);
    for (int j = 0; j < cfg.J; ++j) {
      if (!cfg.layer_on(j + 1)) continue;
      pg[j] = huber<T>(gen_t[j], nb[j], cfg.delta, cfg.huber);
      pt[j] = huber<T>(gt_t[j], nb[j], cfg.delta, cfg.huber);
      l[j] = huber_scalar(pg[j], pt[j], cfg.delta, cfg.huber);
    }
    r.loss.push_back(std::move(l));
    r.phi_gen.push_back(std::move(pg));
    r.phi_gt.push_back(std::move(pt));
  }
  return r;
}

template <typename T>
RelationTerms relation_loss(const FeaturePyramid<T>& gen_t, const FeaturePyramid<T>& gt_t,
                            const std::map<int, FeaturePyramid<T>>& gt_neighbors, const LossConfig& cfg) {
  std::map<int, PyramidView<T>> nb;
  for (const auto& [n, p] : gt_neighbors) nb.emplace(n, view(p));
  return relation_loss<T>(view(gen_t), view(gt_t), nb, cfg);
}

/// L_P = H(I^Gen_t, I^GT_t).
template <typename T>
double pixel_loss(const Tensor<T>& gen, const Tensor<T>& gt, const LossConfig& cfg) {
  require_same_shape(gen, gt, "pixel_loss");
  return huber(gen, gt, cfg.delta, cfg.huber);
}

/// L_G = w_C/J' sum_j L_C^j + w_R/(2N J') sum_n sum_j L_{R,n}^j + w_P L_P,
/// with J' the number of active layers.
inline double total_loss(const LossBreakdown& b, const LossConfig& cfg) {
  const double jp = cfg.active_layers();
  double total = cfg.w_p * b.pixel.value_or(0.0);
  if (cfg.use_content) {
    double s = 0.0;
    for (int j = 0; j < static_cast<int>(b.content.size()); ++j)
      if (cfg.layer_on(j + 1)) s += b.content[j];
    total += cfg.w_c * s / jp;
  }
  if (cfg.use_relation) {
    double s = 0.0;
    for (const auto& dir : b.relation)
      for (int j = 0; j < static_cast<int>(dir.size()); ++j)
        if (cfg.layer_on(j + 1)) s += dir[j];
    total += cfg.w_r * s / (2.0 * cfg.N * jp);
  }
  return total;
}

/// Non-saturating generator loss -log sigma(x), averaged over the grid.
template <typename T>
double adversarial_g_loss(const Tensor<T>& fake_logits, Tensor<T>* dlogits = nullptr) {
  require(!fake_logits.empty(), Errc::ShapeMismatch, "adversarial_g_loss: empty logits");
  const double m = static_cast<double>(fake_logits.size());
  if (dlogits) *dlogits = Tensor<T>(fake_logits.n(), fake_logits.c(), fake_logits.h(), fake_logits.w());
  double s = 0.0;
  for (std::size_t i = 0; i < fake_logits.size(); ++i) {
    s += softplus(-static_cast<double>(fake_logits[i]));
    if (dlogits) (*dlogits)[i] = static_cast<T>((sigmoid(fake_logits[i]) - 1.0) / m);
  }
  return s / m;
}

// ---------------------------------------------------------------------------
// Generator objective with gradients

template <typename T>
struct GeneratorObjective {
  LossBreakdown parts;
  std::vector<Tensor<T>> d_levels;  // dL_G / dF^j(gen), shaped like the gen levels (unscaled)
  Tensor<T> d_frame;                // dL_G / dI^Gen_t from the pixel term
};

/// Evaluates Eq.-6-style total loss for one sample and, when `grads`, its
/// gradient with respect to the generated frame's features and pixels. GT
/// features and GT neighbours are constants.
template <typename T>
GeneratorObjective<T> generator_objective(const PyramidView<T>& gen, const PyramidView<T>& gt,
                                          const std::map<int, PyramidView<T>>& gt_neighbors,
                                          const Tensor<T>& gen_frame, const Tensor<T>& gt_frame,
                                          const LossConfig& cfg, bool grads, double grad_scale = 1.0) {
  cfg.validate();
  GeneratorObjective<T> r;
  auto& p = r.parts;
  p.pixel = pixel_loss(gen_frame, gt_frame, cfg);
  p.content = content_loss<T>(gen, gt, cfg);
  RelationTerms rel = relation_loss<T>(gen, gt, gt_neighbors, cfg);
  p.directions = rel.directions;
  p.relation = std::move(rel.loss);
  p.phi_gen = std::move(rel.phi_gen);
  p.phi_gt = std::move(rel.phi_gt);
  p.total = total_loss(p, cfg);
  if (!grads) return r;

  const double jp = cfg.active_layers();
  r.d_frame = Tensor<T>(gen_frame.n(), gen_frame.c(), gen_frame.h(), gen_frame.w());
  huber_grad<T>(gen_frame.span(), gt_frame.span(), cfg.delta, cfg.huber, grad_scale * cfg.w_p, r.d_frame.span());
  r.d_levels.resize(gen.size());
  for (int j = 0; j < cfg.J; ++j) {
    if (!cfg.layer_on(j + 1)) continue;
    std::vector<T> g(gen[j].size(), T(0));
    bool touched = false;
    if (cfg.use_content && cfg.w_c != 0.0) {
      huber_grad<T>(gen[j], gt[j], cfg.delta, cfg.huber, grad_scale * cfg.w_c / jp, g);
      touched = true;
    }
    if (cfg.use_relation && cfg.w_r != 0.0) {
      for (std::size_t d = 0; d < p.directions.size(); ++d) {
        const double outer =
            huber_scalar_grad(p.phi_gen[d][j], p.phi_gt[d][j], cfg.delta, cfg.huber) * cfg.w_r / (2.0 * cfg.N * jp);
        if (outer == 0.0) continue;
        huber_grad<T>(gen[j], gt_neighbors.at(p.directions[d])[j], cfg.delta, cfg.huber, grad_scale * outer, g);
        touched = true;
      }
    }
    if (touched) {
      r.d_levels[j] = Tensor<T>(1, 1, 1, static_cast<int>(g.size()));
      std::copy(g.begin(), g.end(), r.d_levels[j].data());
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// CSV emission: iter, L_P, L_C^1..J, L_R,-1^1..J, L_R,+1^1..J, L_G, L_FC, adv

inline std::string loss_csv_header(int J = kPyramidDepth, int N = 1) {
  std::ostringstream os;
  os << "iter,L_P";
  for (int j = 1; j <= J; ++j) os << ",L_C" << j;
  for (int n = -N; n <= N; ++n) {
    if (n == 0) continue;
    for (int j = 1; j <= J; ++j) os << ",L_R" << (n < 0 ? "m" : "p") << std::abs(n) << "_" << j;
  }
  os << ",L_G,L_FC,adv";
  return os.str();
}

inline std::string loss_csv_row(long long iter, const LossBreakdown& b, int J = kPyramidDepth, int N = 1) {
  std::ostringstream os;
  os << std::setprecision(9);
  auto opt = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  os << iter;
  opt(b.pixel);
  for (int j = 0; j < J; ++j) {
    os << ',';
    if (b.has_matching()) os << b.content[j];
  }
  for (int d = 0; d < 2 * N; ++d)
    for (int j = 0; j < J; ++j) {
      os << ',';
      if (b.has_matching() && d < static_cast<int>(b.relation.size())) os << b.relation[d][j];
    }
  opt(b.total);
  opt(b.t_loss);
  opt(b.adv);
  return os.str();
}

}  // namespace lossforge
