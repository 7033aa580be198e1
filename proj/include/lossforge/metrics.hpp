#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/video/tracking.hpp>

#include "lossforge/data.hpp"

namespace lossforge::metrics {

namespace fs = std::filesystem;
using data::Frame;
using data::FrameSequence;

struct Protocol {
  int skip_first = 2;
  int skip_last = 2;
  int border_px = 8;

  static Protocol none() { return {0, 0, 0}; }
  bool active() const { return skip_first || skip_last || border_px; }
};

enum class TofNorm { l1_mean, l2_mean };
enum class SsimChannels { per_channel, channel_mean };

inline std::string to_string(TofNorm n) { return n == TofNorm::l1_mean ? "l1_mean" : "l2_mean"; }
inline TofNorm parse_tof_norm(const std::string& s) {
  if (s == "l1_mean") return TofNorm::l1_mean;
  if (s == "l2_mean") return TofNorm::l2_mean;
  throw Error(Errc::InvalidArgument, "unknown tof norm '" + s + "' (l1_mean|l2_mean)");
}

struct FlowParams {
  double pyr_scale = 0.5;
  int levels = 3;
  int winsize = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;
};

struct FlowField {
  int h = 0, w = 0;
  std::vector<double> u, v;

  double mean_u() const { return mean(u); }
  double mean_v() const { return mean(v); }

 private:
  static double mean(const std::vector<double>& a) {
    double s = 0.0;
    for (double x : a) s += x;
    return a.empty() ? 0.0 : s / static_cast<double>(a.size());
  }
};

// ---------------------------------------------------------------------------
// PSNR / SSIM

struct Psnr {
  double db = 0.0;
  bool infinite = false;
};

/// Finite stand-in for infinite PSNR when averaging.
inline constexpr double kPsnrCap = 100.0;

inline Psnr psnr(const Frame& gen, const Frame& gt) {
  require_same_shape(gen, gt, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const double d = gen[i] - gt[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(gen.size());
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(1.0 / mse), false};
}

namespace detail {

inline std::vector<double> gaussian_window(int size = 11, double sigma = 1.5) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < size; ++i) s += g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& v : g) v /= s;
  return g;
}

/// Separable weighted sums over every fully contained window ("valid").
inline std::vector<double> filter_valid(const double* img, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size()), ho = h - k + 1, wo = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * img[y * w + x + i];
      tmp[y * wo + x] = s;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = s;
    }
  return out;
}

inline double ssim_plane(const double* a, const double* b, int h, int w) {
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  require(h >= 11 && w >= 11, Errc::FrameTooSmall, "ssim needs frames of at least 11x11");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto ma = filter_valid(a, h, w, g), mb = filter_valid(b, h, w, g);
  const auto saa = filter_valid(aa.data(), h, w, g), sbb = filter_valid(bb.data(), h, w, g),
             sab = filter_valid(ab.data(), h, w, g);
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + C1) * (2 * cov + C2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + C1) * (va + vb + C2));
  }
  return total / static_cast<double>(ma.size());
}

}  // namespace detail

inline double ssim(const Frame& gen, const Frame& gt, SsimChannels mode = SsimChannels::per_channel) {
  require_same_shape(gen, gt, "ssim");
  const int h = gen.h(), w = gen.w(), c = gen.c();
  if (mode == SsimChannels::channel_mean) {
    std::vector<double> a(gen.plane()), b(gen.plane());
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] += gen.channel(0, ch)[i] / c;
        b[i] += gt.channel(0, ch)[i] / c;
      }
    return detail::ssim_plane(a.data(), b.data(), h, w);
  }
  double s = 0.0;
  for (int ch = 0; ch < c; ++ch) s += detail::ssim_plane(gen.channel(0, ch), gt.channel(0, ch), h, w);
  return s / c;
}

// ---------------------------------------------------------------------------
// Optical flow

/// 0.299 R + 0.587 G + 0.114 B, scaled to the 0..255 range the estimator is tuned for.
inline cv::Mat luma(const Frame& f) {
  cv::Mat m(f.h(), f.w(), CV_32F);
  const double* r = f.channel(0, 0);
  const double* g = f.channel(0, 1);
  const double* b = f.channel(0, 2);
  for (int y = 0; y < f.h(); ++y) {
    auto* row = m.ptr<float>(y);
    for (int x = 0; x < f.w(); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * f.w() + x;
      row[x] = static_cast<float>(255.0 * (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]));
    }
  }
  return m;
}

inline FlowField farneback_flow(const Frame& prev, const Frame& next, const FlowParams& p = {}) {
  require_same_shape(prev, next, "farneback_flow");
  require(prev.h() >= p.winsize && prev.w() >= p.winsize, Errc::FrameTooSmall,
          "frame " + std::to_string(prev.h()) + "x" + std::to_string(prev.w()) + " smaller than flow window " +
              std::to_string(p.winsize));
  cv::Mat flow;
  cv::calcOpticalFlowFarneback(luma(prev), luma(next), flow, p.pyr_scale, p.levels, p.winsize, p.iterations,
                               p.poly_n, p.poly_sigma, 0);
  FlowField f;
  f.h = prev.h();
  f.w = prev.w();
  f.u.resize(static_cast<std::size_t>(f.h) * f.w);
  f.v.resize(f.u.size());
  for (int y = 0; y < f.h; ++y) {
    const auto* row = flow.ptr<cv::Vec2f>(y);
    for (int x = 0; x < f.w; ++x) {
      f.u[y * f.w + x] = row[x][0];
      f.v[y * f.w + x] = row[x][1];
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Protocol

inline Frame crop_border(const Frame& f, int border) {
  if (border == 0) return f;
  require(f.h() > 2 * border && f.w() > 2 * border, Errc::FrameTooSmall,
          "frame too small for a " + std::to_string(border) + " px border");
  return data::crop(f, border, border, f.w() - 2 * border, f.h() - 2 * border);
}

/// Frames kept by the protocol, each with its border removed.
inline std::vector<Frame> apply_protocol(const FrameSequence& seq, const Protocol& p) {
  const int n = seq.length();
  require(n - p.skip_first - p.skip_last > 0, Errc::EmptySequence,
          "scene '" + seq.scene_id + "' has " + std::to_string(n) + " frames, none left after exclusion");
  std::vector<Frame> out;
  for (int t = p.skip_first; t < n - p.skip_last; ++t) out.push_back(crop_border(seq.frames[t], p.border_px));
  return out;
}

inline double tof_frames(const std::vector<Frame>& gen, const std::vector<Frame>& gt, TofNorm norm,
                         const FlowParams& fp) {
  require(gen.size() == gt.size(), Errc::LengthMismatch,
          "tof: " + std::to_string(gen.size()) + " generated vs " + std::to_string(gt.size()) + " reference frames");
  if (gen.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t t = 1; t < gen.size(); ++t) {
    const FlowField a = farneback_flow(gen[t - 1], gen[t], fp);
    const FlowField b = farneback_flow(gt[t - 1], gt[t], fp);
    double s = 0.0;
    for (std::size_t i = 0; i < a.u.size(); ++i) {
      const double du = a.u[i] - b.u[i], dv = a.v[i] - b.v[i];
      s += norm == TofNorm::l1_mean ? std::abs(du) + std::abs(dv) : std::sqrt(du * du + dv * dv);
    }
    total += s / static_cast<double>(a.u.size());
  }
  return total / static_cast<double>(gen.size() - 1);
}

/// Mean over consecutive frame pairs of the per-pixel flow difference,
/// |du|+|dv| (l1_mean) or sqrt(du^2+dv^2) (l2_mean), averaged over pixels.
inline double tof(const FrameSequence& gen, const FrameSequence& gt, const Protocol& p = {},
                  TofNorm norm = TofNorm::l1_mean, const FlowParams& fp = {}) {
  require(gen.length() == gt.length(), Errc::LengthMismatch,
          "tof: sequences have " + std::to_string(gen.length()) + " and " + std::to_string(gt.length()) + " frames");
  return tof_frames(apply_protocol(gen, p), apply_protocol(gt, p), norm, fp);
}

/// Row `row_y` of every frame stacked over time: (1, 3, T, W).
inline Frame temporal_profile(const FrameSequence& seq, int row_y) {
  require(!seq.frames.empty(), Errc::EmptySequence, "temporal_profile: empty sequence");
  const int H = seq.frames[0].h(), W = seq.frames[0].w(), T = seq.length();
  require(row_y >= 0 && row_y < H, Errc::RowOutOfRange,
          "row " + std::to_string(row_y) + " outside [0, " + std::to_string(H) + ")");
  Frame out = data::make_frame(T, W);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < 3; ++c) std::copy_n(seq.frames[t].channel(0, c) + row_y * W, W, out.channel(0, c) + t * W);
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct SceneMetrics {
  double psnr_db = 0.0;
  bool psnr_infinite = false;
  double ssim = 0.0;
  double tof = 0.0;
  int frames_used = 0;
  int height = 0, width = 0;
};

struct EvalOptions {
  Protocol protocol;
  TofNorm tof_norm = TofNorm::l1_mean;
  SsimChannels ssim_channels = SsimChannels::per_channel;
  FlowParams flow;
};

struct MetricReport {
  std::map<std::string, SceneMetrics> per_scene;
  SceneMetrics aggregate;
  EvalOptions options;
};

inline SceneMetrics evaluate_scene(const FrameSequence& gen, const FrameSequence& gt, const EvalOptions& opt) {
  require(gen.length() == gt.length(), Errc::LengthMismatch,
          "scene '" + gt.scene_id + "': " + std::to_string(gen.length()) + " vs " + std::to_string(gt.length()) +
              " frames");
  const auto a = apply_protocol(gen, opt.protocol);
  const auto b = apply_protocol(gt, opt.protocol);
  SceneMetrics m;
  m.frames_used = static_cast<int>(a.size());
  m.height = a[0].h();
  m.width = a[0].w();
  int infinite = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const Psnr p = psnr(a[t], b[t]);
    infinite += p.infinite;
    m.psnr_db += p.infinite ? kPsnrCap : p.db;
    m.ssim += ssim(a[t], b[t], opt.ssim_channels);
  }
  m.psnr_db /= static_cast<double>(a.size());
  m.ssim /= static_cast<double>(a.size());
  m.psnr_infinite = infinite == m.frames_used;
  m.tof = tof_frames(a, b, opt.tof_norm, opt.flow);
  return m;
}

/// Pairs every scene under `gt_root` with the same id under `gen_root`.
inline MetricReport evaluate(const fs::path& gen_root, const fs::path& gt_root, const EvalOptions& opt = {}) {
  MetricReport r;
  r.options = opt;
  const auto ids = data::list_scenes(gt_root);
  require(!ids.empty(), Errc::EmptySequence, "no scenes under " + gt_root.string());
  for (const auto& id : ids) {
    require(fs::is_directory(gen_root / id), Errc::ScenePairMissing,
            "scene '" + id + "' missing from " + gen_root.string());
    const FrameSequence gt = data::load_sequence(gt_root / id);
    const FrameSequence gen = data::load_sequence(gen_root / id);
    r.per_scene[id] = evaluate_scene(gen, gt, opt);
  }
  const double n = static_cast<double>(r.per_scene.size());
  bool all_inf = true;
  for (const auto& [id, m] : r.per_scene) {
    r.aggregate.psnr_db += m.psnr_db / n;
    r.aggregate.ssim += m.ssim / n;
    r.aggregate.tof += m.tof / n;
    r.aggregate.frames_used += m.frames_used;
    all_inf = all_inf && m.psnr_infinite;
  }
  r.aggregate.psnr_infinite = all_inf;
  return r;
}

namespace detail {
inline std::string num(double v, bool inf = false) {
  if (inf) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace detail

inline void write_report_csv(const MetricReport& r, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), Errc::Io, "cannot write " + path.string());
  out << "scene,psnr,ssim,tof,lpips\n";
  for (const auto& [id, m] : r.per_scene)
    out << id << ',' << detail::num(m.psnr_db, m.psnr_infinite) << ',' << detail::num(m.ssim) << ','
        << detail::num(m.tof) << ",\n";
  const auto& a = r.aggregate;
  out << "mean," << detail::num(a.psnr_db, a.psnr_infinite) << ',' << detail::num(a.ssim) << ','
      << detail::num(a.tof) << ",\n";
}

inline std::string format_report(const MetricReport& r) {
  std::ostringstream s;
  const auto& o = r.options;
  char line[256];
  s << "protocol: skip_first=" << o.protocol.skip_first << " skip_last=" << o.protocol.skip_last
    << " border_px=" << o.protocol.border_px << "\n";
  s << "tof_norm: " << to_string(o.tof_norm) << "\n";
  s << "farneback: pyr_scale=" << o.flow.pyr_scale << " levels=" << o.flow.levels << " winsize=" << o.flow.winsize
    << " iterations=" << o.flow.iterations << " poly_n=" << o.flow.poly_n << " poly_sigma=" << o.flow.poly_sigma
    << "\n";
  s << "ssim: " << (o.ssim_channels == SsimChannels::per_channel ? "per_channel" : "channel_mean")
    << " window=11 sigma=1.5\n";
  s << "psnr: infinite frames counted as " << kPsnrCap << " dB in means\n\n";
  std::snprintf(line, sizeof line, "%-24s %10s %8s %8s %7s %9s\n", "scene", "psnr", "ssim", "tof", "frames", "region");
  s << line;
  auto row = [&](const std::string& id, const SceneMetrics& m) {
    const std::string region = std::to_string(m.height) + "x" + std::to_string(m.width);
    std::snprintf(line, sizeof line, "%-24s %10s %8.4f %8.4f %7d %9s\n", id.c_str(),
                  detail::num(m.psnr_db, m.psnr_infinite).c_str(), m.ssim, m.tof, m.frames_used,
                  m.height ? region.c_str() : "");
    s << line;
  };
  for (const auto& [id, m] : r.per_scene) row(id, m);
  row("mean", r.aggregate);
  return s.str();
}

inline void write_report(const MetricReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_report_csv(r, dir / "report.csv");
  std::ofstream(dir / "report.txt") << format_report(r);
}

}  // namespace lossforge::metrics
