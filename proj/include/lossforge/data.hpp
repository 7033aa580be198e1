#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "lossforge/resample.hpp"
#include "lossforge/rng.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge::data {

namespace fs = std::filesystem;

/// One RGB frame, shape (1, 3, H, W), values in [0, 1].
using Frame = Tensor<double>;

inline Frame make_frame(int h, int w, double fill = 0.0) { return Frame(1, 3, h, w, fill); }

struct FrameSequence {
  std::string scene_id;
  std::vector<Frame> frames;
  std::optional<double> frame_rate;
  /// Background translation in px/frame (x, y) when known (synthetic clips).
  std::optional<std::array<double, 2>> motion;

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().h(); }
  int width() const { return frames.empty() ? 0 : frames.front().w(); }
};

enum class DegradationKind { downscale_x4, gaussian_blur };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::downscale_x4;
  double blur_sigma = 1.5;
  int antialias_window = 16;

  int scale() const { return kind == DegradationKind::downscale_x4 ? 4 : 1; }
};

inline std::string to_string(DegradationKind k) {
  return k == DegradationKind::downscale_x4 ? "downscale_x4" : "gaussian_blur";
}

inline DegradationKind parse_degradation(const std::string& s) {
  if (s == "downscale_x4") return DegradationKind::downscale_x4;
  if (s == "gaussian_blur") return DegradationKind::gaussian_blur;
  throw Error(Errc::Config, "unknown degradation kind '" + s + "'");
}

/// Frames t-1, t, t+1 of one scene, cropped to a co-located GT/input patch.
struct VideoTriplet {
  std::array<Frame, 3> gt;
  std::array<Frame, 3> input;
  /// Input frames t-2..t+2; filled only when sampled with context radius 2
  /// (needed to regenerate the neighbours for the all-generated fake sequence).
  std::vector<Frame> input_context;
  int scale = 4;
  int t_index = 0;
  int scene = 0;
  int gt_x = 0, gt_y = 0;
  int in_x = 0, in_y = 0;
};

/// A GT sequence with its aligned (degraded or supplied) input sequence.
struct Scene {
  FrameSequence gt;
  FrameSequence input;
  int scale = 4;
};

inline void validate(const FrameSequence& seq) {
  require(seq.length() >= 3, Errc::EmptySequence,
          "scene '" + seq.scene_id + "' has " + std::to_string(seq.length()) + " frames (< 3)");
  for (const auto& f : seq.frames) {
    require(f.c() == 3 && f.h() == seq.height() && f.w() == seq.width(), Errc::ShapeMismatch,
            "scene '" + seq.scene_id + "' frames differ in size");
  }
}

// ---------------------------------------------------------------------------
// File I/O

inline Frame frame_from_mat(const cv::Mat& bgr) {
  require(bgr.channels() == 3, Errc::Io, "expected a 3-channel image");
  const double denom = bgr.depth() == CV_16U ? 65535.0 : 255.0;
  cv::Mat f;
  bgr.convertTo(f, CV_64FC3, 1.0 / denom);
  Frame out = make_frame(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3d>(y);
    for (int x = 0; x < f.cols; ++x) {
      out(0, 0, y, x) = row[x][2];
      out(0, 1, y, x) = row[x][1];
      out(0, 2, y, x) = row[x][0];
    }
  }
  return out;
}

/// Rounds to 8 bits per channel.
inline cv::Mat frame_to_mat(const Frame& f) {
  cv::Mat m(f.h(), f.w(), CV_8UC3);
  auto q = [](double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  for (int y = 0; y < f.h(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < f.w(); ++x) row[x] = cv::Vec3b(q(f(0, 2, y, x)), q(f(0, 1, y, x)), q(f(0, 0, y, x)));
  }
  return m;
}

inline Frame read_frame(const fs::path& p) {
  cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
  require(!m.empty(), Errc::Io, "cannot decode " + p.string());
  return frame_from_mat(m);
}

inline void write_png(const fs::path& p, const Frame& f) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  require(cv::imwrite(p.string(), frame_to_mat(f)), Errc::Io, "cannot write " + p.string());
}

inline std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.png", index);
  return buf;
}

/// Reads frame_%05d.png (or .ppm) files in index order; indices must be consecutive.
inline FrameSequence load_sequence(const fs::path& dir) {
  require(fs::is_directory(dir), Errc::Io, "not a directory: " + dir.string());
  static const std::regex pattern(R"(frame_(\d{5})\.(png|ppm))");
  std::map<int, fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) files[std::stoi(m[1].str())] = e.path();
  }
  FrameSequence seq;
  seq.scene_id = dir.filename().string();
  if (files.empty()) throw Error(Errc::EmptySequence, "no frames in " + dir.string());
  int expected = files.begin()->first;
  for (const auto& [idx, path] : files) {
    require(idx == expected, Errc::MissingFrame,
            "scene '" + seq.scene_id + "' missing frame index " + std::to_string(expected));
    ++expected;
    seq.frames.push_back(read_frame(path));
  }
  validate(seq);
  return seq;
}

inline void save_sequence(const FrameSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  for (int i = 0; i < seq.length(); ++i) write_png(dir / frame_name(i), seq.frames[i]);
}

/// Scene ids: manifest lines when a manifest exists, otherwise every
/// subdirectory that is not a `<id>_input` directory, sorted.
inline std::vector<std::string> list_scenes(const fs::path& root, const fs::path& manifest = {}) {
  std::vector<std::string> ids;
  fs::path man = manifest.empty() ? root / "manifest.txt" : manifest;
  if (fs::exists(man)) {
    std::ifstream in(man);
    std::string line;
    while (std::getline(in, line)) {
      line.erase(line.find_last_not_of(" \t\r") + 1);
      if (!line.empty() && line.front() != '#') ids.push_back(line);
    }
    return ids;
  }
  require(fs::is_directory(root), Errc::Io, "not a directory: " + root.string());
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 6 && name.ends_with("_input")) continue;
    ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline void write_manifest(const fs::path& root, const std::vector<std::string>& ids) {
  std::ofstream out(root / "manifest.txt");
  for (const auto& id : ids) out << id << "\n";
}

// ---------------------------------------------------------------------------
// Degradation

inline Frame degrade_frame(const Frame& f, const DegradationSpec& spec) {
  resample::Axis ay, ax;
  int ho = f.h(), wo = f.w();
  if (spec.kind == DegradationKind::downscale_x4) {
    require(f.h() % 4 == 0 && f.w() % 4 == 0, Errc::IndivisibleSize,
            "frame " + std::to_string(f.h()) + "x" + std::to_string(f.w()) + " not divisible by 4");
    ho = f.h() / 4, wo = f.w() / 4;
    ay = resample::cubic_axis(f.h(), ho, spec.antialias_window);
    ax = resample::cubic_axis(f.w(), wo, spec.antialias_window);
  } else {
    ay = resample::gaussian_axis(f.h(), spec.blur_sigma);
    ax = resample::gaussian_axis(f.w(), spec.blur_sigma);
  }
  Frame out = make_frame(ho, wo);
  for (int c = 0; c < 3; ++c) resample::apply(f.channel(0, c), ay, ax, out.channel(0, c));
  for (auto& v : out.vec()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

inline FrameSequence degrade(const FrameSequence& seq, const DegradationSpec& spec) {
  FrameSequence out;
  out.scene_id = seq.scene_id;
  out.frame_rate = seq.frame_rate;
  out.frames.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.frames.push_back(degrade_frame(f, spec));
  return out;
}

inline Scene make_scene(FrameSequence gt, const DegradationSpec& spec) {
  validate(gt);
  Scene s;
  s.scale = spec.scale();
  s.input = degrade(gt, spec);
  s.gt = std::move(gt);
  return s;
}

/// Loads every scene under `root`; `<id>_input/` overrides synthetic degradation.
inline std::vector<Scene> load_corpus(const fs::path& root, const DegradationSpec& spec,
                                      const fs::path& manifest = {}) {
  std::vector<Scene> scenes;
  for (const auto& id : list_scenes(root, manifest)) {
    FrameSequence gt = load_sequence(root / id);
    const fs::path in_dir = root / (id + "_input");
    if (fs::is_directory(in_dir)) {
      Scene s;
      s.scale = spec.scale();
      s.input = load_sequence(in_dir);
      require(s.input.length() == gt.length(), Errc::LengthMismatch, "input length differs for " + id);
      require(s.input.height() * s.scale == gt.height() && s.input.width() * s.scale == gt.width(),
              Errc::ShapeMismatch, "input size does not match scale for " + id);
      s.gt = std::move(gt);
      scenes.push_back(std::move(s));
    } else {
      scenes.push_back(make_scene(std::move(gt), spec));
    }
  }
  require(!scenes.empty(), Errc::EmptySequence, "no scenes under " + root.string());
  return scenes;
}

// ---------------------------------------------------------------------------
// Triplet sampling

inline Frame crop(const Frame& f, int x, int y, int w, int h) {
  require(x >= 0 && y >= 0 && x + w <= f.w() && y + h <= f.h(), Errc::PatchTooLarge, "crop out of bounds");
  Frame out = make_frame(h, w);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < h; ++r) std::copy_n(&f(0, c, y + r, x), w, &out(0, c, r, 0));
  return out;
}

/// Draws `count` triplets with a uniformly random centre index and crop.
/// `context` = 2 additionally keeps input frames t-2..t+2.
inline std::vector<VideoTriplet> sample_triplets(const std::vector<Scene>& scenes, int gt_patch, int count,
                                                 Rng& rng, int context = 1) {
  require(gt_patch > 0 && gt_patch % 16 == 0, Errc::IndivisibleSize, "gt_patch must be a multiple of 16");
  std::vector<VideoTriplet> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const int si = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(scenes.size()) - 1));
    const Scene& s = scenes[si];
    const int T = s.gt.length();
    require(T >= 2 * context + 1, Errc::EmptySequence, "scene '" + s.gt.scene_id + "' too short");
    require(gt_patch <= std::min(s.gt.height(), s.gt.width()), Errc::PatchTooLarge,
            "patch " + std::to_string(gt_patch) + " exceeds frame size");
    require(gt_patch % s.scale == 0, Errc::IndivisibleSize, "gt_patch not divisible by scale");
    const int in_patch = gt_patch / s.scale;
    VideoTriplet v;
    v.scene = si;
    v.scale = s.scale;
    v.t_index = static_cast<int>(rng.uniform_int(context, T - 1 - context));
    v.in_x = static_cast<int>(rng.uniform_int(0, s.input.width() - in_patch));
    v.in_y = static_cast<int>(rng.uniform_int(0, s.input.height() - in_patch));
    v.gt_x = v.in_x * s.scale;
    v.gt_y = v.in_y * s.scale;
    for (int d = -1; d <= 1; ++d) {
      v.gt[d + 1] = crop(s.gt.frames[v.t_index + d], v.gt_x, v.gt_y, gt_patch, gt_patch);
      v.input[d + 1] = crop(s.input.frames[v.t_index + d], v.in_x, v.in_y, in_patch, in_patch);
    }
    if (context >= 2) {
      for (int d = -2; d <= 2; ++d)
        v.input_context.push_back(crop(s.input.frames[v.t_index + d], v.in_x, v.in_y, in_patch, in_patch));
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Single-sequence form: degrades `seq` and samples with a fresh generator seeded by `rng_seed`.
inline std::vector<VideoTriplet> sample_triplets(const FrameSequence& seq, const DegradationSpec& spec,
                                                 int gt_patch, int count, std::uint64_t rng_seed) {
  validate(seq);
  require(gt_patch <= std::min(seq.height(), seq.width()), Errc::PatchTooLarge,
          "patch " + std::to_string(gt_patch) + " exceeds frame size");
  std::vector<Scene> scenes{make_scene(seq, spec)};
  Rng rng(rng_seed);
  return sample_triplets(scenes, gt_patch, count, rng);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace detail {

/// Gaussian-smoothed white noise per channel, rescaled to mean 0.5 and the given std.
inline Frame band_limited_noise(int h, int w, double sigma, double contrast, Rng& rng) {
  Frame white = make_frame(h, w);
  for (auto& v : white.vec()) v = rng.normal();
  const auto ay = resample::gaussian_axis(h, sigma);
  const auto ax = resample::gaussian_axis(w, sigma);
  Frame out = make_frame(h, w);
  for (int c = 0; c < 3; ++c) {
    resample::apply(white.channel(0, c), ay, ax, out.channel(0, c));
    double mean = 0.0, sq = 0.0;
    const std::size_t n = out.plane();
    const double* p = out.channel(0, c);
    for (std::size_t i = 0; i < n; ++i) mean += p[i];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) sq += (p[i] - mean) * (p[i] - mean);
    const double sd = std::sqrt(sq / n) + 1e-12;
    double* q = out.channel(0, c);
    for (std::size_t i = 0; i < n; ++i) q[i] = 0.5 + contrast * (q[i] - mean) / sd;
  }
  return out;
}

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace detail

/// Band-limited noise translated by (vx, vy) px per frame (integer shifts of a
/// larger canvas, so the motion is exact). Values are quantized to 8 bits.
inline FrameSequence make_translating_noise(int size, int frames, int vx, int vy, std::uint64_t seed,
                                            double sigma = 1.5) {
  Rng rng(seed);
  const int margin = (std::abs(vx) + std::abs(vy)) * frames + 8;
  const int canvas = size + 2 * margin;
  Frame bg = detail::band_limited_noise(canvas, canvas, sigma, 0.18, rng);
  FrameSequence seq;
  seq.scene_id = "translate";
  seq.motion = std::array<double, 2>{static_cast<double>(vx), static_cast<double>(vy)};
  for (int t = 0; t < frames; ++t) {
    // Content moves by +v: frame t samples the canvas at offset margin - t*v.
    Frame f = crop(bg, margin - t * vx, margin - t * vy, size, size);
    for (auto& v : f.vec()) v = detail::quantize8(v);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

/// Procedural moving-texture clips: a translating band-limited noise
/// background plus a few rigid coloured shapes moving with their own
/// velocities. Deterministic given `rng_seed`.
inline std::vector<FrameSequence> make_synthetic_corpus(int n_scenes, int frames_per_scene, int size,
                                                        std::uint64_t rng_seed) {
  require(size > 0 && size % 16 == 0, Errc::IndivisibleSize, "synthetic size must be a multiple of 16");
  require(frames_per_scene >= 3, Errc::EmptySequence, "synthetic scenes need at least 3 frames");
  require(n_scenes > 0, Errc::InvalidArgument, "n_scenes must be positive");
  Rng master(rng_seed);
  std::vector<FrameSequence> corpus;
  for (int s = 0; s < n_scenes; ++s) {
    Rng rng(master.bits());
    int vx = 0, vy = 0;
    while (vx == 0 && vy == 0) {
      vx = static_cast<int>(rng.uniform_int(-2, 2));
      vy = static_cast<int>(rng.uniform_int(-2, 2));
    }
    const double sigma = rng.uniform(1.5, 3.0);
    const int margin = (std::abs(vx) + std::abs(vy)) * frames_per_scene + 8;
    const int canvas = size + 2 * margin;
    Frame bg = detail::band_limited_noise(canvas, canvas, sigma, 0.15, rng);

    struct Shape {
      bool disk;
      double cx, cy, rx, ry, vx, vy;
      std::array<double, 3> color;
    };
    std::vector<Shape> shapes(static_cast<std::size_t>(rng.uniform_int(2, 4)));
    for (auto& sh : shapes) {
      sh.disk = rng.uniform() < 0.5;
      sh.cx = rng.uniform(0, size);
      sh.cy = rng.uniform(0, size);
      sh.rx = rng.uniform(size * 0.06, size * 0.18);
      sh.ry = rng.uniform(size * 0.06, size * 0.18);
      sh.vx = rng.uniform(-2.5, 2.5);
      sh.vy = rng.uniform(-2.5, 2.5);
      for (auto& c : sh.color) c = rng.uniform(0.05, 0.95);
    }

    FrameSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", s);
    seq.scene_id = id;
    seq.frame_rate = 24.0;
    seq.motion = std::array<double, 2>{static_cast<double>(vx), static_cast<double>(vy)};
    for (int t = 0; t < frames_per_scene; ++t) {
      Frame f = crop(bg, margin - t * vx, margin - t * vy, size, size);
      for (const auto& sh : shapes) {
        const double cx = sh.cx + t * sh.vx, cy = sh.cy + t * sh.vy;
        // 4x4 supersampled coverage gives anti-aliased edges.
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 4; ++sy)
              for (int sx = 0; sx < 4; ++sx) {
                const double dx = (x + (sx + 0.5) / 4.0 - cx) / sh.rx;
                const double dy = (y + (sy + 0.5) / 4.0 - cy) / sh.ry;
                hits += sh.disk ? (dx * dx + dy * dy <= 1.0) : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
              }
            if (hits == 0) continue;
            const double a = hits / 16.0;
            for (int c = 0; c < 3; ++c) f(0, c, y, x) = (1 - a) * f(0, c, y, x) + a * sh.color[c];
          }
        }
      }
      for (auto& v : f.vec()) v = detail::quantize8(v);
      seq.frames.push_back(std::move(f));
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace lossforge::data
