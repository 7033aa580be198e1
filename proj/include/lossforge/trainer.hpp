#pragma once

#include <malloc.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lossforge/checkpoint.hpp"
#include "lossforge/config.hpp"
#include "lossforge/data.hpp"
#include "lossforge/generator.hpp"
#include "lossforge/lossnet.hpp"
#include "lossforge/objectives.hpp"
#include "lossforge/optim.hpp"

namespace lossforge {

namespace fs = std::filesystem;

/// Keeps large training buffers on the heap instead of mmap/munmap per step.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

// ---------------------------------------------------------------------------
// Data streams

class TripletStream {
 public:
  virtual ~TripletStream() = default;
  /// Next batch; throws DataExhausted when a finite stream runs out.
  virtual std::vector<data::VideoTriplet> next(int batch, Rng& rng, int context) = 0;
  virtual std::string position() const { return {}; }
  virtual void seek(const std::string&) {}
};

/// Unbounded random sampling from a scene list. All randomness comes from the
/// caller's generator, so the stream is reproducible from the train state.
class CorpusStream final : public TripletStream {
 public:
  CorpusStream(std::vector<data::Scene> scenes, int gt_patch) : scenes_(std::move(scenes)), gt_patch_(gt_patch) {}

  std::vector<data::VideoTriplet> next(int batch, Rng& rng, int context) override {
    return data::sample_triplets(scenes_, gt_patch_, batch, rng, context);
  }
  const std::vector<data::Scene>& scenes() const { return scenes_; }

 private:
  std::vector<data::Scene> scenes_;
  int gt_patch_;
};

/// Replays a fixed list; without `cycle` it ends with DataExhausted.
class FixedStream final : public TripletStream {
 public:
  FixedStream(std::vector<data::VideoTriplet> items, bool cycle) : items_(std::move(items)), cycle_(cycle) {}

  std::vector<data::VideoTriplet> next(int batch, Rng&, int) override {
    std::vector<data::VideoTriplet> out;
    for (int i = 0; i < batch; ++i) {
      if (cursor_ >= items_.size()) {
        require(cycle_ && !items_.empty(), Errc::DataExhausted,
                "fixed stream exhausted after " + std::to_string(items_.size()) + " triplets");
        cursor_ = 0;
      }
      out.push_back(items_[cursor_++]);
    }
    return out;
  }
  std::string position() const override { return std::to_string(cursor_); }
  void seek(const std::string& s) override { cursor_ = s.empty() ? 0 : std::stoull(s); }

 private:
  std::vector<data::VideoTriplet> items_;
  bool cycle_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// State

enum class Phase { pretrain_g, init_t, alternate, done };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::pretrain_g: return "pretrain_g";
    case Phase::init_t: return "init_t";
    case Phase::alternate: return "alternate";
    case Phase::done: return "done";
  }
  return "?";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "pretrain_g") return Phase::pretrain_g;
  if (s == "init_t") return Phase::init_t;
  if (s == "alternate") return Phase::alternate;
  if (s == "done") return Phase::done;
  throw Error(Errc::CorruptCheckpoint, "unknown phase '" + s + "'");
}

template <typename T>
struct TrainState {
  Phase phase = Phase::pretrain_g;
  long long iter = 0;        // global steps completed
  long long phase_iter = 0;  // steps completed in the current phase
  std::unique_ptr<Generator<T>> g;
  LossNet<T> t;
  Adam<T> g_opt;
  Adam<T> t_opt;
  Rng rng;
  std::string stream_position;
};

template <typename T>
TrainState<T> make_state(const RunConfig& cfg) {
  TrainState<T> s;
  const int scale = cfg.data.degradation.scale();
  if (cfg.gen.arch == "reference") {
    s.g = std::make_unique<ReferenceGenerator<T>>(scale, cfg.gen.width, cfg.gen.depth, cfg.gen.seed);
  } else {
    throw Error(Errc::Config, "unknown generator arch '" + cfg.gen.arch + "'");
  }
  s.t = LossNet<T>(cfg.t, cfg.t_seed);
  s.g_opt = Adam<T>(s.g->params(), {cfg.sched.lr_g_pretrain, cfg.sched.beta1, cfg.sched.beta2, cfg.sched.adam_eps});
  s.t_opt = Adam<T>(s.t.params(), {cfg.sched.lr_t, cfg.sched.beta1, cfg.sched.beta2, cfg.sched.adam_eps});
  s.rng = Rng(cfg.sched.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

template <typename T>
void put_optimizer(ArchiveFile& a, const std::string& prefix, const Adam<T>& opt, const std::vector<Param<T>>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    a.put(prefix + "/m/" + ps[i].name, opt.first_moments()[i]);
    a.put(prefix + "/v/" + ps[i].name, opt.second_moments()[i]);
  }
  a.meta[prefix + ".steps"] = std::to_string(opt.steps());
  a.meta[prefix + ".lr"] = lossforge::detail::fmt(opt.options().lr);
}

template <typename T>
void get_optimizer(const ArchiveFile& a, const std::string& prefix, Adam<T>& opt, const std::vector<Param<T>>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    a.load_into(prefix + "/m/" + ps[i].name, opt.first_moments()[i]);
    a.load_into(prefix + "/v/" + ps[i].name, opt.second_moments()[i]);
  }
  opt.set_steps(std::stoll(a.meta_at(prefix + ".steps")));
  opt.options().lr = std::stod(a.meta_at(prefix + ".lr"));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const TrainState<T>& s, const fs::path& path, std::uint32_t version = ArchiveFile::kFormatVersion) {
  ArchiveFile a;
  a.meta["phase"] = to_string(s.phase);
  a.meta["iter"] = std::to_string(s.iter);
  a.meta["phase_iter"] = std::to_string(s.phase_iter);
  a.meta["rng"] = s.rng.serialize();
  a.meta["stream"] = s.stream_position;
  for (const auto& [k, v] : s.g->describe()) a.meta["gen." + k] = v;
  const auto& tc = s.t.config();
  a.meta["t.channels"] = lossforge::detail::join(std::vector<int>(tc.channels.begin(), tc.channels.end()));
  a.meta["t.classifier_channels"] = std::to_string(tc.classifier_channels);
  a.meta["t.slope"] = lossforge::detail::fmt(tc.slope);
  a.meta["t.bn_momentum"] = lossforge::detail::fmt(tc.bn.momentum);
  a.meta["t.bn_eps"] = lossforge::detail::fmt(tc.bn.eps);
  for (const auto& p : s.g->params()) a.put("g/" + p.name, p.value);
  for (const auto& p : s.t.params()) a.put("t/" + p.name, p.value);
  for (const auto& b : s.t.buffers()) a.put("t/" + b.name, b.value);
  detail::put_optimizer(a, "g_opt", s.g_opt, s.g->params());
  detail::put_optimizer(a, "t_opt", s.t_opt, s.t.params());
  a.save(path, version);
}

template <typename T>
TrainState<T> load_checkpoint(const fs::path& path) {
  const ArchiveFile a = ArchiveFile::load(path);
  TrainState<T> s;
  s.phase = parse_phase(a.meta_at("phase"));
  s.iter = std::stoll(a.meta_at("iter"));
  s.phase_iter = std::stoll(a.meta_at("phase_iter"));
  s.rng.deserialize(a.meta_at("rng"));
  s.stream_position = a.meta.count("stream") ? a.meta.at("stream") : "";
  std::map<std::string, std::string> gd;
  for (const auto& [k, v] : a.meta)
    if (k.starts_with("gen.")) gd[k.substr(4)] = v;
  s.g = make_generator<T>(gd);
  LossNetConfig tc;
  auto ch = lossforge::detail::to_int_list("t.channels", a.meta_at("t.channels"));
  require(ch.size() == 4, Errc::CorruptCheckpoint, "bad t.channels");
  std::copy(ch.begin(), ch.end(), tc.channels.begin());
  tc.classifier_channels = std::stoi(a.meta_at("t.classifier_channels"));
  tc.slope = std::stod(a.meta_at("t.slope"));
  tc.bn.momentum = std::stod(a.meta_at("t.bn_momentum"));
  tc.bn.eps = std::stod(a.meta_at("t.bn_eps"));
  s.t = LossNet<T>(tc, 0);
  for (auto& p : s.g->params()) a.load_into("g/" + p.name, p.value);
  for (auto& p : s.t.params()) a.load_into("t/" + p.name, p.value);
  for (auto& b : s.t.buffers()) a.load_into("t/" + b.name, b.value);
  s.g_opt = Adam<T>(s.g->params(), {});
  s.t_opt = Adam<T>(s.t.params(), {});
  detail::get_optimizer(a, "g_opt", s.g_opt, s.g->params());
  detail::get_optimizer(a, "t_opt", s.t_opt, s.t.params());
  return s;
}

// ---------------------------------------------------------------------------
// Loss CSV

class LossLogger {
 public:
  LossLogger() = default;
  /// Opens `path`; with `resume_after` >= 0 keeps existing rows up to that
  /// iteration and appends, otherwise starts a fresh file.
  explicit LossLogger(const fs::path& path, long long resume_after = -1) : path_(path) {
    std::vector<std::string> keep;
    if (resume_after >= 0 && fs::exists(path)) {
      std::ifstream in(path);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (header) {
          header = false;
          continue;
        }
        if (line.empty()) continue;
        if (std::stoll(line.substr(0, line.find(','))) <= resume_after) keep.push_back(line);
      }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    require(static_cast<bool>(out_), Errc::Io, "cannot write " + path.string());
    out_ << loss_csv_header() << "\n";
    for (const auto& l : keep) out_ << l << "\n";
    out_.flush();
  }

  bool active() const { return out_.is_open(); }

  void write(long long iter, const LossBreakdown& b) {
    rows_.push_back({iter, b});
    if (!out_.is_open()) return;
    out_ << loss_csv_row(iter, b) << "\n";
    out_.flush();
  }

  const std::vector<std::pair<long long, LossBreakdown>>& rows() const { return rows_; }

 private:
  fs::path path_;
  std::ofstream out_;
  std::vector<std::pair<long long, LossBreakdown>> rows_;
};

// ---------------------------------------------------------------------------
// Trainer

/// Three-phase schedule: (a) pretrain G on the pixel loss, (b) initialise T
/// on the sequence-classification objective with G frozen, (c) alternate one
/// T step and one G step, G's loss being matching in T's feature space.
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, TrainState<T>& state, TripletStream& stream, LossLogger* logger = nullptr,
          fs::path run_dir = {})
      : cfg_(std::move(cfg)), s_(state), stream_(stream), logger_(logger), run_dir_(std::move(run_dir)) {
    cfg_.validate();
    stream_.seek(s_.stream_position);
  }

  TrainState<T>& state() { return s_; }
  const RunConfig& config() const { return cfg_; }

  /// Runs the remaining phases.
  void run() {
    if (s_.phase == Phase::pretrain_g) pretrain_g();
    if (s_.phase == Phase::init_t) init_t();
    if (s_.phase == Phase::alternate) alternate();
  }

  void pretrain_g() {
    require(s_.phase == Phase::pretrain_g, Errc::InvalidArgument, "pretrain_g called in phase " + to_string(s_.phase));
    const long long n = cfg_.sched.skip_pretrain ? 0 : cfg_.sched.pretrain_iters;
    while (s_.phase_iter < n) {
      auto batch = fetch(1, cfg_.sched.pretrain_batch_size > 0 ? cfg_.sched.pretrain_batch_size : cfg_.sched.batch_size);
      LossBreakdown b = pretrain_step(batch);
      finish_step(b, batch);
    }
    advance(Phase::init_t);
  }

  void init_t() {
    require(s_.phase == Phase::init_t, Errc::InvalidArgument, "init_t called in phase " + to_string(s_.phase));
    const long long n = cfg_.sched.skip_init_t ? 0 : cfg_.sched.t_init_iters;
    while (s_.phase_iter < n) {
      auto batch = fetch(context());
      LossBreakdown b;
      b.t_loss = t_step(batch);
      finish_step(b, batch);
    }
    advance(Phase::alternate);
  }

  void alternate() {
    require(s_.phase == Phase::alternate, Errc::InvalidArgument, "alternate called in phase " + to_string(s_.phase));
    if (s_.phase_iter == 0) {
      // Fresh generator moments at the paper's generator learning rate.
      s_.g_opt = Adam<T>(s_.g->params(),
                         {cfg_.sched.lr_g, cfg_.sched.beta1, cfg_.sched.beta2, cfg_.sched.adam_eps});
    }
    while (s_.phase_iter < cfg_.sched.alt_iters) {
      auto batch = fetch(context());
      double t_loss = 0.0;
      for (int k = 0; k < cfg_.sched.t_steps_per_g; ++k) {
        if (k > 0) batch = fetch(context());
        t_loss = t_step(batch);
      }
      LossBreakdown b = g_step(batch);
      b.t_loss = t_loss;
      finish_step(b, batch);
    }
    advance(Phase::done);
  }

  /// One G update on the pixel loss.
  LossBreakdown pretrain_step(const std::vector<data::VideoTriplet>& batch) {
    const Batch bt = pack(batch);
    s_.g->zero_grad();
    Tensor<T> gen = s_.g->forward(bt.input, true);
    Tensor<T> dgen(gen.n(), gen.c(), gen.h(), gen.w());
    double lp = 0.0;
    const int B = gen.n();
    for (int b = 0; b < B; ++b) {
      lp += huber<T>(gen.image_span(b), bt.gt_center.image_span(b), cfg_.loss.delta, cfg_.loss.huber);
      huber_grad<T>(gen.image_span(b), bt.gt_center.image_span(b), cfg_.loss.delta, cfg_.loss.huber, 1.0 / B,
                    dgen.image_span(b));
    }
    s_.g->backward(dgen, false);
    s_.g_opt.step(s_.g->params());
    LossBreakdown out;
    out.pixel = lp / B;
    return out;
  }

  /// One T update on the real/fake sequence objective; G is only evaluated.
  double t_step(const std::vector<data::VideoTriplet>& batch) {
    const Batch bt = pack(batch);
    Tensor<T> fake = bt.real;
    if (!cfg_.loss.new_fake) fake_neighbors(batch, fake);
    place_center(s_.g->forward(bt.input, false), fake);
    s_.t.zero_grad();
    const double loss = t_objective(s_.t, bt.real, fake, BnMode::train, true, true);
    s_.t_opt.step(s_.t.params());
    return loss;
  }

  /// One G update on the matching losses (or the adversarial baseline); T is
  /// only evaluated and its gradient buffers are never written.
  LossBreakdown g_step(const std::vector<data::VideoTriplet>& batch) {
    const Batch bt = pack(batch);
    // Neighbour frames (all-generated mode) come first so the cached forward below stays intact.
    Tensor<T> fake = bt.real;
    if (!cfg_.loss.new_fake) fake_neighbors(batch, fake);
    s_.g->zero_grad();
    Tensor<T> gen = s_.g->forward(bt.input, true);
    Tensor<T> dgen;
    LossBreakdown b = generator_loss(bt, fake, gen, &dgen);
    s_.g->backward(dgen, false);
    s_.g_opt.step(s_.g->params());
    return b;
  }

  /// Loss terms of the G step for an already generated batch (gen centre
  /// frames, (B, 3, H, W)); fills `dgen` with dLoss/dgen when given.
  LossBreakdown generator_loss(const std::vector<data::VideoTriplet>& batch, const Tensor<T>& gen,
                               Tensor<T>* dgen) {
    const Batch bt = pack(batch);
    Tensor<T> fake = bt.real;
    if (!cfg_.loss.new_fake) fake_neighbors(batch, fake);
    return generator_loss(bt, fake, gen, dgen);
  }

 private:
  struct Batch {
    Tensor<T> input;      // (B, 9, h, w)
    Tensor<T> real;       // (B*3, 3, H, W)
    Tensor<T> gt_center;  // (B, 3, H, W)
  };

  int context() const { return cfg_.loss.new_fake ? 1 : 2; }

  Batch pack(const std::vector<data::VideoTriplet>& batch) const {
    std::vector<std::array<data::Frame, 3>> ins, gts;
    for (const auto& v : batch) {
      ins.push_back(v.input);
      gts.push_back(v.gt);
    }
    Batch b;
    b.input = stack_inputs<T>(ins);
    b.real = stack_frames<T>(gts);
    const int B = static_cast<int>(batch.size());
    b.gt_center = Tensor<T>(B, 3, b.real.h(), b.real.w());
    for (int i = 0; i < B; ++i)
      std::copy_n(b.real.image(i * 3 + 1), b.real.image_size(), b.gt_center.image(i));
    return b;
  }

  /// Overwrites frames 0 and 2 of every sequence in `fake` with G's outputs
  /// for the preceding and following input triplets.
  void fake_neighbors(const std::vector<data::VideoTriplet>& batch, Tensor<T>& fake) {
    std::vector<std::array<data::Frame, 3>> prev, next;
    for (const auto& v : batch) {
      require(v.input_context.size() == 5, Errc::InvalidArgument, "all-generated fake needs 5 input frames");
      prev.push_back({v.input_context[0], v.input_context[1], v.input_context[2]});
      next.push_back({v.input_context[2], v.input_context[3], v.input_context[4]});
    }
    Tensor<T> gp = s_.g->forward(stack_inputs<T>(prev), false);
    Tensor<T> gn = s_.g->forward(stack_inputs<T>(next), false);
    for (int b = 0; b < gp.n(); ++b) {
      std::copy_n(gp.image(b), gp.image_size(), fake.image(b * 3));
      std::copy_n(gn.image(b), gn.image_size(), fake.image(b * 3 + 2));
    }
  }

  static void place_center(const Tensor<T>& gen, Tensor<T>& fake) {
    for (int b = 0; b < gen.n(); ++b) std::copy_n(gen.image(b), gen.image_size(), fake.image(b * 3 + 1));
  }

  LossBreakdown generator_loss(const Batch& bt, Tensor<T> fake, const Tensor<T>& gen, Tensor<T>* dgen) {
    const auto& lc = cfg_.loss;
    const BnMode mode = lc.t_bn_eval_for_g ? BnMode::eval : BnMode::train;
    const int B = gen.n();
    place_center(gen, fake);

    FeaturePass<T> rp = s_.t.extract(bt.real, mode, false, false);
    FeaturePass<T> fp = s_.t.extract(fake, mode, false, false);

    std::vector<Tensor<T>> dlevels(kPyramidDepth);
    if (dgen) {
      *dgen = Tensor<T>(gen.n(), gen.c(), gen.h(), gen.w());
      for (int j = 0; j < kPyramidDepth; ++j) {
        const auto& l = fp.levels[j];
        dlevels[j] = Tensor<T>(l.n(), l.c(), l.h(), l.w());
      }
    }

    LossBreakdown sum;
    const bool adversarial = lc.adversarial_baseline;
    for (int b = 0; b < B; ++b) {
      std::map<int, PyramidView<T>> nb{{-1, view(rp, b * 3)}, {1, view(rp, b * 3 + 2)}};
      const Tensor<T> gen_b = gen.slice(b, 1);
      const Tensor<T> gt_b = bt.gt_center.slice(b, 1);
      GeneratorObjective<T> obj = generator_objective<T>(view(fp, b * 3 + 1), view(rp, b * 3 + 1), nb, gen_b, gt_b,
                                                         lc, dgen != nullptr && !adversarial, 1.0 / B);
      accumulate(sum, obj.parts, 1.0 / B);
      if (!dgen) continue;
      if (adversarial) {
        huber_grad<T>(gen_b.span(), gt_b.span(), lc.delta, lc.huber, lc.w_p / B, dgen->image_span(b));
        continue;
      }
      T* dst = dgen->image(b);
      for (std::size_t i = 0; i < obj.d_frame.size(); ++i) dst[i] += obj.d_frame[i];
      for (int j = 0; j < kPyramidDepth; ++j) {
        if (obj.d_levels[j].empty()) continue;
        T* dl = dlevels[j].image(b * 3 + 1);
        for (std::size_t i = 0; i < obj.d_levels[j].size(); ++i) dl[i] += obj.d_levels[j][i];
      }
    }

    if (adversarial) {
      ClassifierPass<T> cp = s_.t.classify(fp, false);
      Tensor<T> dlog;
      sum.adv = adversarial_g_loss(cp.logits, dgen ? &dlog : nullptr);
      if (dgen) {
        for (auto& d : dlevels) d = Tensor<T>();
        dlevels[kPyramidDepth - 1] = s_.t.backward_classifier(cp, dlog, false);
      }
    }
    if (dgen) {
      Tensor<T> dx = s_.t.backward_features(fp, dlevels, false, true);
      if (!dx.empty()) {
        for (int b = 0; b < B; ++b) {
          const T* src = dx.image(b * 3 + 1);
          T* dst = dgen->image(b);
          for (std::size_t i = 0; i < dgen->image_size(); ++i) dst[i] += src[i];
        }
      }
    }
    return sum;
  }

  static void accumulate(LossBreakdown& sum, const LossBreakdown& p, double w) {
    auto add_vec = [w](std::vector<double>& a, const std::vector<double>& b) {
      if (a.empty()) a.assign(b.size(), 0.0);
      for (std::size_t i = 0; i < b.size(); ++i) a[i] += w * b[i];
    };
    auto add_mat = [&](std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
      if (a.empty()) a.resize(b.size());
      for (std::size_t i = 0; i < b.size(); ++i) add_vec(a[i], b[i]);
    };
    add_vec(sum.content, p.content);
    add_mat(sum.relation, p.relation);
    add_mat(sum.phi_gen, p.phi_gen);
    add_mat(sum.phi_gt, p.phi_gt);
    sum.directions = p.directions;
    if (p.pixel) sum.pixel = sum.pixel.value_or(0.0) + w * *p.pixel;
    if (p.total) sum.total = sum.total.value_or(0.0) + w * *p.total;
  }

  std::vector<data::VideoTriplet> fetch(int ctx, int count = 0) {
    auto batch = stream_.next(count > 0 ? count : cfg_.sched.batch_size, s_.rng, ctx);
    s_.stream_position = stream_.position();
    return batch;
  }

  void finish_step(const LossBreakdown& b, const std::vector<data::VideoTriplet>& batch) {
    ++s_.iter;
    ++s_.phase_iter;
    if (logger_ && s_.iter % cfg_.sched.log_every == 0) logger_->write(s_.iter, b);
    if (!run_dir_.empty()) {
      if (s_.iter % cfg_.sched.sample_every == 0) write_sample(batch);
      if (s_.iter % cfg_.sched.ckpt_every == 0) checkpoint();
    }
  }

  void advance(Phase next) {
    s_.phase = next;
    s_.phase_iter = 0;
  }

  void checkpoint() {
    const fs::path dir = run_dir_ / "checkpoints";
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_%08lld.lfc", s_.iter);
    save_checkpoint(s_, dir / name);
    save_checkpoint(s_, dir / "latest.lfc");
  }

  /// input (nearest-upsampled) | generated | ground truth for the first triplet.
  void write_sample(const std::vector<data::VideoTriplet>& batch) {
    const auto& v = batch.front();
    data::Frame gen = generate<T>(*s_.g, v.input);
    const int H = v.gt[1].h(), W = v.gt[1].w(), s = v.scale;
    data::Frame strip = data::make_frame(H, 3 * W);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          strip(0, c, y, x) = v.input[1](0, c, y / s, x / s);
          strip(0, c, y, W + x) = gen(0, c, y, x);
          strip(0, c, y, 2 * W + x) = v.gt[1](0, c, y, x);
        }
    char name[64];
    std::snprintf(name, sizeof name, "iter_%08lld.png", s_.iter);
    data::write_png(run_dir_ / "samples" / name, strip);
  }

  RunConfig cfg_;
  TrainState<T>& s_;
  TripletStream& stream_;
  LossLogger* logger_;
  fs::path run_dir_;
};

// ---------------------------------------------------------------------------
// Held-out evaluation helpers

/// Mean over triplets of (1/J') sum_j L_C^j with T in eval mode (running statistics).
template <typename T>
double heldout_content_loss(Generator<T>& g, LossNet<T>& t, const std::vector<data::VideoTriplet>& items,
                            const LossConfig& cfg) {
  double total = 0.0;
  for (const auto& v : items) {
    data::Frame gen = generate<T>(g, v.input);
    std::vector<std::array<data::Frame, 3>> seqs{v.gt, make_fake_input(v.gt, gen)};
    FeaturePass<T> pass = t.extract(stack_frames<T>(seqs), BnMode::eval);
    const auto lc = content_loss<T>(view(pass, 4), view(pass, 1), cfg);
    double s = 0.0;
    for (int j = 0; j < cfg.J; ++j)
      if (cfg.layer_on(j + 1)) s += lc[j];
    total += s / cfg.active_layers();
  }
  return total / static_cast<double>(items.size());
}

/// Restores every frame of `input` (edge frames replicated for the missing neighbour).
template <typename T>
data::FrameSequence restore_sequence(Generator<T>& g, const data::FrameSequence& input) {
  data::FrameSequence out;
  out.scene_id = input.scene_id;
  out.frame_rate = input.frame_rate;
  const int n = input.length();
  for (int t = 0; t < n; ++t) {
    std::array<data::Frame, 3> tri{input.frames[std::max(t - 1, 0)], input.frames[t],
                                   input.frames[std::min(t + 1, n - 1)]};
    out.frames.push_back(generate<T>(g, tri));
  }
  return out;
}

}  // namespace lossforge
