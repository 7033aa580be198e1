// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lossforge/metrics.hpp"
#include "lossforge/plot.hpp"
#include "lossforge/run.hpp"
#include "lossforge/trainer.hpp"

using namespace lossforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::string cli;
  fs::path work;
  bool reuse = false;
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const Context& ctx, const std::string& args, const fs::path& log) {
  fs::create_directories(log.parent_path());
  const std::string cmd = ctx.cli + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : 128;
}

bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + 1e-9; }

// ---------------------------------------------------------------------------

Outcome architecture_shapes(const Context&) {
  LossNet<float> net({}, 1);
  const int channels[4] = {64, 128, 256, 512};
  std::string detail;
  bool ok = true;
  for (int size : {128, 64}) {
    Tensor<float> x(3, 3, size, size, 0.5f);
    const auto pass = net.extract(x, BnMode::train);
    for (int j = 0; j < 4; ++j) {
      const auto& l = pass.levels[j];
      ok = ok && l.n() == 3 && l.c() == channels[j] && l.h() == size >> (j + 1) && l.w() == size >> (j + 1);
    }
    const auto cp = net.classify(pass);
    ok = ok && cp.logits.n() == 1 && cp.logits.c() == 1 && cp.logits.h() == size / 32 && cp.logits.w() == size / 32;
    detail += std::to_string(size) + ": level4 " + std::to_string(pass.levels[3].c()) + "x" +
              std::to_string(pass.levels[3].h()) + "x" + std::to_string(pass.levels[3].w()) + ", logits 1x" +
              std::to_string(cp.logits.h()) + "x" + std::to_string(cp.logits.w()) + "; ";
  }
  return {ok, detail};
}

data::VideoTriplet random_triplet(int size, int scale, Rng& rng) {
  data::VideoTriplet v;
  for (int d = 0; d < 3; ++d) {
    v.gt[d] = data::make_frame(size, size);
    v.input[d] = data::make_frame(size / scale, size / scale);
    for (auto& x : v.gt[d].vec()) x = rng.uniform();
    for (auto& x : v.input[d].vec()) x = rng.uniform();
  }
  return v;
}

Outcome loss_zero_identity(const Context&) {
  RunConfig cfg;
  cfg.data.gt_patch = 32;
  auto s = make_state<double>(cfg);
  Rng rng(21);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::vector<data::VideoTriplet> batch{random_triplet(32, 4, rng)};
    FixedStream stream(batch, true);
    Trainer<double> tr(cfg, s, stream);
    Tensor<double> gen(1, 3, 32, 32);
    std::copy(batch[0].gt[1].vec().begin(), batch[0].gt[1].vec().end(), gen.vec().begin());
    const auto b = tr.generator_loss(batch, gen, nullptr);
    for (double v : b.content) worst = std::max(worst, std::abs(v));
    for (const auto& d : b.relation)
      for (double v : d) worst = std::max(worst, std::abs(v));
    worst = std::max({worst, std::abs(*b.pixel), std::abs(*b.total)});
  }
  return {worst <= 1e-10, "max |term| over 20 triplets " + num(worst)};
}

double huber_oracle(const std::vector<double>& a, const std::vector<double>& b, double delta) {
  long double l1 = 0, l2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    l1 += std::fabs(a[i] - b[i]);
    l2 += (a[i] - b[i]) * (a[i] - b[i]);
  }
  l1 /= a.size();
  l2 /= a.size();
  return static_cast<double>(l1 <= delta ? l2 / 2 : delta * l1 - delta * delta / 2);
}

Outcome huber_branches(const Context&) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_real_distribution<double> mag(-4, -0.5);
  const double delta = 0.01;
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = k % 4 == 0 ? 1 : len(rng);
    std::normal_distribution<double> nd(0.0, std::pow(10.0, mag(rng)));
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = nd(rng);
    for (auto& x : b) x = nd(rng);
    worst = std::max(worst, std::abs(huber<double>(std::span<const double>(a), std::span<const double>(b), delta) -
                                     huber_oracle(a, b, delta)));
  }
  double jump = 0.0;
  for (double eps : {1e-9, 1e-12}) {
    std::vector<double> z(16, 0.0), lo(16, delta - eps), hi(16, delta + eps);
    const double below = huber<double>(std::span<const double>(lo), std::span<const double>(z), delta);
    const double above = huber<double>(std::span<const double>(hi), std::span<const double>(z), delta);
    jump = std::max(jump, std::abs(above - below) - 2 * delta * eps);
  }
  return {worst <= 1e-12 && jump <= 1e-12,
          "max |lib - oracle| " + num(worst) + ", boundary excess " + num(std::max(jump, 0.0))};
}

Outcome gradient_check(const Context&) {
  RunConfig cfg;
  cfg.gen.width = 4;
  cfg.gen.depth = 1;
  auto s = make_state<double>(cfg);
  Rng rng(41);
  for (auto& p : s.t.params())
    for (auto& v : p.value.vec()) v += 0.01 * rng.normal();
  std::vector<data::VideoTriplet> batch{random_triplet(8, 4, rng)};
  FixedStream stream(batch, true);
  Trainer<double> tr(cfg, s, stream);
  Tensor<double> gen(1, 3, 8, 8);
  for (std::size_t i = 0; i < gen.size(); ++i) gen[i] = batch[0].gt[1][i] + 0.1 * rng.normal();
  Tensor<double> dgen;
  tr.generator_loss(batch, gen, &dgen);
  double g_worst = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const double keep = gen[i], h = 1e-6;
    gen[i] = keep + h;
    const double up = *tr.generator_loss(batch, gen, nullptr).total;
    gen[i] = keep - h;
    const double dn = *tr.generator_loss(batch, gen, nullptr).total;
    gen[i] = keep;
    const double fd = (up - dn) / (2 * h);
    g_worst = std::max(g_worst, std::abs(dgen[i] - fd) / std::max(std::abs(fd), 1e-6));
  }

  LossNetConfig small;
  small.channels = {4, 6, 6, 8};
  small.classifier_channels = 5;
  LossNet<double> net(small, 7);
  Tensor<double> real(6, 3, 16, 16), fake;
  for (auto& v : real.vec()) v = rng.uniform();
  fake = real;
  for (int b = 0; b < 2; ++b) {
    double* c = fake.image(b * 3 + 1);
    for (std::size_t i = 0; i < fake.image_size(); ++i) c[i] = rng.uniform();
  }
  net.zero_grad();
  t_objective(net, real, fake, BnMode::train, true);
  double t_worst = 0.0;
  bool t_ok = true;
  for (auto& p : net.params()) {
    for (int k = 0; k < std::min<int>(6, static_cast<int>(p.value.size())); ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
      const double keep = p.value[i], h = 1e-6;
      p.value[i] = keep + h;
      const double up = t_objective(net, real, fake, BnMode::train, false);
      p.value[i] = keep - h;
      const double dn = t_objective(net, real, fake, BnMode::train, false);
      p.value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      t_ok = t_ok && close_rel(p.grad[i], fd, 1e-4);
      if (std::abs(fd) > 1e-8) t_worst = std::max(t_worst, std::abs(p.grad[i] - fd) / std::abs(fd));
    }
  }
  return {g_worst < 1e-4 && t_ok && t_worst < 1e-4,
          "dL_G/dgen max rel " + num(g_worst) + ", dL_FC/dT max rel " + num(t_worst)};
}

template <typename T>
bool grads_zero(const std::vector<Param<T>>& ps) {
  for (const auto& p : ps)
    for (T v : p.grad.vec())
      if (v != T(0)) return false;
  return true;
}

Outcome routing_isolation(const Context&) {
  bool ok = true;
  std::string detail;
  for (int variant = 0; variant < 3; ++variant) {
    RunConfig cfg;
    cfg.data.synthetic_scenes = 2;
    cfg.data.synthetic_size = 64;
    cfg.data.gt_patch = 32;
    cfg.loss.adversarial_baseline = variant == 1;
    cfg.loss.new_fake = variant != 2;
    auto s = make_state<float>(cfg);
    CorpusStream stream(training_scenes(cfg.data), cfg.data.gt_patch);
    Trainer<float> tr(cfg, s, stream);
    Rng rng(51);
    const auto batch = stream.next(2, rng, 2);

    s.t.zero_grad();
    const auto t_hash = s.t.hash(), t_opt = s.t_opt.hash();
    tr.g_step(batch);
    const bool g_side = s.t.hash() == t_hash && s.t_opt.hash() == t_opt && grads_zero(s.t.params());

    s.g->zero_grad();
    const auto g_hash = s.g->hash(), g_opt = s.g_opt.hash();
    tr.t_step(batch);
    const bool t_side = s.g->hash() == g_hash && s.g_opt.hash() == g_opt && grads_zero(s.g->params());
    ok = ok && g_side && t_side;
    static const char* names[] = {"matching", "adversarial", "all-generated fake"};
    detail += std::string(names[variant]) + (g_side && t_side ? " ok; " : " LEAK; ");
  }
  return {ok, detail};
}

// Untrained scale-1 generator: its output is the blurred centre frame.
std::string discriminability_args(int seed) {
  return "train --skip-pretrain --seed " + std::to_string(seed) + " --set t.seed=" + std::to_string(seed + 2) +
         " --set data.degradation=gaussian_blur --set data.blur_sigma=1.0 --set data.gt_patch=32"
         " --set sched.t_init_iters=2000 --set sched.alt_iters=0 --set sched.batch_size=4 --set sched.log_every=10";
}

double trailing_mean(const plot::LossTable& t, const std::string& col, std::size_t n) {
  const auto& v = t.values.at(col);
  double s = 0;
  std::size_t k = 0;
  for (std::size_t i = v.size(); i-- > 0 && k < n;)
    if (v[i]) s += *v[i], ++k;
  return k ? s / k : NAN;
}

Outcome new_fake_discriminability(const Context& ctx) {
  std::vector<double> finals;
  std::string detail;
  for (int seed : {1, 2, 3}) {
    const fs::path dir = ctx.work / "discriminability" / ("seed" + std::to_string(seed));
    if (!(ctx.reuse && fs::exists(dir / "checkpoints" / "final.lfc"))) {
      fs::remove_all(dir);
      if (run_cli(ctx, discriminability_args(seed) + " --out " + dir.string(), dir.parent_path() / ("seed" + std::to_string(seed) + ".log")) != 0)
        return {false, "train failed for seed " + std::to_string(seed)};
    }
    // Mean of the last 100 iterations (10 logged rows) smooths single-batch noise.
    finals.push_back(trailing_mean(plot::read_loss_csv(dir / "losses.csv"), "L_FC", 10));
    detail += "seed " + std::to_string(seed) + " L_FC " + num(finals.back()) + "; ";
  }
  const double m = median(finals);
  return {m < 0.9, detail + "median " + num(m) + " (chance " + num(2 * std::log(2.0)) + ")"};
}

// ---------------------------------------------------------------------------
// End-to-end desk run

// Batch 2 keeps three seeds inside the hour on one core; pretraining is cheap
// enough to use batch 4. Generator stays under 0.2M parameters (64x5: 180656).
std::string desk_args(int seed) {
  return "train --seed " + std::to_string(seed) + " --set t.seed=" + std::to_string(seed + 2) +
         " --set gen.seed=" + std::to_string(seed + 1) +
         " --set sched.batch_size=2 --set sched.pretrain_batch_size=4 --set sched.lr_g_pretrain=1e-3"
         " --set gen.width=64 --set gen.depth=5";
}

fs::path desk_dir(const Context& ctx, int seed) { return ctx.work / "desk" / ("seed" + std::to_string(seed)); }

bool ensure_desk_run(const Context& ctx, int seed) {
  const fs::path dir = desk_dir(ctx, seed);
  if (ctx.reuse && fs::exists(dir / "checkpoints" / "final.lfc")) return true;
  fs::remove_all(dir);
  return run_cli(ctx, desk_args(seed) + " --out " + dir.string(), ctx.work / "desk" / ("seed" + std::to_string(seed) + ".log")) == 0;
}

struct DeskScores {
  double lp_init, lp_pre;
  double lc_pre, lc_alt;
  double psnr_pre, psnr_alt;
};

double mean_pixel_loss(Generator<float>& g, const std::vector<data::VideoTriplet>& items, const LossConfig& cfg) {
  double s = 0;
  for (const auto& v : items) s += pixel_loss(generate<float>(g, v.input), v.gt[1], cfg);
  return s / items.size();
}

double mean_psnr(Generator<float>& g, const std::vector<data::VideoTriplet>& items) {
  double s = 0;
  for (const auto& v : items) s += metrics::psnr(generate<float>(g, v.input), v.gt[1]).db;
  return s / items.size();
}

DeskScores score_desk_run(const fs::path& dir) {
  const RunConfig cfg = load_config(dir / "config.resolved");
  const long long pre_iter = cfg.sched.pretrain_iters + cfg.sched.t_init_iters;
  char name[64];
  std::snprintf(name, sizeof name, "ckpt_%08lld.lfc", pre_iter);
  auto init = make_state<float>(cfg);
  auto pre = load_checkpoint<float>(dir / "checkpoints" / name);
  auto fin = load_checkpoint<float>(dir / "checkpoints" / "final.lfc");

  Rng train_rng(1001);
  CorpusStream train(training_scenes(cfg.data), cfg.data.gt_patch);
  const auto train_items = train.next(32, train_rng, 1);

  DataConfig held = cfg.data;
  held.synthetic_seed += 1000;
  Rng held_rng(2002);
  CorpusStream heldout(training_scenes(held), cfg.data.gt_patch);
  const auto held_items = heldout.next(32, held_rng, 1);

  DeskScores s;
  s.lp_init = mean_pixel_loss(*init.g, train_items, cfg.loss);
  s.lp_pre = mean_pixel_loss(*pre.g, train_items, cfg.loss);
  s.lc_pre = heldout_content_loss(*pre.g, fin.t, held_items, cfg.loss);
  s.lc_alt = heldout_content_loss(*fin.g, fin.t, held_items, cfg.loss);
  s.psnr_pre = mean_psnr(*pre.g, held_items);
  s.psnr_alt = mean_psnr(*fin.g, held_items);
  return s;
}

struct DeskState {
  double seconds = 0;
};

DeskState& desk_state() {
  static DeskState d;
  return d;
}

Outcome end_to_end_trend(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<DeskScores> scores;
  std::string detail;
  for (int seed : {1, 2, 3}) {
    if (!ensure_desk_run(ctx, seed)) return {false, "train failed for seed " + std::to_string(seed)};
    scores.push_back(score_desk_run(desk_dir(ctx, seed)));
    const auto& s = scores.back();
    detail += "seed " + std::to_string(seed) + ": L_P " + num(s.lp_init) + "->" + num(s.lp_pre) + ", L_C pre " +
              num(s.lc_pre) + " alt " + num(s.lc_alt) + ", PSNR pre " + num(s.psnr_pre) + " alt " + num(s.psnr_alt) +
              "; ";
  }
  std::vector<double> gain, lc_drop, psnr_drop;
  for (const auto& s : scores) {
    gain.push_back(1.0 - s.lp_pre / s.lp_init);
    lc_drop.push_back(s.lc_pre - s.lc_alt);
    psnr_drop.push_back(s.psnr_pre - s.psnr_alt);
  }
  const bool a = median(gain) >= 0.5, b = median(lc_drop) > 0, c = median(psnr_drop) <= 1.5;
  auto& d = desk_state();
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {a && b && c, detail + "median L_P gain " + num(gain.empty() ? 0 : median(gain)) + (a ? " ok" : " LOW") +
                           ", median L_C drop " + num(median(lc_drop)) + (b ? " ok" : " NOT LOWER") +
                           ", median PSNR drop " + num(median(psnr_drop)) + " dB" + (c ? " ok" : " TOO LARGE")};
}

/// Rows must cover (first, total] at every log_every step.
std::string check_csv_gap_free(const fs::path& csv, const RunConfig& cfg, long long first = 0) {
  const auto t = plot::read_loss_csv(csv);
  const long long total = cfg.sched.pretrain_iters + cfg.sched.t_init_iters + cfg.sched.alt_iters;
  const long long every = cfg.sched.log_every;
  const long long want = (total - first) / every;
  if (static_cast<long long>(t.rows()) != want)
    return "expected " + std::to_string(want) + " rows, got " + std::to_string(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i)
    if (t.iter[i] != first + static_cast<long long>(i + 1) * every) return "iteration gap at row " + std::to_string(i + 1);
  return {};
}

Outcome stability_logging(const Context& ctx) {
  const fs::path dir = desk_dir(ctx, 1);
  if (!fs::exists(dir / "checkpoints" / "final.lfc") && !ensure_desk_run(ctx, 1)) return {false, "desk run missing"};
  const RunConfig cfg = load_config(dir / "config.resolved");
  std::string gap = check_csv_gap_free(dir / "losses.csv", cfg);
  if (!gap.empty()) return {false, "matching run: " + gap};
  const auto titles = plot::render_loss_plot(dir / "losses.csv", dir / "losses.png");
  const std::set<std::string> have(titles.begin(), titles.end());
  for (const char* want : {"L_FC", "L_G", "L_P", "L_C", "L_R"})
    if (!have.count(want)) return {false, std::string("plot lacks panel ") + want};

  // Adversarial baseline: same pretrained G and initialised T, alternating phase only.
  const fs::path adv = ctx.work / "adv_baseline";
  if (!(ctx.reuse && fs::exists(adv / "checkpoints" / "final.lfc"))) {
    fs::remove_all(adv);
    fs::create_directories(adv / "checkpoints");
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_%08lld.lfc", cfg.sched.pretrain_iters + cfg.sched.t_init_iters);
    fs::copy_file(dir / "checkpoints" / name, adv / "checkpoints" / "latest.lfc");
    if (run_cli(ctx, desk_args(1) + " --adv-baseline --resume --out " + adv.string(), ctx.work / "adv_baseline.log") != 0)
      return {false, "adversarial baseline run failed"};
  }
  const RunConfig adv_cfg = load_config(adv / "config.resolved");
  gap = check_csv_gap_free(adv / "losses.csv", adv_cfg, adv_cfg.sched.pretrain_iters + adv_cfg.sched.t_init_iters);
  if (!gap.empty()) return {false, "adversarial run: " + gap};
  const auto adv_table = plot::read_loss_csv(adv / "losses.csv");
  const auto adv_titles = plot::render_loss_plot(adv / "losses.csv", adv / "losses.png");
  const bool logged = adv_table.has_data("adv") && std::find(adv_titles.begin(), adv_titles.end(), "L_Adv") != adv_titles.end();
  return {logged, std::to_string(titles.size()) + " panels on the matching run; adversarial run " +
                      std::to_string(adv_table.rows()) + " rows, final L_Adv " +
                      num(trailing_mean(adv_table, "adv", 1))};
}

// --- metric oracles --------------------------------------------------------

double psnr_oracle(const data::Frame& a, const data::Frame& b) {
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  return 10 * std::log10(a.size() / se);
}

double ssim_oracle(const data::Frame& a, const data::Frame& b) {
  const double C1 = 1e-4, C2 = 9e-4;
  double w[11][11], tot = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) tot += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  double sum = 0;
  for (int c = 0; c < 3; ++c) {
    double chan = 0;
    int count = 0;
    for (int y = 0; y + 11 <= a.h(); ++y)
      for (int x = 0; x + 11 <= a.w(); ++x) {
        double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            ma += w[i][j] / tot * a(0, c, y + i, x + j);
            mb += w[i][j] / tot * b(0, c, y + i, x + j);
          }
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double da = a(0, c, y + i, x + j) - ma, db = b(0, c, y + i, x + j) - mb;
            va += w[i][j] / tot * da * da;
            vb += w[i][j] / tot * db * db;
            cov += w[i][j] / tot * da * db;
          }
        chan += (2 * ma * mb + C1) * (2 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
    sum += chan / count;
  }
  return sum / 3;
}

Outcome metric_oracles(const Context&) {
  Rng rng(91);
  double psnr_err = 0, ssim_err = 0;
  for (int k = 0; k < 100; ++k) {
    data::Frame a = data::make_frame(24, 20), b = data::make_frame(24, 20);
    for (auto& v : a.vec()) v = rng.uniform();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(a[i] + 0.3 * (rng.uniform() - 0.5), 0.0, 1.0);
    psnr_err = std::max(psnr_err, std::abs(metrics::psnr(a, b).db - psnr_oracle(a, b)));
    ssim_err = std::max(ssim_err, std::abs(metrics::ssim(a, b) - ssim_oracle(a, b)));
  }
  const double twenty = metrics::psnr(data::make_frame(32, 32, 0.5), data::make_frame(32, 32, 0.6)).db;

  const auto moving = data::make_translating_noise(64, 10, 1, 0, 92);
  auto still = moving;
  for (auto& f : still.frames) f = moving.frames[0];
  const double tof_same = metrics::tof(moving, moving);
  const double tof_removed = metrics::tof(moving, still);
  const auto flow = metrics::farneback_flow(moving.frames[4], moving.frames[5]);
  double u = 0;
  int n = 0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x) u += flow.u[y * 64 + x], ++n;
  u /= n;
  const bool ok = psnr_err <= 1e-6 && ssim_err <= 1e-6 && std::abs(twenty - 20.0) <= 1e-9 && tof_same == 0.0 &&
                  std::abs(u - 1.0) <= 0.3 && tof_removed >= 0.7 && tof_removed <= 1.3;
  return {ok, "PSNR err " + num(psnr_err) + ", SSIM err " + num(ssim_err) + ", uniform 0.1 pair " +
                  num(twenty, 12) + " dB, tOF(x,x) " + num(tof_same) + ", mean flow " + num(u) + " px, tOF motion removed " +
                  num(tof_removed)};
}

Outcome protocol_arithmetic(const Context&) {
  const auto gt = data::make_synthetic_corpus(1, 10, 64, 101)[0];
  auto gen = gt;
  Rng rng(102);
  for (auto& f : gen.frames)
    for (auto& v : f.vec()) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
  const auto full = metrics::evaluate_scene(gen, gt, {});
  auto pre = [](const data::FrameSequence& s) {
    data::FrameSequence out = s;
    out.frames.clear();
    for (int t = 2; t < 8; ++t) out.frames.push_back(data::crop(s.frames[t], 8, 8, 48, 48));
    return out;
  };
  metrics::EvalOptions none;
  none.protocol = metrics::Protocol::none();
  const auto cropped = metrics::evaluate_scene(pre(gen), pre(gt), none);
  const double diff = std::max({std::abs(full.psnr_db - cropped.psnr_db), std::abs(full.ssim - cropped.ssim),
                                std::abs(full.tof - cropped.tof)});
  const bool ok = full.frames_used == 6 && full.height == 48 && full.width == 48 && diff <= 1e-12;
  return {ok, std::to_string(full.frames_used) + " frames, " + std::to_string(full.height) + "x" +
                  std::to_string(full.width) + " region, max diff vs pre-cropped " + num(diff)};
}

Outcome reproducibility(const Context& ctx) {
  const std::string args = desk_args(7) +
                           " --set sched.pretrain_iters=100 --set sched.t_init_iters=100 --set sched.alt_iters=100";
  const fs::path a = ctx.work / "repro" / "a", b = ctx.work / "repro" / "b";
  fs::remove_all(ctx.work / "repro");
  if (run_cli(ctx, args + " --out " + a.string(), ctx.work / "repro" / "a.log") != 0 ||
      run_cli(ctx, args + " --out " + b.string(), ctx.work / "repro" / "b.log") != 0)
    return {false, "train failed"};
  const std::string ca = slurp(a / "losses.csv"), cb = slurp(b / "losses.csv");
  return {!ca.empty() && ca == cb, std::to_string(std::count(ca.begin(), ca.end(), '\n') - 1) + " rows, " +
                                       (ca == cb ? "byte-identical" : "DIFFERENT")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome(const Context&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"lossforge acceptance"};
  Context ctx;
  std::vector<int> only;
  app.add_option("--cli", ctx.cli, "path to the lossforge binary")->required();
  app.add_option("--work", ctx.work, "scratch directory for training runs")->required();
  app.add_option("--only", only, "run only these criteria");
  app.add_flag("--reuse", ctx.reuse, "reuse finished training runs in the work directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(ctx.work);

  const std::vector<Criterion> criteria = {
      {1, "architecture shape oracle", 10, architecture_shapes},
      {2, "loss-zero identity", 30, loss_zero_identity},
      {3, "Huber branch oracle", 10, huber_branches},
      {4, "gradient check", 120, gradient_check},
      {5, "gradient-routing isolation", 30, routing_isolation},
      {6, "new-fake discriminability", 900, new_fake_discriminability},
      {7, "end-to-end trend", 3600, end_to_end_trend},
      {8, "stability logging", 0, stability_logging},
      {9, "metric oracles", 120, metric_oracles},
      {10, "protocol arithmetic", 30, protocol_arithmetic},
      {11, "reproducibility", 0, reproducibility},
  };

  int failed = 0;
  double shared_seconds = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = num(secs, 3) + " s";
    // 8 and 11 share the end-to-end budget.
    if (c.budget_s > 0) {
      if (secs > c.budget_s) {
        o.pass = false;
        timing += " OVER " + num(c.budget_s, 5) + " s";
      }
    } else {
      shared_seconds += secs;
      const double used = desk_state().seconds + shared_seconds;
      timing += ", shared budget used " + num(used, 5) + " s";
      if (used > 3600) {
        o.pass = false;
        timing += " OVER 3600 s";
      }
    }
    std::printf("%s criterion %2d %-28s %s [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
