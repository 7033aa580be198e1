#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lossforge/metrics.hpp"
#include "lossforge/plot.hpp"
#include "lossforge/run.hpp"

namespace lf = lossforge;
namespace fs = std::filesystem;

namespace {

fs::path output_root(const std::string& flag, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("LOSSFORGE_RUN_DIR"); env && *env) return env;
  return fallback;
}

struct SynthArgs {
  int scenes = 4, frames = 10, size = 64;
  std::uint64_t seed = 7;
  std::string out;
  bool with_input = false;
  std::string degradation = "downscale_x4";
  double blur_sigma = 1.5;
};

int cmd_synth(const SynthArgs& a) {
  lf::require(a.size > 0 && a.size % 16 == 0, lf::Errc::IndivisibleSize,
              "--size " + std::to_string(a.size) + " is not a multiple of 16");
  const fs::path root = output_root(a.out, "synthetic");
  auto corpus = lf::data::make_synthetic_corpus(a.scenes, a.frames, a.size, a.seed);
  lf::data::DegradationSpec spec;
  spec.kind = lf::data::parse_degradation(a.degradation);
  spec.blur_sigma = a.blur_sigma;
  std::vector<std::string> ids;
  for (const auto& seq : corpus) {
    lf::data::save_sequence(seq, root / seq.scene_id);
    if (a.with_input) lf::data::save_sequence(lf::data::degrade(seq, spec), root / (seq.scene_id + "_input"));
    ids.push_back(seq.scene_id);
  }
  lf::data::write_manifest(root, ids);
  std::cout << "wrote " << ids.size() << " scenes of " << a.frames << " frames to " << root.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool resume = false;
  bool skip_pretrain = false, skip_init_t = false, adv_baseline = false;
  bool no_content = false, no_relation = false, old_fake = false;
  std::vector<int> layers;
  std::optional<double> wc, wr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  lf::RunConfig cfg = a.config.empty() ? lf::RunConfig{} : lf::load_config(a.config);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    lf::require(eq != std::string::npos, lf::Errc::Config, "--set expects key=value, got '" + kv + "'");
    cfg.set(lf::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (a.skip_pretrain) cfg.sched.skip_pretrain = true;
  if (a.skip_init_t) cfg.sched.skip_init_t = true;
  if (a.adv_baseline) cfg.loss.adversarial_baseline = true;
  if (a.no_content) cfg.loss.use_content = false;
  if (a.no_relation) cfg.loss.use_relation = false;
  if (a.old_fake) cfg.loss.new_fake = false;
  if (!a.layers.empty()) cfg.loss.layer_mask = a.layers;
  if (a.wc) cfg.loss.w_c = *a.wc;
  if (a.wr) cfg.loss.w_r = *a.wr;
  if (a.seed) cfg.sched.seed = *a.seed;
  const fs::path run_dir = output_root(a.out, cfg.out_dir);
  const auto r = lf::run_training(cfg, run_dir, a.resume);
  std::cout << "trained " << r.iterations << " iterations; losses: " << r.losses_csv.string()
            << "; checkpoint: " << r.final_checkpoint.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string gen, gt, out;
  bool no_protocol = false;
  int skip_first = 2, skip_last = 2, border = 8;
  std::string tof_norm = "l1_mean";
  std::string ssim_channels = "per_channel";
};

int cmd_eval(const EvalArgs& a) {
  lf::metrics::EvalOptions opt;
  opt.protocol = a.no_protocol ? lf::metrics::Protocol::none()
                               : lf::metrics::Protocol{a.skip_first, a.skip_last, a.border};
  opt.tof_norm = lf::metrics::parse_tof_norm(a.tof_norm);
  lf::require(a.ssim_channels == "per_channel" || a.ssim_channels == "channel_mean", lf::Errc::InvalidArgument,
              "--ssim-channels must be per_channel or channel_mean");
  opt.ssim_channels =
      a.ssim_channels == "per_channel" ? lf::metrics::SsimChannels::per_channel : lf::metrics::SsimChannels::channel_mean;
  const auto report = lf::metrics::evaluate(a.gen, a.gt, opt);
  const fs::path out = output_root(a.out, "eval");
  lf::metrics::write_report(report, out);
  std::cout << lf::metrics::format_report(report);
  std::cout << "\nwrote " << (out / "report.csv").string() << " and " << (out / "report.txt").string() << "\n";
  return 0;
}

int cmd_plot(const std::string& csv, const std::string& png) {
  const auto titles = lf::plot::render_loss_plot(csv, png);
  std::cout << "wrote " << titles.size() << " panels (";
  for (std::size_t i = 0; i < titles.size(); ++i) std::cout << (i ? ", " : "") << titles[i];
  std::cout << ") to " << png << "\n";
  return 0;
}

int cmd_profile(const std::string& seq_dir, int row, const std::string& png) {
  const auto seq = lf::data::load_sequence(seq_dir);
  lf::data::write_png(png, lf::metrics::temporal_profile(seq, row));
  std::cout << "wrote " << seq.length() << "x" << seq.width() << " profile of row " << row << " to " << png << "\n";
  return 0;
}

struct RestoreArgs {
  std::string checkpoint, input, out;
  std::string degradation = "downscale_x4";
  double blur_sigma = 1.5;
};

/// Runs a trained generator over every scene of a corpus. Scenes with an
/// `<id>_input` directory use it as input, others are degraded first.
int cmd_restore(const RestoreArgs& a) {
  auto state = lf::load_checkpoint<float>(a.checkpoint);
  lf::data::DegradationSpec spec;
  spec.kind = lf::data::parse_degradation(a.degradation);
  spec.blur_sigma = a.blur_sigma;
  lf::require(spec.scale() == state.g->scale(), lf::Errc::Config,
              "degradation scale " + std::to_string(spec.scale()) + " does not match generator scale " +
                  std::to_string(state.g->scale()));
  const fs::path out = output_root(a.out, "restored");
  const auto scenes = lf::data::load_corpus(a.input, spec);
  std::vector<std::string> ids;
  for (const auto& s : scenes) {
    auto restored = lf::restore_sequence(*state.g, s.input);
    restored.scene_id = s.gt.scene_id;
    lf::data::save_sequence(restored, out / s.gt.scene_id);
    ids.push_back(s.gt.scene_id);
  }
  lf::data::write_manifest(out, ids);
  std::cout << "restored " << ids.size() << " scenes to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  lf::tune_allocator();
  CLI::App app{"lossforge: learned loss-space training for video restoration"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic frame-directory corpus");
  synth->add_option("--scenes", sa.scenes, "number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--frames", sa.frames, "frames per scene")->check(CLI::Range(3, 100000));
  synth->add_option("--size", sa.size, "frame size (multiple of 16)");
  synth->add_option("--seed", sa.seed, "random seed");
  synth->add_option("--out", sa.out, "output directory");
  synth->add_flag("--with-input", sa.with_input, "also write degraded <id>_input directories");
  synth->add_option("--degradation", sa.degradation, "downscale_x4 | gaussian_blur");
  synth->add_option("--blur-sigma", sa.blur_sigma, "gaussian_blur sigma in px");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run pretrain / init-T / alternating phases");
  train->add_option("config", ta.config, "key = value config file");
  train->add_option("--set", ta.sets, "override a config key (key=value), repeatable");
  train->add_option("--out", ta.out, "run directory");
  train->add_flag("--resume", ta.resume, "continue from run_dir/checkpoints/latest.lfc");
  train->add_flag("--skip-pretrain", ta.skip_pretrain, "skip pixel pretraining of G");
  train->add_flag("--skip-init-t", ta.skip_init_t, "skip T initialisation");
  train->add_flag("--adv-baseline", ta.adv_baseline, "G step uses the adversarial loss plus L_P");
  train->add_flag("--no-content", ta.no_content, "drop the content matching term");
  train->add_flag("--no-relation", ta.no_relation, "drop the relation matching term");
  train->add_flag("--old-fake", ta.old_fake, "fake sequences made of three generated frames");
  train->add_option("--layer", ta.layers, "restrict matching to pyramid level j (repeatable)")
      ->check(CLI::Range(1, 4));
  train->add_option("--wc", ta.wc, "content weight");
  train->add_option("--wr", ta.wr, "relation weight");
  train->add_option("--seed", ta.seed, "training seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "PSNR / SSIM / tOF of generated vs reference scenes");
  eval->add_option("gen_dir", ea.gen, "generated corpus root")->required();
  eval->add_option("gt_dir", ea.gt, "reference corpus root")->required();
  eval->add_option("--out", ea.out, "report directory");
  eval->add_flag("--no-protocol", ea.no_protocol, "keep all frames and border pixels");
  eval->add_option("--skip-first", ea.skip_first, "frames dropped at the start")->check(CLI::NonNegativeNumber);
  eval->add_option("--skip-last", ea.skip_last, "frames dropped at the end")->check(CLI::NonNegativeNumber);
  eval->add_option("--border", ea.border, "border pixels dropped")->check(CLI::NonNegativeNumber);
  eval->add_option("--tof-norm", ea.tof_norm, "l1_mean | l2_mean");
  eval->add_option("--ssim-channels", ea.ssim_channels, "per_channel | channel_mean");

  std::string csv, png;
  auto* plot = app.add_subcommand("plot", "render loss curves from losses.csv");
  plot->add_option("losses_csv", csv)->required();
  plot->add_option("out_png", png)->required();

  std::string seq_dir, prof_png;
  int row = 0;
  auto* profile = app.add_subcommand("profile", "x-t temporal profile of one scene");
  profile->add_option("seq_dir", seq_dir)->required();
  profile->add_option("--row", row, "image row")->required();
  profile->add_option("--out", prof_png, "output PNG")->required();

  RestoreArgs ra;
  auto* restore = app.add_subcommand("restore", "apply a checkpointed generator to a corpus");
  restore->add_option("checkpoint", ra.checkpoint)->required();
  restore->add_option("input_root", ra.input)->required();
  restore->add_option("--out", ra.out, "output corpus root");
  restore->add_option("--degradation", ra.degradation, "downscale_x4 | gaussian_blur");
  restore->add_option("--blur-sigma", ra.blur_sigma, "gaussian_blur sigma in px");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*plot) return cmd_plot(csv, png);
    if (*profile) return cmd_profile(seq_dir, row, prof_png);
    if (*restore) return cmd_restore(ra);
  } catch (const lf::Error& e) {
    std::cerr << "error [" << lf::errc_name(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
