#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lossforge/config.hpp"
#include "lossforge/trainer.hpp"

namespace lossforge {

/// Training scenes described by `cfg.data`: a frame-directory corpus, or a
/// synthetic one when no root is given.
inline std::vector<data::Scene> training_scenes(const DataConfig& d) {
  if (!d.root.empty()) return data::load_corpus(d.root, d.degradation, d.manifest);
  std::vector<data::Scene> scenes;
  for (auto& seq : data::make_synthetic_corpus(d.synthetic_scenes, d.synthetic_frames, d.synthetic_size,
                                               d.synthetic_seed))
    scenes.push_back(data::make_scene(std::move(seq), d.degradation));
  return scenes;
}

struct RunResult {
  long long iterations = 0;
  fs::path losses_csv;
  fs::path final_checkpoint;
};

/// Runs every remaining phase for `cfg` into `run_dir`. With `resume`, an
/// existing run_dir/checkpoints/latest.lfc is continued; its config.resolved
/// must match `cfg`.
inline RunResult run_training(RunConfig cfg, const fs::path& run_dir, bool resume = false) {
  cfg.out_dir = run_dir.string();
  cfg.validate();
  fs::create_directories(run_dir);
  const fs::path resolved_path = run_dir / "config.resolved";
  const fs::path latest = run_dir / "checkpoints" / "latest.lfc";
  const std::string resolved = cfg.resolved();
  const bool resuming = resume && fs::exists(latest);
  if (resuming && fs::exists(resolved_path)) {
    std::ifstream in(resolved_path);
    std::stringstream ss;
    ss << in.rdbuf();
    require(ss.str() == resolved, Errc::Config,
            "resume mismatch: configuration differs from " + resolved_path.string());
  }
  std::ofstream(resolved_path) << resolved;

  auto scenes = training_scenes(cfg.data);
  TrainState<float> state = resuming ? load_checkpoint<float>(latest) : make_state<float>(cfg);
  CorpusStream stream(std::move(scenes), cfg.data.gt_patch);
  LossLogger logger(run_dir / "losses.csv", resuming ? state.iter : -1);
  Trainer<float> trainer(cfg, state, stream, &logger, run_dir);
  trainer.run();

  RunResult r;
  r.iterations = state.iter;
  r.losses_csv = run_dir / "losses.csv";
  r.final_checkpoint = run_dir / "checkpoints" / "final.lfc";
  save_checkpoint(state, r.final_checkpoint);
  save_checkpoint(state, latest);
  return r;
}

}  // namespace lossforge
