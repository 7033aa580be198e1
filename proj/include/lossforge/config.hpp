#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lossforge/data.hpp"
#include "lossforge/lossnet.hpp"
#include "lossforge/objectives.hpp"

namespace lossforge {

struct TrainSchedule {
  long long pretrain_iters = 2000;
  long long t_init_iters = 2000;
  long long alt_iters = 3000;
  double lr_t = 1e-4;
  double lr_g = 1e-5;
  double lr_g_pretrain = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  /// 0: same as batch_size.
  int pretrain_batch_size = 0;
  std::uint64_t seed = 1;
  int log_every = 10;
  int ckpt_every = 1000;
  int sample_every = 1000;
  /// T steps per G step in the alternating phase.
  int t_steps_per_g = 1;
  bool skip_pretrain = false;
  bool skip_init_t = false;

  void validate() const {
    require(pretrain_iters >= 0 && t_init_iters >= 0 && alt_iters >= 0, Errc::Config, "iteration counts must be >= 0");
    require(lr_t > 0 && lr_g > 0 && lr_g_pretrain > 0, Errc::Config, "learning rates must be positive");
    require(batch_size > 0, Errc::Config, "batch_size must be positive");
    require(pretrain_batch_size >= 0, Errc::Config, "pretrain_batch_size must be >= 0");
    require(log_every > 0 && ckpt_every > 0 && sample_every > 0, Errc::Config, "intervals must be positive");
    require(t_steps_per_g >= 1, Errc::Config, "t_steps_per_g must be >= 1");
  }
};

struct GeneratorConfig {
  std::string arch = "reference";
  int width = 32;
  int depth = 4;
  std::uint64_t seed = 2;
};

struct DataConfig {
  std::string root;  // empty: synthesize
  std::string manifest;
  int synthetic_scenes = 8;
  int synthetic_frames = 12;
  int synthetic_size = 96;
  std::uint64_t synthetic_seed = 11;
  data::DegradationSpec degradation;
  int gt_patch = 64;
};

/// Fully resolved run description; serialized as `key = value` lines.
struct RunConfig {
  DataConfig data;
  LossConfig loss;
  TrainSchedule sched;
  GeneratorConfig gen;
  LossNetConfig t;
  std::uint64_t t_seed = 3;
  std::string out_dir = "run";

  /// Paper-scale schedule values; everything else keeps the desk defaults.
  void apply_paper_preset() {
    sched.t_init_iters = 100000;
    sched.alt_iters = 30000;
    sched.lr_t = 1e-5;
    sched.lr_g = 1e-5;
    data.gt_patch = 128;
  }

  void validate() const {
    loss.validate();
    sched.validate();
    require(loss.J == kPyramidDepth, Errc::Config, "J must equal the loss network depth (4)");
    require(loss.N == 1, Errc::Config, "training uses three-frame sequences, so N must be 1");
    require(data.gt_patch > 0 && data.gt_patch % 16 == 0, Errc::Config, "gt_patch must be a multiple of 16");
    require(gen.width > 0 && gen.depth > 0, Errc::Config, "generator width/depth must be positive");
  }

  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
  std::string resolved() const {
    std::ostringstream os;
    os << "# resolved run configuration\n";
    for (const auto& [k, v] : to_map()) os << k << " = " << v << "\n";
    return os.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename Int>
inline std::string join(const std::vector<Int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline double to_double(const std::string& k, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  require(r.ec == std::errc() && r.ptr == v.data() + v.size(), Errc::Config, k + ": not a number '" + v + "'");
  return out;
}

inline long long to_int(const std::string& k, const std::string& v) {
  // Accept 1e5-style integers too.
  const double d = to_double(k, v);
  require(d == static_cast<double>(static_cast<long long>(d)), Errc::Config, k + ": not an integer '" + v + "'");
  return static_cast<long long>(d);
}

inline bool to_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(Errc::Config, k + ": not a boolean '" + v + "'");
}

inline std::vector<int> to_int_list(const std::string& k, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<int>(to_int(k, item)));
  }
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> RunConfig::to_map() const {
  using detail::fmt;
  std::map<std::string, std::string> m;
  m["data.root"] = data.root;
  m["data.manifest"] = data.manifest;
  m["data.synthetic_scenes"] = std::to_string(data.synthetic_scenes);
  m["data.synthetic_frames"] = std::to_string(data.synthetic_frames);
  m["data.synthetic_size"] = std::to_string(data.synthetic_size);
  m["data.synthetic_seed"] = std::to_string(data.synthetic_seed);
  m["data.degradation"] = data::to_string(data.degradation.kind);
  m["data.blur_sigma"] = fmt(data.degradation.blur_sigma);
  m["data.antialias_window"] = std::to_string(data.degradation.antialias_window);
  m["data.gt_patch"] = std::to_string(data.gt_patch);
  m["loss.delta"] = fmt(loss.delta);
  m["loss.N"] = std::to_string(loss.N);
  m["loss.J"] = std::to_string(loss.J);
  m["loss.w_c"] = fmt(loss.w_c);
  m["loss.w_r"] = fmt(loss.w_r);
  m["loss.w_p"] = fmt(loss.w_p);
  m["loss.layers"] = detail::join(loss.layer_mask);
  m["loss.use_content"] = fmt(loss.use_content);
  m["loss.use_relation"] = fmt(loss.use_relation);
  m["loss.new_fake"] = fmt(loss.new_fake);
  m["loss.adversarial_baseline"] = fmt(loss.adversarial_baseline);
  m["loss.huber"] = loss.huber == HuberMode::aggregate_mean ? "aggregate_mean" : "elementwise";
  m["loss.t_bn_eval_for_g"] = fmt(loss.t_bn_eval_for_g);
  m["sched.pretrain_iters"] = std::to_string(sched.pretrain_iters);
  m["sched.t_init_iters"] = std::to_string(sched.t_init_iters);
  m["sched.alt_iters"] = std::to_string(sched.alt_iters);
  m["sched.lr_t"] = fmt(sched.lr_t);
  m["sched.lr_g"] = fmt(sched.lr_g);
  m["sched.lr_g_pretrain"] = fmt(sched.lr_g_pretrain);
  m["sched.beta1"] = fmt(sched.beta1);
  m["sched.beta2"] = fmt(sched.beta2);
  m["sched.adam_eps"] = fmt(sched.adam_eps);
  m["sched.batch_size"] = std::to_string(sched.batch_size);
  m["sched.pretrain_batch_size"] = std::to_string(sched.pretrain_batch_size);
  m["sched.seed"] = std::to_string(sched.seed);
  m["sched.log_every"] = std::to_string(sched.log_every);
  m["sched.ckpt_every"] = std::to_string(sched.ckpt_every);
  m["sched.sample_every"] = std::to_string(sched.sample_every);
  m["sched.t_steps_per_g"] = std::to_string(sched.t_steps_per_g);
  m["sched.skip_pretrain"] = fmt(sched.skip_pretrain);
  m["sched.skip_init_t"] = fmt(sched.skip_init_t);
  m["gen.arch"] = gen.arch;
  m["gen.width"] = std::to_string(gen.width);
  m["gen.depth"] = std::to_string(gen.depth);
  m["gen.seed"] = std::to_string(gen.seed);
  m["t.channels"] = detail::join(std::vector<int>(t.channels.begin(), t.channels.end()));
  m["t.classifier_channels"] = std::to_string(t.classifier_channels);
  m["t.slope"] = fmt(t.slope);
  m["t.bn_momentum"] = fmt(t.bn.momentum);
  m["t.bn_eps"] = fmt(t.bn.eps);
  m["t.seed"] = std::to_string(t_seed);
  m["out.dir"] = out_dir;
  return m;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string& k = key;
  const std::string& v = value;
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>> setters = {
      {"preset",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "paper") {
           c.apply_paper_preset();
         } else if (v != "desk") {
           throw Error(Errc::Config, k + ": unknown preset '" + v + "'");
         }
       }},
      {"data.root", [](RunConfig& c, auto&, auto& v) { c.data.root = v; }},
      {"data.manifest", [](RunConfig& c, auto&, auto& v) { c.data.manifest = v; }},
      {"data.synthetic_scenes", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic_scenes = static_cast<int>(to_int(k, v)); }},
      {"data.synthetic_frames", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic_frames = static_cast<int>(to_int(k, v)); }},
      {"data.synthetic_size", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic_size = static_cast<int>(to_int(k, v)); }},
      {"data.synthetic_seed", [](RunConfig& c, auto& k, auto& v) { c.data.synthetic_seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"data.degradation", [](RunConfig& c, auto&, auto& v) { c.data.degradation.kind = data::parse_degradation(v); }},
      {"data.blur_sigma", [](RunConfig& c, auto& k, auto& v) { c.data.degradation.blur_sigma = to_double(k, v); }},
      {"data.antialias_window", [](RunConfig& c, auto& k, auto& v) { c.data.degradation.antialias_window = static_cast<int>(to_int(k, v)); }},
      {"data.gt_patch", [](RunConfig& c, auto& k, auto& v) { c.data.gt_patch = static_cast<int>(to_int(k, v)); }},
      {"loss.delta", [](RunConfig& c, auto& k, auto& v) { c.loss.delta = to_double(k, v); }},
      {"loss.N", [](RunConfig& c, auto& k, auto& v) { c.loss.N = static_cast<int>(to_int(k, v)); }},
      {"loss.J", [](RunConfig& c, auto& k, auto& v) { c.loss.J = static_cast<int>(to_int(k, v)); }},
      {"loss.w_c", [](RunConfig& c, auto& k, auto& v) { c.loss.w_c = to_double(k, v); }},
      {"loss.w_r", [](RunConfig& c, auto& k, auto& v) { c.loss.w_r = to_double(k, v); }},
      {"loss.w_p", [](RunConfig& c, auto& k, auto& v) { c.loss.w_p = to_double(k, v); }},
      {"loss.layers", [](RunConfig& c, auto& k, auto& v) { c.loss.layer_mask = to_int_list(k, v); }},
      {"loss.use_content", [](RunConfig& c, auto& k, auto& v) { c.loss.use_content = to_bool(k, v); }},
      {"loss.use_relation", [](RunConfig& c, auto& k, auto& v) { c.loss.use_relation = to_bool(k, v); }},
      {"loss.new_fake", [](RunConfig& c, auto& k, auto& v) { c.loss.new_fake = to_bool(k, v); }},
      {"loss.adversarial_baseline", [](RunConfig& c, auto& k, auto& v) { c.loss.adversarial_baseline = to_bool(k, v); }},
      {"loss.huber",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "aggregate_mean") {
           c.loss.huber = HuberMode::aggregate_mean;
         } else if (v == "elementwise") {
           c.loss.huber = HuberMode::elementwise;
         } else {
           throw Error(Errc::Config, k + ": expected aggregate_mean or elementwise");
         }
       }},
      {"loss.t_bn_eval_for_g", [](RunConfig& c, auto& k, auto& v) { c.loss.t_bn_eval_for_g = to_bool(k, v); }},
      {"sched.pretrain_iters", [](RunConfig& c, auto& k, auto& v) { c.sched.pretrain_iters = to_int(k, v); }},
      {"sched.t_init_iters", [](RunConfig& c, auto& k, auto& v) { c.sched.t_init_iters = to_int(k, v); }},
      {"sched.alt_iters", [](RunConfig& c, auto& k, auto& v) { c.sched.alt_iters = to_int(k, v); }},
      {"sched.lr_t", [](RunConfig& c, auto& k, auto& v) { c.sched.lr_t = to_double(k, v); }},
      {"sched.lr_g", [](RunConfig& c, auto& k, auto& v) { c.sched.lr_g = to_double(k, v); }},
      {"sched.lr_g_pretrain", [](RunConfig& c, auto& k, auto& v) { c.sched.lr_g_pretrain = to_double(k, v); }},
      {"sched.beta1", [](RunConfig& c, auto& k, auto& v) { c.sched.beta1 = to_double(k, v); }},
      {"sched.beta2", [](RunConfig& c, auto& k, auto& v) { c.sched.beta2 = to_double(k, v); }},
      {"sched.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.sched.adam_eps = to_double(k, v); }},
      {"sched.batch_size", [](RunConfig& c, auto& k, auto& v) { c.sched.batch_size = static_cast<int>(to_int(k, v)); }},
      {"sched.pretrain_batch_size", [](RunConfig& c, auto& k, auto& v) { c.sched.pretrain_batch_size = static_cast<int>(to_int(k, v)); }},
      {"sched.seed", [](RunConfig& c, auto& k, auto& v) { c.sched.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"sched.log_every", [](RunConfig& c, auto& k, auto& v) { c.sched.log_every = static_cast<int>(to_int(k, v)); }},
      {"sched.ckpt_every", [](RunConfig& c, auto& k, auto& v) { c.sched.ckpt_every = static_cast<int>(to_int(k, v)); }},
      {"sched.sample_every", [](RunConfig& c, auto& k, auto& v) { c.sched.sample_every = static_cast<int>(to_int(k, v)); }},
      {"sched.t_steps_per_g", [](RunConfig& c, auto& k, auto& v) { c.sched.t_steps_per_g = static_cast<int>(to_int(k, v)); }},
      {"sched.skip_pretrain", [](RunConfig& c, auto& k, auto& v) { c.sched.skip_pretrain = to_bool(k, v); }},
      {"sched.skip_init_t", [](RunConfig& c, auto& k, auto& v) { c.sched.skip_init_t = to_bool(k, v); }},
      {"gen.arch", [](RunConfig& c, auto&, auto& v) { c.gen.arch = v; }},
      {"gen.width", [](RunConfig& c, auto& k, auto& v) { c.gen.width = static_cast<int>(to_int(k, v)); }},
      {"gen.depth", [](RunConfig& c, auto& k, auto& v) { c.gen.depth = static_cast<int>(to_int(k, v)); }},
      {"gen.seed", [](RunConfig& c, auto& k, auto& v) { c.gen.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"t.channels",
       [](RunConfig& c, auto& k, auto& v) {
         auto ch = to_int_list(k, v);
         require(ch.size() == 4, Errc::Config, k + ": need four channel counts");
         std::copy(ch.begin(), ch.end(), c.t.channels.begin());
       }},
      {"t.classifier_channels", [](RunConfig& c, auto& k, auto& v) { c.t.classifier_channels = static_cast<int>(to_int(k, v)); }},
      {"t.slope", [](RunConfig& c, auto& k, auto& v) { c.t.slope = to_double(k, v); }},
      {"t.bn_momentum", [](RunConfig& c, auto& k, auto& v) { c.t.bn.momentum = to_double(k, v); }},
      {"t.bn_eps", [](RunConfig& c, auto& k, auto& v) { c.t.bn.eps = to_double(k, v); }},
      {"t.seed", [](RunConfig& c, auto& k, auto& v) { c.t_seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"out.dir", [](RunConfig& c, auto&, auto& v) { c.out_dir = v; }},
  };
  auto it = setters.find(k);
  require(it != setters.end(), Errc::Config, "unknown config key '" + k + "'");
  it->second(*this, k, trim(v));
}

/// Parses `key = value` lines; `#` starts a comment. A `preset` line is
/// applied before every other key regardless of its position.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::Config, "line " + std::to_string(lineno) + ": expected key = value");
    kv.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  for (const auto& [k, v] : kv)
    if (k == "preset") cfg.set(k, v);
  for (const auto& [k, v] : kv)
    if (k != "preset") cfg.set(k, v);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace lossforge
