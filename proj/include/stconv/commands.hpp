#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "stconv/model.hpp"
#include "stconv/stip.hpp"

// The pipeline behind the command-line tool. Each command reads a RunConfig,
// writes its files under out_dir and prints progress to `log`.

namespace stconv {

struct RunConfig {
  std::string data_dir = "data";   // holds manifest.json
  std::string out_dir = "out";
  std::string model_dir;           // eval input; empty means out_dir
  std::string format = "json";     // report format: json or csv
  std::uint64_t seed = 1;
  int split_id = 1;
  double test_fraction = 0.25;
  std::string side = "test";       // eval: test or train

  HybridConfig model;
  StipParams stip;

  std::size_t synth_classes = 5;
  std::size_t clips_per_class = 40;
  Extent3 synth_dims{8, 32, 32};
  double synth_noise = 0.05;
  std::size_t group_size = 4;

  std::size_t bench_repeats = 5;
};

/// Applies a JSON object of flat dotted keys ("model.lr", "stip.sigma", ...)
/// on top of cfg. Unknown keys and wrong types throw ConfigError.
void apply_config_json(RunConfig& cfg, std::string_view text);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Every accepted dotted key with a one-line description.
std::vector<std::pair<std::string, std::string>> config_keys();

/// Writes clips_per_class RVID clips per class under out_dir/clips and
/// out_dir/manifest.json. Returns the manifest path.
std::string cmd_synth(const RunConfig& cfg, std::ostream& log);

/// One JSON line per detected point of the clip at `clip_path`.
void cmd_stip(const RunConfig& cfg, const std::string& clip_path, std::ostream& out);

/// Called with the id of every clip the command reads.
using ClipAccessHook = std::function<void(const std::string& clip_id)>;

struct TrainSummary {
  std::vector<double> epoch_losses;
  std::size_t train_clips = 0;
  std::size_t descriptors = 0;
};

/// Fits the codebook and the model on the train side of the split. Writes
/// model.stcv, codebook.json and train_log.jsonl under out_dir.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, const ClipAccessHook& on_read = {});

struct EvalSummary {
  double accuracy = 0.0;
  std::size_t clips = 0;
  std::string report;
};

/// Scores the chosen side of the split and writes out_dir/report.<format>.
EvalSummary cmd_eval(const RunConfig& cfg, std::ostream& log, const ClipAccessHook& on_read = {});

/// Dense vs factorized convolution timings and FLOP counts as JSON.
std::string cmd_bench(const RunConfig& cfg, std::ostream& log);

}  // namespace stconv
