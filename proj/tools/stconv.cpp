// Command-line front end: synth, stip, train, eval, bench.

#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "stconv/commands.hpp"
#include "stconv/error.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

template <typename T, typename U>
void set_if(const std::optional<T>& flag, U& field) {
  if (flag) field = *flag;
}

struct StipFlags {
  std::optional<double> sigma, tau, k, threshold_frac;
  std::optional<std::size_t> max_points;

  void add(CLI::App* app) {
    app->add_option("--sigma", sigma, "STIP spatial scale (2)");
    app->add_option("--tau", tau, "STIP temporal scale (2)");
    app->add_option("--harris-k", k, "Harris constant (0.005)");
    app->add_option("--threshold-frac", threshold_frac, "response threshold as a fraction of the peak (0.1)");
    app->add_option("--max-points", max_points, "strongest points kept per clip, 0 keeps all (200)");
  }
  void apply_to(stconv::StipParams& p) const {
    set_if(sigma, p.sigma);
    set_if(tau, p.tau);
    set_if(k, p.k);
    set_if(threshold_frac, p.threshold_frac);
    set_if(max_points, p.max_points);
  }
};

std::string keys_footer() {
  std::ostringstream os;
  os << "Config file keys (JSON object, flags override file values):\n";
  for (const auto& [key, help] : stconv::config_keys()) os << "  " << key << ": " << help << "\n";
  os << "Environment: STCONV_THREADS caps the worker pool.\n"
        "Exit codes: 0 success, 2 usage, 3 data or format error, 4 numeric failure.";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal video classifier: 3D CNN with separable convolutions fused with "
               "interest-point bag-of-words features."};
  app.footer(keys_footer());
  app.require_subcommand(1);

  std::optional<std::string> config_path, out_dir, format;
  std::optional<std::uint64_t> seed;
  auto shared = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file of dotted keys");
    sub->add_option("--seed", seed, "random seed (1)");
    sub->add_option("--out", out_dir, "output directory (out)");
    sub->add_option("--format", format, "report format (json)")->check(CLI::IsMember({"json", "csv"}));
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic clip corpus and manifest");
  std::optional<std::size_t> classes, per_class, frames, height, width, group_size;
  std::optional<double> noise;
  synth->add_option("--classes", classes, "number of classes, 2 to 5 (5)");
  synth->add_option("--clips-per-class", per_class, "clips per class (40)");
  synth->add_option("--frames", frames, "frames per clip (8)");
  synth->add_option("--height", height, "clip height (32)");
  synth->add_option("--width", width, "clip width (32)");
  synth->add_option("--noise", noise, "background noise amplitude (0.05)");
  synth->add_option("--group-size", group_size, "consecutive clips sharing a group id (4)");
  shared(synth);

  auto* stip = app.add_subcommand("stip", "print interest points of one RVID clip as JSON lines");
  std::string clip_path;
  stip->add_option("clip", clip_path, "RVID clip file")->required();
  StipFlags stip_flags;
  stip_flags.add(stip);
  shared(stip);

  std::optional<std::string> data_dir, model_dir, side;
  std::optional<int> split;
  std::optional<double> test_fraction, lr;
  std::optional<std::size_t> epochs, batch_size, bow_dim, embed_dim;

  auto* train = app.add_subcommand("train", "fit the codebook and the model on a split's train side");
  train->add_option("--data", data_dir, "dataset directory with manifest.json (data)");
  train->add_option("--split", split, "split id (1)")->check(CLI::Range(1, 3));
  train->add_option("--test-fraction", test_fraction, "held-out fraction per class (0.25)");
  train->add_option("--epochs", epochs, "training epochs (30)");
  train->add_option("--lr", lr, "Adam learning rate (0.001)");
  train->add_option("--batch-size", batch_size, "clips per batch (5)");
  train->add_option("--bow-dim", bow_dim, "codebook size (64)");
  train->add_option("--embed-dim", embed_dim, "embedding width (64)");
  StipFlags train_stip;
  train_stip.add(train);
  shared(train);

  auto* eval = app.add_subcommand("eval", "score a trained model on one side of a split");
  eval->add_option("--data", data_dir, "dataset directory with manifest.json (data)");
  eval->add_option("--model", model_dir, "directory with model.stcv and codebook.json (--out)");
  eval->add_option("--split", split, "split id (1)")->check(CLI::Range(1, 3));
  eval->add_option("--test-fraction", test_fraction, "held-out fraction per class (0.25)");
  eval->add_option("--side", side, "test or train (test)")->check(CLI::IsMember({"test", "train"}));
  shared(eval);

  auto* bench = app.add_subcommand("bench", "time dense against factorized convolution");
  std::optional<std::size_t> repeats;
  bench->add_option("--repeats", repeats, "timed runs per measurement (5)");
  shared(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  stconv::RunConfig cfg;
  try {
    if (config_path) stconv::apply_config_file(cfg, *config_path);
    set_if(seed, cfg.seed);
    set_if(out_dir, cfg.out_dir);
    set_if(format, cfg.format);
    set_if(classes, cfg.synth_classes);
    set_if(per_class, cfg.clips_per_class);
    set_if(frames, cfg.synth_dims[0]);
    set_if(height, cfg.synth_dims[1]);
    set_if(width, cfg.synth_dims[2]);
    set_if(noise, cfg.synth_noise);
    set_if(group_size, cfg.group_size);
    set_if(data_dir, cfg.data_dir);
    set_if(model_dir, cfg.model_dir);
    set_if(side, cfg.side);
    set_if(split, cfg.split_id);
    set_if(test_fraction, cfg.test_fraction);
    set_if(lr, cfg.model.lr);
    set_if(epochs, cfg.model.epochs);
    set_if(batch_size, cfg.model.batch_size);
    set_if(bow_dim, cfg.model.bow_dim);
    set_if(embed_dim, cfg.model.embed_dim);
    set_if(repeats, cfg.bench_repeats);
    stip_flags.apply_to(cfg.stip);
    train_stip.apply_to(cfg.stip);

    if (synth->parsed()) {
      std::cout << stconv::cmd_synth(cfg, std::cerr) << "\n";
    } else if (stip->parsed()) {
      stconv::cmd_stip(cfg, clip_path, std::cout);
    } else if (train->parsed()) {
      stconv::cmd_train(cfg, std::cerr);
    } else if (eval->parsed()) {
      std::cout << stconv::cmd_eval(cfg, std::cerr).report;
    } else if (bench->parsed()) {
      std::cout << stconv::cmd_bench(cfg, std::cerr);
    }
  } catch (const stconv::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const stconv::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const stconv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
