#include "stconv/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "stconv/checkpoint.hpp"
#include "stconv/dataio.hpp"
#include "stconv/error.hpp"
#include "stconv/metrics.hpp"
#include "stconv/parallel.hpp"
#include "stconv/rng.hpp"

namespace stconv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Setter = std::function<void(RunConfig&, const json&)>;

struct KeySpec {
  std::string help;
  Setter set;
};

template <typename T>
T value_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + key + " has the wrong type");
  }
}

template <typename T, typename Field>
KeySpec field(std::string help, Field f) {
  return {std::move(help), [f](RunConfig& c, const json& v) { f(c) = value_as<T>(v, "value"); }};
}

void set_blocks(RunConfig& c, const std::vector<std::size_t>& channels) {
  const ConvBlockConfig proto = c.model.blocks.empty() ? ConvBlockConfig{} : c.model.blocks.front();
  c.model.blocks.clear();
  for (std::size_t ch : channels) c.model.blocks.push_back({ch, proto.kt, proto.pool});
}

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = {
      {"seed", field<std::uint64_t>("seed for synthesis, splits' batching, codebook and init (1)",
                                    [](RunConfig& c) -> auto& { return c.seed; })},
      {"out", field<std::string>("output directory (out)", [](RunConfig& c) -> auto& { return c.out_dir; })},
      {"format", field<std::string>("report format json|csv (json)", [](RunConfig& c) -> auto& { return c.format; })},
      {"data.dir", field<std::string>("dataset directory holding manifest.json (data)",
                                      [](RunConfig& c) -> auto& { return c.data_dir; })},
      {"data.split", field<int>("split id 1|2|3 (1)", [](RunConfig& c) -> auto& { return c.split_id; })},
      {"data.test_fraction", field<double>("fraction of each class held out (0.25)",
                                           [](RunConfig& c) -> auto& { return c.test_fraction; })},
      {"eval.side", field<std::string>("split side to score, test|train (test)",
                                       [](RunConfig& c) -> auto& { return c.side; })},
      {"eval.model", field<std::string>("directory with model.stcv and codebook.json (out)",
                                        [](RunConfig& c) -> auto& { return c.model_dir; })},
      {"model.lr", field<double>("Adam learning rate (0.001)", [](RunConfig& c) -> auto& { return c.model.lr; })},
      {"model.beta1", field<double>("Adam beta1 (0.9)", [](RunConfig& c) -> auto& { return c.model.beta1; })},
      {"model.beta2", field<double>("Adam beta2 (0.999)", [](RunConfig& c) -> auto& { return c.model.beta2; })},
      {"model.epsilon", field<double>("Adam epsilon (1e-8)", [](RunConfig& c) -> auto& { return c.model.epsilon; })},
      {"model.epochs", field<std::size_t>("training epochs (30)", [](RunConfig& c) -> auto& { return c.model.epochs; })},
      {"model.batch_size", field<std::size_t>("clips per batch (5)",
                                              [](RunConfig& c) -> auto& { return c.model.batch_size; })},
      {"model.embed_dim", field<std::size_t>("embedding width (64)",
                                             [](RunConfig& c) -> auto& { return c.model.embed_dim; })},
      {"model.bow_dim", field<std::size_t>("codebook size K (64)", [](RunConfig& c) -> auto& { return c.model.bow_dim; })},
      {"model.channels", {"output channels per conv block ([8, 16, 32])",
                          [](RunConfig& c, const json& v) {
                            set_blocks(c, value_as<std::vector<std::size_t>>(v, "model.channels"));
                          }}},
      {"model.kt", {"temporal kernel extent of every block (3)",
                    [](RunConfig& c, const json& v) {
                      const auto kt = value_as<std::size_t>(v, "model.kt");
                      for (auto& b : c.model.blocks) b.kt = kt;
                    }}},
      {"model.pool", {"max-pool window [t, h, w] of every block ([2, 2, 2])",
                      [](RunConfig& c, const json& v) {
                        const auto p = value_as<Extent3>(v, "model.pool");
                        for (auto& b : c.model.blocks) b.pool = p;
                      }}},
      {"stip.sigma", field<double>("spatial scale (2)", [](RunConfig& c) -> auto& { return c.stip.sigma; })},
      {"stip.tau", field<double>("temporal scale (2)", [](RunConfig& c) -> auto& { return c.stip.tau; })},
      {"stip.s", field<double>("integration scale factor (2)", [](RunConfig& c) -> auto& { return c.stip.s; })},
      {"stip.k", field<double>("Harris constant (0.005)", [](RunConfig& c) -> auto& { return c.stip.k; })},
      {"stip.threshold_frac", field<double>("threshold as a fraction of the peak response (0.1)",
                                            [](RunConfig& c) -> auto& { return c.stip.threshold_frac; })},
      {"stip.nms_radius", field<std::size_t>("non-maximum suppression radius (2)",
                                             [](RunConfig& c) -> auto& { return c.stip.nms_radius; })},
      {"stip.cuboid", field<Extent3>("descriptor half-extents [t, y, x] ([4, 6, 6])",
                                     [](RunConfig& c) -> auto& { return c.stip.cuboid; })},
      {"stip.max_points", field<std::size_t>("strongest points kept per clip, 0 keeps all (200)",
                                             [](RunConfig& c) -> auto& { return c.stip.max_points; })},
      {"synth.classes", field<std::size_t>("number of synthetic classes, at most 5 (5)",
                                           [](RunConfig& c) -> auto& { return c.synth_classes; })},
      {"synth.clips_per_class", field<std::size_t>("clips per class (40)",
                                                   [](RunConfig& c) -> auto& { return c.clips_per_class; })},
      {"synth.frames", field<std::size_t>("clip frames (8)", [](RunConfig& c) -> auto& { return c.synth_dims[0]; })},
      {"synth.height", field<std::size_t>("clip height (32)", [](RunConfig& c) -> auto& { return c.synth_dims[1]; })},
      {"synth.width", field<std::size_t>("clip width (32)", [](RunConfig& c) -> auto& { return c.synth_dims[2]; })},
      {"synth.noise", field<double>("background noise amplitude (0.05)",
                                    [](RunConfig& c) -> auto& { return c.synth_noise; })},
      {"synth.group_size", field<std::size_t>("consecutive clips sharing a group id (4)",
                                              [](RunConfig& c) -> auto& { return c.group_size; })},
      {"bench.repeats", field<std::size_t>("timed runs per measurement (5)",
                                           [](RunConfig& c) -> auto& { return c.bench_repeats; })},
  };
  return table;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string manifest_path(const RunConfig& cfg) { return (fs::path(cfg.data_dir) / "manifest.json").string(); }

std::vector<VideoClip> read_clips(const RunConfig& cfg, const DatasetManifest& m,
                                  const std::vector<std::string>& ids, const ClipAccessHook& on_read) {
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.clips) by_id[e.id] = &e;
  std::vector<VideoClip> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const ManifestEntry& e = *by_id.at(id);
    fs::path p(e.path);
    if (p.is_relative()) p = fs::path(cfg.data_dir) / p;
    if (on_read) on_read(id);
    VideoClip clip = read_clip(p.string(), id);
    if (clip.label != e.label) {
      throw InputError("clip " + id + " stores label " + std::to_string(clip.label) +
                       " but the manifest says " + std::to_string(e.label));
    }
    out.push_back(std::move(clip));
  }
  return out;
}

std::vector<std::vector<InterestPoint>> detect_all(const std::vector<VideoClip>& clips,
                                                   const StipParams& params) {
  std::vector<std::vector<InterestPoint>> pts(clips.size());
  parallel_for(clips.size(), default_workers(),
               [&](std::size_t i) { pts[i] = detect_stips(clips[i].voxels, params); });
  return pts;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void apply_config_json(RunConfig& cfg, std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
  const auto& table = key_table();
  // Channel lists rebuild the blocks, so they apply before per-block keys.
  if (doc.contains("model.channels")) table.at("model.channels").set(cfg, doc["model.channels"]);
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    if (key == "model.channels") continue;
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError&) {
      throw ConfigError("config key " + key + " has the wrong type");
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  apply_config_json(cfg, text);
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, v] : key_table()) out.emplace_back(k, v.help);
  return out;
}

std::string cmd_synth(const RunConfig& cfg, std::ostream& log) {
  if (cfg.clips_per_class == 0) throw InputError("clips_per_class must be at least 1");
  if (cfg.synth_classes < 2 || cfg.synth_classes > kSynthClassCount) {
    throw InputError("synth classes must lie in [2, " + std::to_string(kSynthClassCount) + "]");
  }
  if (cfg.group_size == 0) throw InputError("group_size must be at least 1");
  const fs::path out(cfg.out_dir);
  make_dir((out / "clips").string());
  SynthOptions opts;
  opts.noise = cfg.synth_noise;
  DatasetManifest m;
  const std::size_t groups_per_class = (cfg.clips_per_class + cfg.group_size - 1) / cfg.group_size;
  for (std::size_t c = 0; c < cfg.synth_classes; ++c) {
    const SynthClass cls = synth_class_from_index(c);
    m.classes.emplace_back(synth_class_name(cls));
    for (std::size_t j = 0; j < cfg.clips_per_class; ++j) {
      const std::uint64_t seed = mix64(cfg.seed, c * cfg.clips_per_class + j);
      VideoClip clip = synth_generate(cls, cfg.synth_dims[0], cfg.synth_dims[1], cfg.synth_dims[2], seed, opts);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04zu", std::string(synth_class_name(cls)).c_str(), j);
      clip.clip_id = id;
      clip.group_id = static_cast<std::uint32_t>(c * groups_per_class + j / cfg.group_size);
      const std::string rel = std::string("clips/") + id + ".rvid";
      write_clip((out / rel).string(), clip);
      m.clips.push_back({clip.clip_id, rel, clip.label, clip.group_id});
    }
  }
  const std::string path = (out / "manifest.json").string();
  save_manifest(path, m);
  log << "wrote " << m.clips.size() << " clips and " << path << "\n";
  return path;
}

void cmd_stip(const RunConfig& cfg, const std::string& clip_path, std::ostream& out) {
  const VideoClip clip = read_clip(clip_path);
  for (const auto& p : detect_stips(clip.voxels, cfg.stip)) {
    json line = {{"t", p.t}, {"y", p.y}, {"x", p.x}, {"response", p.response},
                 {"descriptor", std::vector<double>(p.descriptor.begin(), p.descriptor.end())}};
    out << line.dump() << "\n";
  }
}

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, const ClipAccessHook& on_read) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.stip.validate();
  const DatasetManifest m = load_manifest(manifest_path(cfg));
  const Split split = make_splits(m, cfg.split_id, cfg.test_fraction);
  for (const auto& w : split.warnings) log << "warning: " << w << "\n";
  if (split.train.empty()) throw InputError("split " + std::to_string(cfg.split_id) + " has no training clips");

  const std::vector<VideoClip> clips = read_clips(cfg, m, split.train, on_read);
  HybridConfig mc = cfg.model;
  mc.num_classes = m.classes.size();
  mc.input = {clips[0].frames(), clips[0].height(), clips[0].width()};
  mc.seed = cfg.seed;
  mc.validate();

  const auto points = detect_all(clips, cfg.stip);
  std::size_t total = 0;
  for (const auto& p : points) total += p.size();
  if (total < mc.bow_dim) {
    throw InputError("only " + std::to_string(total) + " interest points in the training clips; the codebook needs " +
                     std::to_string(mc.bow_dim));
  }
  Tensor5 desc = Tensor5::matrix(total, kDescriptorSize);
  std::size_t row = 0;
  for (const auto& pts : points)
    for (const auto& p : pts) {
      std::copy(p.descriptor.begin(), p.descriptor.end(), desc.data().begin() + static_cast<std::ptrdiff_t>(row * kDescriptorSize));
      ++row;
    }
  const KMeansResult km = kmeans_fit(desc, mc.bow_dim, mix64(cfg.seed, 0xc0de));
  log << "codebook: " << mc.bow_dim << " centers from " << total << " descriptors, "
      << km.iterations << " iterations\n";

  TrainSet ts;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].voxels.shape() != clips[0].voxels.shape()) {
      throw InputError("clip " + clips[i].clip_id + " has shape " + to_string(clips[i].voxels.shape()) +
                       ", expected " + to_string(clips[0].voxels.shape()));
    }
    ts.clips.push_back(clips[i].voxels);
    ts.bows.push_back(encode_bow(points[i], km.codebook));
    ts.labels.push_back(clips[i].label);
  }

  HybridModel model = model_init(mc, cfg.seed);
  make_dir(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  TrainSummary summary;
  summary.train_clips = clips.size();
  summary.descriptors = total;
  std::ofstream train_log(out / "train_log.jsonl", std::ios::trunc);
  if (!train_log) throw IoError("cannot open " + (out / "train_log.jsonl").string());
  for (std::size_t e = 0; e < mc.epochs; ++e) {
    const double loss = train_epoch(model, ts, e);
    summary.epoch_losses.push_back(loss);
    const json line = {{"epoch", e + 1}, {"mean_loss", loss}, {"wall_seconds", seconds_since(t0)}};
    train_log << line.dump() << "\n";
    train_log.flush();
    log << "epoch " << e + 1 << " loss " << loss << "\n";
  }
  save_checkpoint((out / "model.stcv").string(), model, cfg.stip);
  save_codebook((out / "codebook.json").string(), km.codebook);
  return summary;
}

EvalSummary cmd_eval(const RunConfig& cfg, std::ostream& log, const ClipAccessHook& on_read) {
  const ReportFormat format = parse_report_format(cfg.format);
  if (cfg.side != "test" && cfg.side != "train") throw InputError("side must be test or train, got " + cfg.side);
  const fs::path model_dir(cfg.model_dir.empty() ? cfg.out_dir : cfg.model_dir);
  const Checkpoint ck = load_checkpoint((model_dir / "model.stcv").string());
  const Codebook cb = load_codebook((model_dir / "codebook.json").string());
  if (cb.size() != ck.model.cfg.bow_dim || cb.width() != kDescriptorSize) {
    throw FormatError(FormatError::Kind::kShape, "codebook does not match the checkpoint");
  }
  const DatasetManifest m = load_manifest(manifest_path(cfg));
  if (m.classes.size() != ck.model.cfg.num_classes) {
    throw FormatError(FormatError::Kind::kShape, "manifest has " + std::to_string(m.classes.size()) +
                                                     " classes, checkpoint expects " +
                                                     std::to_string(ck.model.cfg.num_classes));
  }
  const Split split = make_splits(m, cfg.split_id, cfg.test_fraction);
  const auto& ids = cfg.side == "test" ? split.test : split.train;
  if (ids.empty()) throw InputError("the " + cfg.side + " side of split " + std::to_string(cfg.split_id) + " is empty");
  const std::vector<VideoClip> clips = read_clips(cfg, m, ids, on_read);
  const auto points = detect_all(clips, ck.stip);

  std::vector<std::size_t> preds(clips.size());
  parallel_for(clips.size(), default_workers(), [&](std::size_t i) {
    preds[i] = predict(ck.model, clips[i].voxels, encode_bow(points[i], cb));
  });
  ConfusionMatrix cm(m.classes.size());
  for (std::size_t i = 0; i < clips.size(); ++i) cm.accumulate(clips[i].label, preds[i]);

  EvalSummary s;
  s.clips = clips.size();
  s.accuracy = accuracy(cm);
  const auto rows = class_rows(cm, m.classes);
  s.report = emit_report(rows, cm, format);
  make_dir(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / ("report." + cfg.format)).string(), s.report);
  log << cfg.side << " accuracy " << s.accuracy << " over " << s.clips << " clips\n";
  return s;
}

std::string cmd_bench(const RunConfig& cfg, std::ostream& log) {
  if (cfg.bench_repeats == 0) throw InputError("bench repeats must be at least 1");
  struct Size {
    std::string name;
    std::size_t cin, cout, t, h, w;
  };
  const std::vector<Size> sizes = {{"small", 4, 4, 8, 32, 32}, {"reference", 16, 16, 16, 64, 64}};
  const Extent3 k{3, 3, 3}, pad{1, 1, 1};
  Rng rng(mix64(cfg.seed, 0xbe7c));
  auto fill = [&](Tensor5& t) {
    for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  };
  auto time_once = [](const auto& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return seconds_since(t0);
  };
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };

  json rows = json::array();
  for (const auto& s : sizes) {
    Tensor5 x({1, s.cin, s.t, s.h, s.w});
    fill(x);
    Conv3dKernel dense = Conv3dKernel::zeros(s.cout, s.cin, k, {1, 1, 1}, pad);
    fill(dense.weights);
    FactorizedConv3d fact = FactorizedConv3d::zeros(s.cin, s.cout, s.cout, k, {1, 1, 1}, pad);
    fill(fact.temporal.weights);
    fill(fact.spatial.weights);

    const FlopDims dims = flop_dims_for(x.shape(), fact);
    const std::uint64_t fd = flop_count(ConvKind::kDense, dims);
    const std::uint64_t ff = flop_count(ConvKind::kFactorized, dims);

    volatile double sink = 0.0;
    auto run_dense = [&] { sink = sink + conv3d_forward(x, dense)[0]; };
    auto run_fact = [&] { sink = sink + conv3d_factorized_forward(x, fact)[0]; };
    run_dense();  // warm-up
    run_fact();
    std::vector<double> td, tf, tc;
    // Rotating the run order keeps allocator and cache state from favouring one slot.
    for (std::size_t r = 0; r < cfg.bench_repeats; ++r) {
      for (std::size_t slot = 0; slot < 3; ++slot) {
        switch ((r + slot) % 3) {
          case 0: td.push_back(time_once(run_dense)); break;
          case 1: tf.push_back(time_once(run_fact)); break;
          default: tc.push_back(time_once(run_dense)); break;
        }
      }
    }
    const double md = median(td), mf = median(tf), mc = median(tc);
    rows.push_back({{"name", s.name},
                    {"input", {1, s.cin, s.t, s.h, s.w}},
                    {"out_channels", s.cout},
                    {"mid_channels", s.cout},
                    {"kernel", k},
                    {"dense_flops", fd},
                    {"factorized_flops", ff},
                    {"flop_ratio", static_cast<double>(fd) / static_cast<double>(ff)},
                    {"dense_median_seconds", md},
                    {"factorized_median_seconds", mf},
                    {"speedup", md / mf},
                    {"control_dense_median_seconds", mc},
                    {"control_ratio", md / mc}});
    log << s.name << ": flop ratio " << static_cast<double>(fd) / static_cast<double>(ff) << ", speedup "
        << md / mf << ", control " << md / mc << "\n";
  }
  json doc = {{"repeats", cfg.bench_repeats},
              {"sizes", rows},
              {"hardware",
               {{"hardware_concurrency", std::thread::hardware_concurrency()},
                {"note", "direct-loop convolution, single thread per layer"}}}};
  return doc.dump(2) + "\n";
}

}  // namespace stconv
