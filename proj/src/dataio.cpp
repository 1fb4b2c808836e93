#include "stconv/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "binary.hpp"
#include "json.hpp"
#include "stconv/error.hpp"
#include "stconv/rng.hpp"

namespace stconv {

using nlohmann::json;

namespace {

constexpr std::string_view kRvidMagic = "RVID";
constexpr std::size_t kRvidHeader = 4 + 4 + 12 + 4 + 4;

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw InputError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void VideoClip::validate() const {
  if (voxels.extent(0) != 1 || voxels.extent(1) != 1 || voxels.empty()) {
    throw InputError("clip " + clip_id + " must be a non-empty (1, 1, T, H, W) volume, got " +
                     to_string(voxels.shape()));
  }
  for (double v : voxels.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("clip " + clip_id + " has a voxel outside [0, 1]");
  }
}

std::vector<std::uint8_t> encode_clip(const VideoClip& clip) {
  clip.validate();
  detail::ByteWriter w;
  w.text(kRvidMagic);
  w.u32(kRvidVersion);
  w.u32(to_u32(clip.frames(), "T"));
  w.u32(to_u32(clip.height(), "H"));
  w.u32(to_u32(clip.width(), "W"));
  w.u32(clip.label);
  w.u32(clip.group_id);
  for (double v : clip.voxels.data()) w.f64(v);
  w.seal();
  return w.take();
}

VideoClip decode_clip(const std::vector<std::uint8_t>& bytes, std::string clip_id) {
  const std::string what = clip_id.empty() ? std::string("RVID") : "RVID " + clip_id;
  detail::check_magic(bytes, kRvidMagic, what);
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  r.text(4);
  const std::uint32_t version = r.u32();
  if (version != kRvidVersion) {
    throw FormatError(FormatError::Kind::kBadVersion,
                      what + ": unsupported version " + std::to_string(version));
  }
  const std::size_t t = r.u32(), h = r.u32(), w = r.u32();
  VideoClip clip;
  clip.label = r.u32();
  clip.group_id = r.u32();
  clip.clip_id = std::move(clip_id);
  if (t == 0 || h == 0 || w == 0) throw FormatError(FormatError::Kind::kShape, what + ": zero extent");
  const std::size_t voxels = t * h * w;  // each factor < 2^32
  const std::size_t expected = kRvidHeader + 8 * voxels + 4;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::kTruncated,
                      what + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::kSyntax, what + ": trailing bytes after payload");
  }
  detail::check_crc(bytes, what);
  std::vector<double> data(voxels);
  for (double& v : data) v = r.f64();
  clip.voxels = Tensor5({1, 1, t, h, w}, std::move(data));
  return clip;
}

void write_clip(const std::string& path, const VideoClip& clip) {
  detail::write_file(path, encode_clip(clip));
}

VideoClip read_clip(const std::string& path, std::string clip_id) {
  if (clip_id.empty()) clip_id = std::filesystem::path(path).stem().string();
  return decode_clip(detail::read_file(path), std::move(clip_id));
}

std::string_view synth_class_name(SynthClass c) {
  switch (c) {
    case SynthClass::kTranslateRight: return "translate_right";
    case SynthClass::kTranslateDown: return "translate_down";
    case SynthClass::kRotate: return "rotate";
    case SynthClass::kFlash: return "flash";
    case SynthClass::kStaticNoise: return "static_noise";
  }
  return "unknown";
}

SynthClass synth_class_from_index(std::size_t i) {
  if (i >= kSynthClassCount) throw InputError("synthetic class index " + std::to_string(i) + " out of range");
  return static_cast<SynthClass>(i);
}

VideoClip synth_generate(SynthClass cls, std::size_t frames, std::size_t height,
                         std::size_t width, std::uint64_t seed, const SynthOptions& opts) {
  if (frames < 4 || height < 16 || width < 16) {
    throw InputError("synthetic clips need T >= 4 and H, W >= 16, got " + std::to_string(frames) +
                     "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  const auto ci = static_cast<std::uint64_t>(cls);
  Rng rng(mix64(seed, ci));
  const std::size_t T = frames, H = height, W = width;
  const std::size_t sz = 4 + static_cast<std::size_t>(rng.below(4));

  Tensor5 v = Tensor5::volume(T, H, W);
  for (double& x : v.data()) x = std::clamp(opts.background + opts.noise * rng.uniform(-1.0, 1.0), 0.0, 1.0);

  auto paint = [&](std::size_t t, std::size_t y0, std::size_t x0) {
    for (std::size_t y = y0; y < std::min(H, y0 + sz); ++y)
      for (std::size_t x = x0; x < std::min(W, x0 + sz); ++x) v.at(0, 0, t, y, x) = opts.foreground;
  };
  // Start offsets leave room for T-1 one-pixel steps when the clip allows it.
  auto travel_start = [&](std::size_t extent) {
    const std::size_t room = extent - sz;
    const std::size_t span = room > T - 1 ? room - (T - 1) : 0;
    return static_cast<std::size_t>(rng.below(span + 1));
  };

  switch (cls) {
    case SynthClass::kTranslateRight: {
      const std::size_t y0 = static_cast<std::size_t>(rng.below(H - sz + 1));
      const std::size_t x0 = travel_start(W);
      for (std::size_t t = 0; t < T; ++t) paint(t, y0, std::min(x0 + t, W - sz));
      break;
    }
    case SynthClass::kTranslateDown: {
      const std::size_t x0 = static_cast<std::size_t>(rng.below(W - sz + 1));
      const std::size_t y0 = travel_start(H);
      for (std::size_t t = 0; t < T; ++t) paint(t, std::min(y0 + t, H - sz), x0);
      break;
    }
    case SynthClass::kRotate: {
      const double cy = (static_cast<double>(H) - 1.0) / 2.0;
      const double cx = (static_cast<double>(W) - 1.0) / 2.0;
      const double radius = static_cast<double>(std::min(H, W)) / 4.0 + rng.uniform(0.0, 2.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double half = static_cast<double>(sz) / 2.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(T);
        const double ca = std::cos(a), sa = std::sin(a);
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            // pixel mapped back to the unrotated frame
            const double u = ca * dx + sa * dy, w = -sa * dx + ca * dy;
            if (std::abs(u - radius) <= half && std::abs(w) <= half) v.at(0, 0, t, y, x) = opts.foreground;
          }
      }
      break;
    }
    case SynthClass::kFlash: {
      const std::size_t y0 = static_cast<std::size_t>(rng.below(H - sz + 1));
      const std::size_t x0 = static_cast<std::size_t>(rng.below(W - sz + 1));
      paint(T / 2, y0, x0);
      break;
    }
    case SynthClass::kStaticNoise:
      break;
  }

  VideoClip clip;
  clip.voxels = std::move(v);
  clip.label = static_cast<std::uint32_t>(ci);
  clip.clip_id = std::string(synth_class_name(cls)) + "-" + std::to_string(seed);
  return clip;
}

void DatasetManifest::validate() const {
  if (classes.empty()) throw InputError("manifest has no classes");
  std::set<std::string> ids;
  std::vector<std::size_t> per_class(classes.size(), 0);
  for (const auto& c : clips) {
    if (!ids.insert(c.id).second) throw InputError("manifest: duplicate clip id " + c.id);
    if (c.label >= classes.size()) {
      throw InputError("manifest: clip " + c.id + " has label " + std::to_string(c.label) +
                       " but only " + std::to_string(classes.size()) + " classes");
    }
    ++per_class[c.label];
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (per_class[i] == 0) throw InputError("manifest: class " + classes[i] + " has no clips");
  }
}

std::string manifest_to_json(const DatasetManifest& m) {
  json doc;
  doc["classes"] = m.classes;
  doc["clips"] = json::array();
  for (const auto& c : m.clips) {
    doc["clips"].push_back({{"id", c.id}, {"path", c.path}, {"label", c.label}, {"group", c.group}});
  }
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
  DatasetManifest m;
  try {
    const json doc = json::parse(text);
    m.classes = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& c : doc.at("clips")) {
      m.clips.push_back({c.at("id").get<std::string>(), c.at("path").get<std::string>(),
                         c.at("label").get<std::uint32_t>(), c.at("group").get<std::uint32_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::kSyntax, std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  m.validate();
  const std::string text = manifest_to_json(m);
  detail::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

DatasetManifest load_manifest(const std::string& path) {
  const auto bytes = detail::read_file(path);
  try {
    return manifest_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path + ": " + e.what());
  }
}

Split make_splits(const DatasetManifest& m, int split_id, double test_fraction) {
  if (split_id < 1 || split_id > 3) throw InputError("split_id must be 1, 2 or 3, got " + std::to_string(split_id));
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InputError("test_fraction must lie in (0, 1)");
  }
  m.validate();
  const std::size_t C = m.classes.size();

  std::map<std::uint32_t, std::vector<std::size_t>> group_clips;  // group -> clip indices
  std::vector<std::set<std::uint32_t>> class_groups(C);
  std::vector<std::size_t> class_size(C, 0);
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    group_clips[m.clips[i].group].push_back(i);
    class_groups[m.clips[i].label].insert(m.clips[i].group);
    ++class_size[m.clips[i].label];
  }

  Split out;
  std::set<std::uint32_t> pinned;  // groups that must stay in train
  for (std::size_t c = 0; c < C; ++c) {
    if (class_groups[c].size() == 1) {
      out.warnings.push_back("class " + m.classes[c] + " has a single group; kept entirely in train");
      pinned.insert(*class_groups[c].begin());
    }
  }

  std::vector<std::uint32_t> order;
  for (const auto& [g, _] : group_clips) order.push_back(g);
  const std::uint64_t key = mix64(0x5eed5011ULL, static_cast<std::uint64_t>(split_id));
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return std::pair(mix64(key, a), a) < std::pair(mix64(key, b), b);
  });

  std::vector<std::size_t> test_count(C, 0);
  std::vector<std::size_t> train_groups(C);
  for (std::size_t c = 0; c < C; ++c) train_groups[c] = class_groups[c].size();
  std::set<std::uint32_t> test_groups;
  for (std::uint32_t g : order) {
    if (pinned.count(g)) continue;
    std::set<std::uint32_t> labels;
    for (std::size_t i : group_clips[g]) labels.insert(m.clips[i].label);
    bool wanted = false, allowed = true;
    for (std::uint32_t c : labels) {
      if (static_cast<double>(test_count[c]) < test_fraction * static_cast<double>(class_size[c])) wanted = true;
      if (train_groups[c] <= 1) allowed = false;
    }
    if (!wanted || !allowed) continue;
    test_groups.insert(g);
    for (std::size_t i : group_clips[g]) ++test_count[m.clips[i].label];
    for (std::uint32_t c : labels) --train_groups[c];
  }

  for (const auto& c : m.clips) (test_groups.count(c.group) ? out.test : out.train).push_back(c.id);
  return out;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw InputError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

std::vector<std::vector<std::string>> batch_iter(const std::vector<std::string>& ids,
                                                 std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
  std::vector<std::vector<std::string>> out;
  for (const auto& b : batch_iter(ids.size(), batch_size, seed, epoch)) {
    auto& chunk = out.emplace_back();
    for (std::size_t i : b) chunk.push_back(ids[i]);
  }
  return out;
}

}  // namespace stconv
