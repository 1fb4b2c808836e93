#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stconv/tensor.hpp"

// RVID clip files, the synthetic motion corpus, JSON manifests, group-aware
// train/test splits and shuffled batching.

namespace stconv {

inline constexpr std::uint32_t kRvidVersion = 1;

struct VideoClip {
  Tensor5 voxels;  // (1, 1, T, H, W), values in [0, 1]
  std::uint32_t label = 0;
  std::string clip_id;
  std::uint32_t group_id = 0;

  std::size_t frames() const { return voxels.extent(2); }
  std::size_t height() const { return voxels.extent(3); }
  std::size_t width() const { return voxels.extent(4); }

  /// Throws InputError unless the voxels form a non-empty volume in [0, 1].
  void validate() const;
};

/// RVID bytes: "RVID", version, T, H, W, label, group (u32 each), T*H*W
/// little-endian doubles, CRC32 of everything before it. The clip id is not
/// stored; read_clip takes it from the manifest or the file name.
std::vector<std::uint8_t> encode_clip(const VideoClip& clip);
VideoClip decode_clip(const std::vector<std::uint8_t>& bytes, std::string clip_id = {});

void write_clip(const std::string& path, const VideoClip& clip);
VideoClip read_clip(const std::string& path, std::string clip_id = {});

enum class SynthClass { kTranslateRight, kTranslateDown, kRotate, kFlash, kStaticNoise };

inline constexpr std::size_t kSynthClassCount = 5;

std::string_view synth_class_name(SynthClass c);
SynthClass synth_class_from_index(std::size_t i);

struct SynthOptions {
  double noise = 0.05;       // background noise amplitude
  double background = 0.1;
  double foreground = 0.9;
};

/// Bright square on a noisy background moving per the class. The seed picks
/// the start position, the square size (4 to 7 px) and the noise.
VideoClip synth_generate(SynthClass cls, std::size_t frames, std::size_t height,
                         std::size_t width, std::uint64_t seed, const SynthOptions& opts = {});

struct ManifestEntry {
  std::string id;
  std::string path;  // relative paths resolve against the manifest directory
  std::uint32_t label = 0;
  std::uint32_t group = 0;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> clips;

  /// Unique ids, labels in range, every class populated.
  void validate() const;
};

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(std::string_view text);
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> warnings;
};

/// Whole groups move to test, in split-keyed hash order, until each class
/// has at least test_fraction of its clips there. At least one group per
/// class stays in train; a class with one group stays entirely in train.
Split make_splits(const DatasetManifest& m, int split_id, double test_fraction);

/// Indices 0..n-1 shuffled by (seed, epoch), cut into chunks of batch_size.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch);

/// Same as above over explicit ids.
std::vector<std::vector<std::string>> batch_iter(const std::vector<std::string>& ids,
                                                 std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);

}  // namespace stconv
