#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "stconv/dataio.hpp"
#include "stconv/error.hpp"
#include "stconv/stip.hpp"
#include "support.hpp"

using namespace stconv;
namespace fs = std::filesystem;

namespace {

VideoClip sample_clip(std::uint64_t seed, std::size_t t = 3, std::size_t h = 4, std::size_t w = 5) {
  Rng rng(seed);
  VideoClip c;
  c.voxels = testing::random_tensor({1, 1, t, h, w}, rng, 0.0, 1.0);
  c.label = 3;
  c.group_id = 17;
  c.clip_id = "sample";
  return c;
}

FormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_clip(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode accepted a damaged buffer");
  return FormatError::Kind::kSyntax;
}

DatasetManifest fixture_manifest(std::size_t classes, std::size_t per_class, std::size_t group_size) {
  DatasetManifest m;
  for (std::size_t c = 0; c < classes; ++c) {
    m.classes.push_back("c" + std::to_string(c));
    for (std::size_t j = 0; j < per_class; ++j) {
      const std::string id = "c" + std::to_string(c) + "_" + std::to_string(j);
      m.clips.push_back({id, id + ".rvid", static_cast<std::uint32_t>(c),
                         static_cast<std::uint32_t>(c * 1000 + j / group_size)});
    }
  }
  return m;
}

double centroid_x(const Tensor5& v, std::size_t t, double level) {
  double sx = 0.0, n = 0.0;
  for (std::size_t y = 0; y < v.extent(3); ++y)
    for (std::size_t x = 0; x < v.extent(4); ++x)
      if (v.at(0, 0, t, y, x) == level) {
        sx += static_cast<double>(x);
        n += 1.0;
      }
  return sx / n;
}

}  // namespace

TEST_CASE("clip container") {
  SUBCASE("round trip") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const VideoClip c = sample_clip(s, 1 + s % 3, 2 + s % 4, 1 + s % 5);
      const VideoClip r = decode_clip(encode_clip(c), "sample");
      CHECK(r.voxels == c.voxels);
      CHECK(r.label == c.label);
      CHECK(r.group_id == c.group_id);
      CHECK(r.clip_id == c.clip_id);
    }
  }

  SUBCASE("file round trip keeps the id from the file name") {
    const fs::path p = fs::temp_directory_path() / "stconv_rt_clip.rvid";
    const VideoClip c = sample_clip(4);
    write_clip(p.string(), c);
    const VideoClip r = read_clip(p.string());
    CHECK(r.clip_id == "stconv_rt_clip");
    CHECK(r.voxels == c.voxels);
    fs::remove(p);
  }

  SUBCASE("single voxel byte layout") {
    VideoClip c;
    c.voxels = Tensor5::volume(1, 1, 1, 0.5);
    const auto bytes = encode_clip(c);
    CHECK(bytes.size() == 40);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RVID");
  }

  SUBCASE("distinct errors") {
    const auto good = encode_clip(sample_clip(9));
    auto truncated = good;
    truncated.pop_back();
    CHECK(decode_kind(truncated) == FormatError::Kind::kTruncated);

    auto magic = good;
    magic[0] = 'X';
    CHECK(decode_kind(magic) == FormatError::Kind::kBadMagic);

    auto version = good;
    version[4] = 2;
    CHECK(decode_kind(version) == FormatError::Kind::kBadVersion);

    auto payload = good;
    payload[40] ^= 0x01;
    CHECK(decode_kind(payload) == FormatError::Kind::kChecksum);

    auto crc = good;
    crc.back() ^= 0x80;
    CHECK(decode_kind(crc) == FormatError::Kind::kChecksum);

    auto extra = good;
    extra.push_back(0);
    CHECK(decode_kind(extra) == FormatError::Kind::kSyntax);

    CHECK(decode_kind({}) == FormatError::Kind::kTruncated);
  }

  SUBCASE("every single-bit flip is rejected") {
    const auto good = encode_clip(sample_clip(10, 2, 2, 2));
    for (std::size_t i = 0; i < good.size(); ++i) {
      auto bad = good;
      bad[i] ^= 0x10;
      CHECK_THROWS_AS(decode_clip(bad), FormatError);
    }
  }

  SUBCASE("invalid clips are not written") {
    VideoClip c = sample_clip(1);
    c.voxels[0] = 1.5;
    CHECK_THROWS_AS(encode_clip(c), InputError);
    CHECK_THROWS_AS(read_clip("/nonexistent/dir/x.rvid"), IoError);
  }
}

TEST_CASE("synth_generate") {
  SUBCASE("translate_right moves one pixel per frame") {
    SynthOptions clean;
    clean.noise = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const VideoClip c = synth_generate(SynthClass::kTranslateRight, 8, 32, 32, seed, clean);
      for (std::size_t t = 1; t < 8; ++t) {
        CHECK(centroid_x(c.voxels, t, clean.foreground) - centroid_x(c.voxels, t - 1, clean.foreground) == 1.0);
      }
    }
    // a long clip reaches the border and stops there
    const VideoClip longc = synth_generate(SynthClass::kTranslateRight, 40, 16, 16, 3, clean);
    const double last = centroid_x(longc.voxels, 39, clean.foreground);
    CHECK(centroid_x(longc.voxels, 38, clean.foreground) == last);
  }

  SUBCASE("deterministic per class and seed") {
    for (std::size_t k = 0; k < kSynthClassCount; ++k) {
      const SynthClass cls = synth_class_from_index(k);
      const VideoClip a = synth_generate(cls, 8, 16, 16, 42);
      const VideoClip b = synth_generate(cls, 8, 16, 16, 42);
      CHECK(a.voxels == b.voxels);
      CHECK(a.label == k);
      a.validate();
      CHECK(!(synth_generate(cls, 8, 16, 16, 43).voxels == a.voxels));
    }
  }

  SUBCASE("noise-free static clip has no interest points") {
    SynthOptions clean;
    clean.noise = 0.0;
    const VideoClip c = synth_generate(SynthClass::kStaticNoise, 8, 16, 16, 5, clean);
    CHECK(detect_stips(c.voxels, StipParams{}).empty());
  }

  SUBCASE("flash is visible only in the middle frame") {
    SynthOptions clean;
    clean.noise = 0.0;
    const VideoClip c = synth_generate(SynthClass::kFlash, 8, 16, 16, 6, clean);
    for (std::size_t t = 0; t < 8; ++t) {
      bool lit = false;
      for (std::size_t i = 0; i < 256; ++i) lit |= c.voxels[t * 256 + i] == clean.foreground;
      CHECK(lit == (t == 4));
    }
  }

  SUBCASE("rotation keeps the square's area roughly fixed") {
    SynthOptions clean;
    clean.noise = 0.0;
    const VideoClip c = synth_generate(SynthClass::kRotate, 8, 32, 32, 7, clean);
    std::vector<double> area(8, 0.0);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t i = 0; i < 1024; ++i) area[t] += c.voxels[t * 1024 + i] == clean.foreground;
    const auto [lo, hi] = std::minmax_element(area.begin(), area.end());
    CHECK(*lo > 0.0);
    CHECK(*hi / *lo < 1.6);
  }

  SUBCASE("translation classes move along different axes") {
    // Foreground centroid drifts along x for rightward motion, along y for downward.
    SynthOptions clean;
    clean.noise = 0.0;
    auto drift = [&](SynthClass cls, std::uint64_t seed) {
      const VideoClip c = synth_generate(cls, 8, 32, 32, seed, clean);
      auto centroid = [&](std::size_t t) {
        double sx = 0, sy = 0, n = 0;
        for (std::size_t y = 0; y < 32; ++y)
          for (std::size_t x = 0; x < 32; ++x)
            if (c.voxels[(t * 32 + y) * 32 + x] == clean.foreground) {
              sx += static_cast<double>(x);
              sy += static_cast<double>(y);
              n += 1;
            }
        return std::pair(sx / n, sy / n);
      };
      const auto [x0, y0] = centroid(0);
      const auto [x1, y1] = centroid(7);
      return std::pair(x1 - x0, y1 - y0);
    };
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto [rx, ry] = drift(SynthClass::kTranslateRight, s);
      CHECK(rx > 0.0);
      CHECK(ry == 0.0);
      const auto [dx, dy] = drift(SynthClass::kTranslateDown, s);
      CHECK(dy > 0.0);
      CHECK(dx == 0.0);
    }
  }

  CHECK_THROWS_AS(synth_generate(SynthClass::kFlash, 3, 16, 16, 1), InputError);
  CHECK_THROWS_AS(synth_generate(SynthClass::kFlash, 8, 15, 16, 1), InputError);
  CHECK_THROWS_AS(synth_class_from_index(5), InputError);
}

TEST_CASE("manifest") {
  const DatasetManifest m = fixture_manifest(3, 5, 2);
  const DatasetManifest r = manifest_from_json(manifest_to_json(m));
  CHECK(r.classes == m.classes);
  REQUIRE(r.clips.size() == m.clips.size());
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    CHECK(r.clips[i].id == m.clips[i].id);
    CHECK(r.clips[i].path == m.clips[i].path);
    CHECK(r.clips[i].label == m.clips[i].label);
    CHECK(r.clips[i].group == m.clips[i].group);
  }

  DatasetManifest dup = m;
  dup.clips[1].id = dup.clips[0].id;
  CHECK_THROWS_AS(dup.validate(), InputError);
  DatasetManifest empty_class = m;
  empty_class.classes.push_back("unused");
  CHECK_THROWS_AS(empty_class.validate(), InputError);
  DatasetManifest bad_label = m;
  bad_label.clips[0].label = 9;
  CHECK_THROWS_AS(bad_label.validate(), InputError);
  CHECK_THROWS_AS(manifest_from_json("{\"classes\": [}"), FormatError);
  CHECK_THROWS_AS(manifest_from_json("{\"classes\": [\"a\"]}"), FormatError);
}

TEST_CASE("make_splits") {
  SUBCASE("singleton groups give the exact fraction") {
    const DatasetManifest m = fixture_manifest(2, 100, 1);
    const Split s = make_splits(m, 1, 0.25);
    std::size_t per_class[2] = {0, 0};
    for (const auto& id : s.test) ++per_class[id[1] - '0'];
    CHECK(per_class[0] == 25);
    CHECK(per_class[1] == 25);
    CHECK(s.warnings.empty());
  }

  SUBCASE("partition, group integrity and determinism") {
    const DatasetManifest m = fixture_manifest(4, 20, 3);
    for (int id = 1; id <= 3; ++id) {
      const Split s = make_splits(m, id, 0.3);
      std::set<std::string> train(s.train.begin(), s.train.end()), test(s.test.begin(), s.test.end());
      CHECK(train.size() + test.size() == m.clips.size());
      for (const auto& t : test) CHECK(train.count(t) == 0);
      std::set<std::uint32_t> train_groups, test_groups;
      for (const auto& c : m.clips) (test.count(c.id) ? test_groups : train_groups).insert(c.group);
      for (auto g : test_groups) CHECK(train_groups.count(g) == 0);
      // each class reaches the fraction and keeps training data
      for (std::size_t c = 0; c < 4; ++c) {
        std::size_t n = 0;
        for (const auto& t : test) n += t[1] - '0' == static_cast<int>(c);
        CHECK(n >= 6);
        CHECK(n < 20);
      }
      const Split again = make_splits(m, id, 0.3);
      CHECK(again.test == s.test);
    }
  }

  SUBCASE("the three splits differ pairwise") {
    const DatasetManifest m = fixture_manifest(1, 20, 1);  // 20 groups
    const auto a = make_splits(m, 1, 0.25).test, b = make_splits(m, 2, 0.25).test,
               c = make_splits(m, 3, 0.25).test;
    CHECK(a != b);
    CHECK(a != c);
    CHECK(b != c);
  }

  SUBCASE("single-group class stays in train with a warning") {
    DatasetManifest m = fixture_manifest(2, 8, 2);
    for (auto& c : m.clips)
      if (c.label == 1) c.group = 77;
    const Split s = make_splits(m, 1, 0.25);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("c1") != std::string::npos);
    for (const auto& t : s.test) CHECK(t[1] == '0');
  }

  const DatasetManifest m = fixture_manifest(2, 4, 1);
  CHECK_THROWS_AS(make_splits(m, 0, 0.25), InputError);
  CHECK_THROWS_AS(make_splits(m, 4, 0.25), InputError);
  CHECK_THROWS_AS(make_splits(m, 1, 0.0), InputError);
  CHECK_THROWS_AS(make_splits(m, 1, 1.0), InputError);
}

TEST_CASE("batch_iter") {
  const auto b = batch_iter(12, 5, 7, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 5);
  CHECK(b[1].size() == 5);
  CHECK(b[2].size() == 2);
  std::vector<std::size_t> all;
  for (const auto& chunk : b) all.insert(all.end(), chunk.begin(), chunk.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 12; ++i) CHECK(all[i] == i);

  CHECK(batch_iter(12, 5, 7, 0) == b);
  CHECK(batch_iter(12, 5, 7, 1) != b);
  CHECK(batch_iter(0, 5, 7, 0).empty());
  CHECK_THROWS_AS(batch_iter(3, 0, 1, 0), InputError);

  const std::vector<std::string> ids = {"a", "b", "c"};
  const auto named = batch_iter(ids, 2, 1, 0);
  REQUIRE(named.size() == 2);
  CHECK(named[1].size() == 1);
}
