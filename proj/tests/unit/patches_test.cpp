#include <filesystem>
#include <set>

#include "doctest.h"
#include "voxseg/errors.hpp"
#include "voxseg/log.hpp"
#include "voxseg/patches.hpp"
#include "voxseg/random.hpp"

using namespace voxseg;

namespace {

struct Subject {
  MultiChannelVolume mcv;
  LabelVolume mask;
};

Subject make_subject(Dims d, std::uint64_t seed, int lesion_voxels) {
  Rng rng(seed);
  Subject s{MultiChannelVolume(2, d), LabelVolume(d)};
  for (auto& x : s.mcv.data) x = static_cast<float>(rng.normal());
  for (int i = 0; i < lesion_voxels; ++i) s.mask.data[static_cast<std::size_t>(rng.below(s.mask.data.size()))] = 1;
  return s;
}

}  // namespace

TEST_SUITE("patch-sampler") {

TEST_CASE("lesion and background counts") {
  auto s = make_subject({20, 20, 20}, 1, 30);
  SamplerConfig cfg{8, 0.6, 10, 7};
  auto patches = sample_patches(s.mcv, s.mask, cfg, "s0");
  REQUIRE(patches.size() == 10);
  int lesion = 0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& c = patches[i].center;
    const bool pos = s.mask.at(c[0], c[1], c[2]) != 0;
    lesion += pos;
    CHECK(pos == (i < 6));
    CHECK(patches[i].source_id == "s0");
  }
  CHECK(lesion == 6);
  CHECK(SamplerConfig{8, 0.25, 2, 0}.lesion_count() == 1);
  CHECK(SamplerConfig{8, 0.6, 7, 0}.lesion_count() == 4);
}

TEST_CASE("count zero yields nothing") {
  auto s = make_subject({10, 10, 10}, 2, 5);
  CHECK(sample_patches(s.mcv, s.mask, {8, 0.6, 0, 1}).empty());
}

TEST_CASE("windows are clamped inside the volume") {
  Dims d{16, 16, 16};
  MultiChannelVolume mcv(1, d);
  LabelVolume mask(d);
  mask.at(1, 1, 1) = 1;
  auto one = sample_patches(mcv, mask, {8, 1.0, 3, 3});
  for (const auto& p : one) {
    CHECK(p.center == Dims{1, 1, 1});
    CHECK(p.start == Dims{0, 0, 0});
  }
  auto s = make_subject({16, 18, 20}, 3, 40);
  auto many = sample_patches(s.mcv, s.mask, {8, 0.5, 200, 5});
  for (const auto& p : many)
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(p.start[a] >= 0);
      CHECK(p.start[a] <= s.mcv.dims[a] - 8);
      CHECK(p.center[a] >= p.start[a]);
      CHECK(p.center[a] < p.start[a] + 8);
    }
}

TEST_CASE("patch contents match the source volume") {
  auto s = make_subject({12, 13, 14}, 4, 20);
  auto patches = sample_patches(s.mcv, s.mask, {6, 0.5, 8, 11});
  const Index n = voxel_count(s.mcv.dims);
  for (const auto& p : patches)
    for (Index c = 0; c < 2; ++c)
      for (Index z = 0; z < 6; ++z)
        for (Index y = 0; y < 6; ++y)
          for (Index x = 0; x < 6; ++x) {
            const Index src = flat_index(s.mcv.dims, p.start[0] + z, p.start[1] + y, p.start[2] + x);
            CHECK(p.data[static_cast<std::size_t>(c * 216 + (z * 6 + y) * 6 + x)] ==
                  s.mcv.data[static_cast<std::size_t>(c * n + src)]);
            if (c == 0) CHECK(p.label[static_cast<std::size_t>((z * 6 + y) * 6 + x)] == s.mask.data[static_cast<std::size_t>(src)]);
          }
}

TEST_CASE("sampling is reproducible") {
  auto s = make_subject({14, 14, 14}, 5, 25);
  SamplerConfig cfg{8, 0.6, 12, 21};
  auto a = sample_patches(s.mcv, s.mask, cfg);
  auto b = sample_patches(s.mcv, s.mask, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].center == b[i].center);
    CHECK(a[i].data == b[i].data);
  }
  cfg.seed = 22;
  auto c = sample_patches(s.mcv, s.mask, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a[i].center != c[i].center;
  CHECK(differs);
}

TEST_CASE("empty mask falls back to background with a warning") {
  set_warnings_to_stderr(false);
  take_warnings();
  auto s = make_subject({10, 10, 10}, 6, 0);
  auto patches = sample_patches(s.mcv, s.mask, {8, 0.6, 5, 1}, "blank");
  CHECK(patches.size() == 5);
  auto w = take_warnings();
  REQUIRE(w.size() == 1);
  CHECK(w[0].code == "empty_mask");
  set_warnings_to_stderr(true);
}

TEST_CASE("sampler errors") {
  auto s = make_subject({6, 10, 10}, 7, 3);
  CHECK_THROWS_AS(sample_patches(s.mcv, s.mask, {8, 0.6, 5, 1}), ShapeError);
  CHECK_THROWS_AS(sample_patches(s.mcv, s.mask, {4, 1.5, 5, 1}), ConfigError);
}

TEST_CASE("tile plan arithmetic") {
  auto a = tile_plan({160, 160, 160}, 80);
  CHECK(a.windows.size() == 8);
  auto b = tile_plan({100, 80, 80}, 80);
  CHECK(b.padded == Dims{160, 80, 80});
  CHECK(b.windows.size() == 2);
}

TEST_CASE("tile plan covers every voxel exactly once") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Dims d{1 + static_cast<Index>(rng.below(20)), 1 + static_cast<Index>(rng.below(20)),
           1 + static_cast<Index>(rng.below(20))};
    const Index p = 1 + static_cast<Index>(rng.below(9));
    auto plan = tile_plan(d, p);
    std::vector<int> cover(static_cast<std::size_t>(voxel_count(plan.padded)), 0);
    for (const auto& w : plan.windows)
      for (Index z = 0; z < p; ++z)
        for (Index y = 0; y < p; ++y)
          for (Index x = 0; x < p; ++x) ++cover[static_cast<std::size_t>(flat_index(plan.padded, w[0] + z, w[1] + y, w[2] + x))];
    for (int c : cover) CHECK(c == 1);
  }
}

TEST_CASE("patch archive round trip") {
  auto dir = std::filesystem::temp_directory_path() / "voxseg_patches";
  std::filesystem::remove_all(dir);
  auto s = make_subject({12, 12, 12}, 9, 10);
  auto patches = sample_patches(s.mcv, s.mask, {6, 0.5, 4, 2}, "sub-1");
  write_patch_archive(patches, dir / "train");
  CHECK(std::filesystem::file_size(dir / "train.raw") == 4 * (2 * 216 * 4 + 216));
  auto back = read_patch_archive(dir / "train");
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].data == patches[i].data);
    CHECK(back[i].label == patches[i].label);
    CHECK(back[i].center == patches[i].center);
    CHECK(back[i].source_id == "sub-1");
  }
  std::filesystem::resize_file(dir / "train.raw", 100);
  CHECK_THROWS_AS(read_patch_archive(dir / "train"), CorruptContainer);
}

}  // TEST_SUITE
