// Sequence generator tests: determinism, geometry bookkeeping, the low-light
// complementarity between the two streams, and the on-disk round trip.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "ragtrack/synth.hpp"

using namespace ragtrack;
namespace fs = std::filesystem;

namespace {

bool images_equal(const Image& a, const Image& b) {
  if (a.w != b.w || a.h != b.h) return false;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    if (a.v[i] != b.v[i]) return false;
  return true;
}

// Mean over channels of the box interior (shrunk to dodge blur bleed) minus
// the mean of everything outside the box.
double contrast(const Image& img, const PixelBox& box) {
  double tin = 0.0, tout = 0.0;
  std::int64_t nin = 0, nout = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const bool inside = x >= box.x + 3 && x < box.x + box.w - 3 && y >= box.y + 3 &&
                          y < box.y + box.h - 3;
      double v = 0.0;
      for (int c = 0; c < 3; ++c) v += img.at(c, y, x);
      v /= 3.0;
      if (inside) {
        tin += v;
        ++nin;
      } else if (x < box.x - 2 || x >= box.x + box.w + 2 || y < box.y - 2 ||
                 y >= box.y + box.h + 2) {
        tout += v;
        ++nout;
      }
    }
  return std::abs(tin / nin - tout / nout);
}

}  // namespace

TEST_CASE("generation is deterministic per spec") {
  SequenceSpec spec;
  spec.length = 6;
  spec.frame_edge = 64;
  spec.seed = 11;
  SequenceRecord a = gen_sequence(spec);
  SequenceRecord b = gen_sequence(spec);
  REQUIRE(a.rgb.size() == 6);
  REQUIRE(a.tir.size() == 6);
  REQUIRE(a.gt.size() == 6);
  REQUIRE(a.descriptions.size() == 6);
  for (int t = 0; t < 6; ++t) {
    CHECK(images_equal(a.rgb[t], b.rgb[t]));
    CHECK(images_equal(a.tir[t], b.tir[t]));
    CHECK(a.gt[t].x == b.gt[t].x);
    CHECK(a.gt[t].y == b.gt[t].y);
    CHECK(a.descriptions[t] == b.descriptions[t]);
  }

  SequenceSpec other = spec;
  other.seed = 12;
  SequenceRecord c = gen_sequence(other);
  bool any_diff = false;
  for (int t = 0; t < 6 && !any_diff; ++t) any_diff = !images_equal(a.rgb[t], c.rgb[t]);
  CHECK(any_diff);
}

TEST_CASE("target geometry stays inside the frame") {
  SequenceSpec spec;
  spec.length = 60;
  spec.frame_edge = 64;
  spec.target_size = 12.0;
  spec.speed = 3.0;
  spec.dir_x = 1.0;
  spec.dir_y = 0.7;
  spec.misaligned_alt = true;
  SequenceRecord rec = gen_sequence(spec);
  REQUIRE(rec.gt_alt.size() == rec.gt.size());
  for (std::size_t t = 0; t < rec.gt.size(); ++t) {
    const PixelBox& g = rec.gt[t];
    CHECK(g.w == 12.0);
    CHECK(g.h == 12.0);
    CHECK(g.x >= 0.0);
    CHECK(g.y >= 0.0);
    CHECK(g.x + g.w <= 64.0);
    CHECK(g.y + g.h <= 64.0);
    CHECK(rec.gt_alt[t].x >= 0.0);
    CHECK(rec.gt_alt[t].x + rec.gt_alt[t].w <= 64.0);
  }
  // the target must actually move under a nonzero speed
  CHECK((rec.gt[0].x != rec.gt[5].x || rec.gt[0].y != rec.gt[5].y));

  SequenceSpec still = spec;
  still.speed = 0.0;
  still.misaligned_alt = false;
  SequenceRecord srec = gen_sequence(still);
  CHECK(srec.gt_alt.empty());
  for (std::size_t t = 1; t < srec.gt.size(); ++t) {
    CHECK(srec.gt[t].x == srec.gt[0].x);
    CHECK(srec.gt[t].y == srec.gt[0].y);
  }
  CHECK(srec.descriptions[0] == "a red square standing still");
}

TEST_CASE("descriptions name color and heading") {
  SequenceSpec spec;
  CHECK(describe_target(spec, 2.0, 0.0) == "a red square moving right");
  CHECK(describe_target(spec, -2.0, 0.5) == "a red square moving left");
  CHECK(describe_target(spec, 0.3, 1.0) == "a red square moving down");
  CHECK(describe_target(spec, 0.0, -1.0) == "a red square moving up");
  spec.color_name = "blue";
  CHECK(describe_target(spec, 1.0, 0.0) == "a blue square moving right");
}

TEST_CASE("invalid specs are rejected") {
  SequenceSpec spec;
  spec.length = 0;
  CHECK_THROWS(gen_sequence(spec));
  spec = SequenceSpec{};
  spec.frame_edge = 8;
  CHECK_THROWS(gen_sequence(spec));
  spec = SequenceSpec{};
  spec.target_size = 100.0;  // over half the frame
  CHECK_THROWS(gen_sequence(spec));
  spec = SequenceSpec{};
  spec.color_name = "plaid";
  CHECK_THROWS(gen_sequence(spec));
}

TEST_CASE("low light dims the color stream but not the heat stream") {
  SequenceSpec spec;
  spec.length = 12;
  spec.frame_edge = 64;
  spec.night_start = 6;
  spec.night_len = 6;
  spec.seed = 3;
  SequenceRecord rec = gen_sequence(spec);

  const double rgb_day = contrast(rec.rgb[2], rec.gt[2]);
  const double rgb_night = contrast(rec.rgb[9], rec.gt[9]);
  const double tir_night = contrast(rec.tir[9], rec.gt[9]);
  CHECK(rgb_night < 0.5 * rgb_day);  // the target sinks toward the background
  CHECK(rgb_night < tir_night);      // the heat stream keeps its contrast
  CHECK(tir_night > 0.3);
}

TEST_CASE("disk round trip preserves the record") {
  SequenceSpec spec;
  spec.length = 4;
  spec.frame_edge = 32;
  spec.target_size = 8.0;
  spec.seed = 21;
  spec.misaligned_alt = true;
  SequenceRecord rec = gen_sequence(spec);

  const fs::path dir = fs::temp_directory_path() / "synth_roundtrip_test";
  fs::remove_all(dir);
  save_sequence(dir.string(), rec);
  SequenceRecord back = load_sequence(dir.string());

  REQUIRE(back.gt.size() == 4);
  REQUIRE(back.gt_alt.size() == 4);
  REQUIRE(back.descriptions.size() == 4);
  CHECK(back.spec.seed == 21);
  for (int t = 0; t < 4; ++t) {
    CHECK(back.gt[t].x == rec.gt[t].x);  // JSON doubles round-trip exactly
    CHECK(back.gt[t].y == rec.gt[t].y);
    CHECK(back.gt[t].w == rec.gt[t].w);
    CHECK(back.gt_alt[t].x == rec.gt_alt[t].x);
    CHECK(back.descriptions[t] == rec.descriptions[t]);
    REQUIRE(back.rgb[t].w == 32);
    REQUIRE(back.rgb[t].h == 32);
    // pixels pass through 8-bit quantization once
    double worst = 0.0;
    for (std::size_t i = 0; i < rec.rgb[t].v.size(); ++i)
      worst = std::max(worst, std::abs(back.rgb[t].v[i] - rec.rgb[t].v[i]));
    for (std::size_t i = 0; i < rec.tir[t].v.size(); ++i)
      worst = std::max(worst, std::abs(back.tir[t].v[i] - rec.tir[t].v[i]));
    CHECK(worst <= 0.5 / 255.0 + 1e-9);
  }

  // saving the loaded record reproduces identical files (quantization is stable)
  const fs::path dir2 = fs::temp_directory_path() / "synth_roundtrip_test2";
  fs::remove_all(dir2);
  save_sequence(dir2.string(), back);
  SequenceRecord again = load_sequence(dir2.string());
  for (int t = 0; t < 4; ++t) {
    CHECK(images_equal(again.rgb[t], back.rgb[t]));
    CHECK(images_equal(again.tir[t], back.tir[t]));
  }

  CHECK(find_sequences(dir.string()) == std::vector<std::string>{dir.string()});
  const fs::path parent = fs::temp_directory_path() / "synth_multi_test";
  fs::remove_all(parent);
  save_sequence((parent / "seq0001").string(), rec);
  save_sequence((parent / "seq0000").string(), rec);
  auto found = find_sequences(parent.string());
  REQUIRE(found.size() == 2);
  CHECK(found[0] == (parent / "seq0000").string());
  CHECK(found[1] == (parent / "seq0001").string());

  CHECK_THROWS(load_sequence((fs::temp_directory_path() / "no_such_seq_dir").string()));
  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove_all(parent);
}
