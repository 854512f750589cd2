// Synthetic paired-stream sequences: a colored square translating over a
// textured background, rendered into an RGB stream and a heat-style stream
// with complementary failure modes (low-light RGB segments, blurred heat).

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ragtrack/image.hpp"
#include "ragtrack/metrics.hpp"

namespace ragtrack {

struct SequenceSpec {
  int length = 40;
  int frame_edge = 128;
  double target_size = 16.0;  // square edge, px
  std::string color_name = "red";
  double speed = 2.0;                   // px per frame
  double dir_x = 1.0, dir_y = 0.0;      // initial motion direction (normalized internally)
  int num_distractors = 2;
  bool occluder = false;
  int night_start = -1;  // first low-light RGB frame, -1 disables
  int night_len = 0;
  bool misaligned_alt = false;  // emit a second annotation stream at a fixed offset
  double alt_offset = 2.0;
  std::uint64_t seed = 0;
};

struct SequenceRecord {
  SequenceSpec spec;
  std::vector<Image> rgb;
  std::vector<Image> tir;
  std::vector<PixelBox> gt;
  std::vector<PixelBox> gt_alt;  // empty unless spec.misaligned_alt
  std::vector<std::string> descriptions;
};

// Deterministic per spec/seed: equal specs produce equal records.
SequenceRecord gen_sequence(const SequenceSpec& spec);

// Per-frame description string from the generator's own attributes.
std::string describe_target(const SequenceSpec& spec, double vx, double vy);

// On-disk layout: <dir>/rgb/000000.png ..., <dir>/tir/..., gt.json, desc.json.
void save_sequence(const std::string& dir, const SequenceRecord& rec);
SequenceRecord load_sequence(const std::string& dir);
// All sequence subdirectories under `dir` (or `dir` itself if it is one).
std::vector<std::string> find_sequences(const std::string& dir);

}  // namespace ragtrack
