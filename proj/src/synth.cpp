#include "ragtrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace ragtrack {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb color_for(const std::string& name) {
  if (name == "red") return {0.85, 0.15, 0.10};
  if (name == "green") return {0.15, 0.75, 0.20};
  if (name == "blue") return {0.15, 0.30, 0.90};
  if (name == "yellow") return {0.90, 0.85, 0.15};
  if (name == "white") return {0.95, 0.95, 0.95};
  throw std::invalid_argument("gen_sequence: unknown color '" + name + "'");
}

std::string direction_name(double vx, double vy) {
  if (std::fabs(vx) >= std::fabs(vy)) return vx >= 0.0 ? "right" : "left";
  return vy >= 0.0 ? "down" : "up";
}

}  // namespace

std::string describe_target(const SequenceSpec& spec, double vx, double vy) {
  if (spec.speed <= 0.0) return "a " + spec.color_name + " square standing still";
  return "a " + spec.color_name + " square moving " + direction_name(vx, vy);
}

SequenceRecord gen_sequence(const SequenceSpec& spec) {
  if (spec.length < 1) throw std::invalid_argument("gen_sequence: length must be at least 1");
  if (spec.frame_edge < 16) throw std::invalid_argument("gen_sequence: frame_edge too small");
  if (spec.target_size < 2.0 || spec.target_size > spec.frame_edge / 2.0)
    throw std::invalid_argument("gen_sequence: target_size out of range");
  const Rgb col = color_for(spec.color_name);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const int E = spec.frame_edge;
  const double ts = spec.target_size;

  // Static background texture, shared by both streams' geometry.
  Image bg_rgb(E, E), bg_tir(E, E);
  for (int y = 0; y < E; ++y)
    for (int x = 0; x < E; ++x) {
      const double n = 0.18 + 0.10 * uni(rng);
      bg_rgb.at(0, y, x) = n;
      bg_rgb.at(1, y, x) = n * (0.9 + 0.2 * uni(rng));
      bg_rgb.at(2, y, x) = n * (0.9 + 0.2 * uni(rng));
      const double t = 0.12 + 0.08 * uni(rng);
      bg_tir.at(0, y, x) = t;
      bg_tir.at(1, y, x) = t;
      bg_tir.at(2, y, x) = t;
    }

  // Distractors: RGB lookalikes that stay cold in the heat stream.
  struct Distractor {
    double x, y, vx, vy;
  };
  std::vector<Distractor> distractors;
  for (int i = 0; i < spec.num_distractors; ++i) {
    Distractor d;
    d.x = ts + uni(rng) * (E - 3.0 * ts);
    d.y = ts + uni(rng) * (E - 3.0 * ts);
    const double ang = uni(rng) * 6.28318530717958648;
    d.vx = 0.7 * std::cos(ang);
    d.vy = 0.7 * std::sin(ang);
    distractors.push_back(d);
  }

  double norm = std::hypot(spec.dir_x, spec.dir_y);
  if (norm == 0.0) norm = 1.0;
  double vx = spec.speed * spec.dir_x / norm;
  double vy = spec.speed * spec.dir_y / norm;
  const double margin = 2.0;
  double px = std::clamp(E * 0.25, margin, E - margin - ts);
  double py = std::clamp(E * 0.5, margin, E - margin - ts);

  const double occ_x = E * 0.6;
  const double occ_w = ts * 0.8;

  SequenceRecord rec;
  rec.spec = spec;
  for (int t = 0; t < spec.length; ++t) {
    const bool night = spec.night_start >= 0 && t >= spec.night_start && t < spec.night_start + spec.night_len;

    Image rgb = bg_rgb;
    Image tir = bg_tir;
    if (night) {
      for (double& v : rgb.v) v *= 0.55;
    }

    for (auto& d : distractors) {
      fill_rect(rgb, d.x, d.y, ts, ts, col.r * 0.85, col.g * 1.1, col.b * 1.1);
      fill_rect(tir, d.x, d.y, ts, ts, 0.22, 0.22, 0.22);
      d.x += d.vx;
      d.y += d.vy;
      if (d.x < margin || d.x > E - margin - ts) d.vx = -d.vx;
      if (d.y < margin || d.y > E - margin - ts) d.vy = -d.vy;
      d.x = std::clamp(d.x, margin, E - margin - ts);
      d.y = std::clamp(d.y, margin, E - margin - ts);
    }

    if (night) {
      // Low light: the target sinks toward the background in RGB only.
      const double mix = 0.75;
      const double bgl = 0.10;
      fill_rect(rgb, px, py, ts, ts, col.r * (1 - mix) + bgl * mix, col.g * (1 - mix) + bgl * mix,
                col.b * (1 - mix) + bgl * mix);
    } else {
      fill_rect(rgb, px, py, ts, ts, col.r, col.g, col.b);
    }
    fill_rect(tir, px, py, ts, ts, 0.92, 0.92, 0.92);  // hot regardless of lighting

    if (spec.occluder) {
      fill_rect(rgb, occ_x, 0, occ_w, E, 0.45, 0.45, 0.45);
      fill_rect(tir, occ_x, 0, occ_w, E, 0.40, 0.40, 0.40);
    }

    // Heat stream degradation: blur plus a little sensor noise.
    tir = box_blur3(tir);
    for (double& v : tir.v) v = std::clamp(v + 0.015 * (uni(rng) - 0.5), 0.0, 1.0);
    for (double& v : rgb.v) v = std::clamp(v + 0.010 * (uni(rng) - 0.5), 0.0, 1.0);

    rec.rgb.push_back(std::move(rgb));
    rec.tir.push_back(std::move(tir));
    rec.gt.push_back({px, py, ts, ts});
    if (spec.misaligned_alt) {
      PixelBox alt{px + spec.alt_offset, py + spec.alt_offset * 0.5, ts, ts};
      alt.x = std::clamp(alt.x, 0.0, E - ts);
      alt.y = std::clamp(alt.y, 0.0, E - ts);
      rec.gt_alt.push_back(alt);
    }
    rec.descriptions.push_back(describe_target(spec, vx, vy));

    px += vx;
    py += vy;
    if (px < margin || px > E - margin - ts) vx = -vx;
    if (py < margin || py > E - margin - ts) vy = -vy;
    px = std::clamp(px, margin, E - margin - ts);
    py = std::clamp(py, margin, E - margin - ts);
  }
  return rec;
}

namespace {

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", i);
  return buf;
}

nlohmann::json box_to_json(const PixelBox& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); }

PixelBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("dataset: bad box entry");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void save_sequence(const std::string& dir, const SequenceRecord& rec) {
  fs::create_directories(fs::path(dir) / "rgb");
  fs::create_directories(fs::path(dir) / "tir");
  for (std::size_t i = 0; i < rec.rgb.size(); ++i) {
    write_png((fs::path(dir) / "rgb" / frame_name(static_cast<int>(i))).string(), rec.rgb[i]);
    write_png((fs::path(dir) / "tir" / frame_name(static_cast<int>(i))).string(), rec.tir[i]);
  }
  nlohmann::json gt;
  gt["seed"] = rec.spec.seed;
  gt["boxes"] = nlohmann::json::array();
  for (const auto& b : rec.gt) gt["boxes"].push_back(box_to_json(b));
  if (!rec.gt_alt.empty()) {
    gt["alt_boxes"] = nlohmann::json::array();
    for (const auto& b : rec.gt_alt) gt["alt_boxes"].push_back(box_to_json(b));
  }
  std::ofstream(fs::path(dir) / "gt.json") << gt.dump(2) << '\n';
  nlohmann::json desc;
  desc["descriptions"] = rec.descriptions;
  std::ofstream(fs::path(dir) / "desc.json") << desc.dump(2) << '\n';
}

SequenceRecord load_sequence(const std::string& dir) {
  std::ifstream gtf(fs::path(dir) / "gt.json");
  if (!gtf) throw std::runtime_error("load_sequence: missing gt.json in " + dir);
  nlohmann::json gt = nlohmann::json::parse(gtf);
  std::ifstream descf(fs::path(dir) / "desc.json");
  if (!descf) throw std::runtime_error("load_sequence: missing desc.json in " + dir);
  nlohmann::json desc = nlohmann::json::parse(descf);

  SequenceRecord rec;
  if (gt.contains("seed")) rec.spec.seed = gt["seed"].get<std::uint64_t>();
  for (const auto& b : gt.at("boxes")) rec.gt.push_back(box_from_json(b));
  if (gt.contains("alt_boxes"))
    for (const auto& b : gt["alt_boxes"]) rec.gt_alt.push_back(box_from_json(b));
  rec.descriptions = desc.at("descriptions").get<std::vector<std::string>>();
  if (rec.descriptions.size() != rec.gt.size())
    throw std::runtime_error("load_sequence: description/box count mismatch in " + dir);

  for (std::size_t i = 0; i < rec.gt.size(); ++i) {
    rec.rgb.push_back(read_png((fs::path(dir) / "rgb" / frame_name(static_cast<int>(i))).string()));
    rec.tir.push_back(read_png((fs::path(dir) / "tir" / frame_name(static_cast<int>(i))).string()));
  }
  if (!rec.rgb.empty()) {
    rec.spec.length = static_cast<int>(rec.rgb.size());
    rec.spec.frame_edge = rec.rgb.front().w;
    rec.spec.target_size = rec.gt.front().w;
  }
  return rec;
}

std::vector<std::string> find_sequences(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "gt.json")) return {dir};
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) throw std::runtime_error("find_sequences: " + dir + " is not a directory");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "gt.json")) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("find_sequences: no sequences under " + dir);
  return out;
}

}  // namespace ragtrack
