#include "ragtrack/tracker.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ragtrack {

RunSummary summarize(const std::vector<FrameRecord>& records, double pr_threshold,
                     double npr_threshold) {
  if (records.empty()) throw std::invalid_argument("cannot summarize an empty run");
  std::vector<PixelBox> pred, gt, gt_alt;
  std::vector<double> errors, ious;
  bool has_alt = true;
  for (const FrameRecord& r : records) {
    pred.push_back(r.pred);
    gt.push_back(r.gt);
    errors.push_back(r.center_error);
    ious.push_back(r.iou);
    if (r.gt_alt.has_value()) {
      gt_alt.push_back(*r.gt_alt);
    } else {
      has_alt = false;
    }
  }
  RunSummary s;
  s.pr = precision_rate(errors, pr_threshold);
  s.sr = success_rate(ious);
  s.npr = norm_precision_rate(pred, gt, npr_threshold);
  std::vector<std::vector<PixelBox>> streams{gt};
  if (has_alt && !gt_alt.empty()) streams.push_back(gt_alt);
  auto [mpr, msr] = max_metrics(pred, streams, pr_threshold);
  s.mpr = mpr;
  s.msr = msr;
  return s;
}

namespace {

nlohmann::json box_to_json(const PixelBox& b) {
  return nlohmann::json::array({b.x, b.y, b.w, b.h});
}

PixelBox box_from_json(const nlohmann::json& j) {
  return PixelBox{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
                  j.at(3).get<double>()};
}

}  // namespace

std::string runlog_to_jsonl(const RunLog& log) {
  std::ostringstream os;
  for (const FrameRecord& r : log.records) {
    nlohmann::json j = {
        {"frame", r.frame},
        {"pred", box_to_json(r.pred)},
        {"gt", box_to_json(r.gt)},
        {"iou", r.iou},
        {"center_error", r.center_error},
        {"kb_size", r.kb_size},
        {"tokens_kept", r.tokens_kept},
        {"description_used", r.description_used},
        {"updated", r.updated},
    };
    if (r.gt_alt.has_value()) j["gt_alt"] = box_to_json(*r.gt_alt);
    os << j.dump() << "\n";
  }
  nlohmann::json s = {{"summary",
                       {{"PR", log.summary.pr},
                        {"SR", log.summary.sr},
                        {"NPR", log.summary.npr},
                        {"MPR", log.summary.mpr},
                        {"MSR", log.summary.msr}}}};
  os << s.dump() << "\n";
  return os.str();
}

RunLog runlog_from_jsonl(const std::string& text) {
  RunLog log;
  std::istringstream is(text);
  std::string line;
  bool saw_summary = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("summary")) {
      const auto& s = j["summary"];
      log.summary.pr = s.at("PR").get<double>();
      log.summary.sr = s.at("SR").get<double>();
      log.summary.npr = s.at("NPR").get<double>();
      log.summary.mpr = s.at("MPR").get<double>();
      log.summary.msr = s.at("MSR").get<double>();
      saw_summary = true;
      continue;
    }
    FrameRecord r;
    r.frame = j.at("frame").get<int>();
    r.pred = box_from_json(j.at("pred"));
    r.gt = box_from_json(j.at("gt"));
    if (j.contains("gt_alt")) r.gt_alt = box_from_json(j.at("gt_alt"));
    r.iou = j.at("iou").get<double>();
    r.center_error = j.at("center_error").get<double>();
    r.kb_size = j.at("kb_size").get<int>();
    r.tokens_kept = j.at("tokens_kept").get<int>();
    r.description_used = j.at("description_used").get<std::string>();
    r.updated = j.at("updated").get<bool>();
    log.records.push_back(r);
  }
  if (log.records.empty()) throw std::runtime_error("run log holds no frame records");
  if (!saw_summary) log.summary = summarize(log.records);
  return log;
}

void save_runlog(const std::string& path, const RunLog& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write run log: " + path);
  os << runlog_to_jsonl(log);
}

RunLog load_runlog(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read run log: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return runlog_from_jsonl(buf.str());
}

WindowPx context_window(const PixelBox& box, int frame_h, int frame_w) {
  double side = 2.0 * std::sqrt(std::max(box.w, 1.0) * std::max(box.h, 1.0));
  side = std::max(side, 4.0);
  return clamp_window(box.cx(), box.cy(), side, frame_h, frame_w);
}

namespace {

// Decoded grid-space box -> frame pixels. The first grid axis runs down the
// crop (rows), the second across it.
PixelBox to_frame_box(const BBox& b, const WindowPx& win, const EncoderConfig& e) {
  const double crop_scale = win.side / e.search_edge;
  const double cy = win.y + b.x * e.patch * crop_scale;
  const double cx = win.x + b.y * e.patch * crop_scale;
  const double w = b.w * win.side;
  const double h = b.h * win.side;
  return PixelBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

}  // namespace

RunLog run_tracker(const SequenceRecord& seq, RagTrackModel& model,
                   DescriptionProvider& provider, int max_frames) {
  const int total = static_cast<int>(seq.rgb.size());
  if (total == 0) throw std::invalid_argument("empty sequence");
  if (seq.gt.size() != seq.rgb.size() || seq.tir.size() != seq.rgb.size()) {
    throw std::invalid_argument("sequence stream lengths differ");
  }
  const int frames = max_frames < 0 ? total : std::min(max_frames, total);
  const TrackerConfig& cfg = model.config();
  const EncoderConfig& e = cfg.enc;
  const int frame_h = seq.rgb[0].h, frame_w = seq.rgb[0].w;

  KnowledgeBase kb_rgb(cfg.kb_size, cfg.kb_lambda);
  KnowledgeBase kb_tir(cfg.kb_size, cfg.kb_lambda);
  CrmState state;
  RunLog log;

  // Frame 0: initialization contract. The given box is the prediction; crops
  // and the first description seed the references.
  PixelBox prev = seq.gt[0];
  WindowPx tmpl_win = context_window(prev, frame_h, frame_w);
  Image tmpl_rgb = crop_resize(seq.rgb[0], tmpl_win, e.template_edge);
  Image tmpl_tir = crop_resize(seq.tir[0], tmpl_win, e.template_edge);

  std::string description;
  {
    if (auto* scripted = dynamic_cast<ScriptedProvider*>(&provider)) scripted->set_cursor(0);
    DescriptionRequest req{&seq.rgb[0], prev, fill_describe_prompt(prev)};
    if (auto d = provider.describe(req)) {
      description = *d;
      kb_rgb.insert(model.text_feature(description, Modality::kRgb), description, 0);
      kb_tir.insert(model.text_feature(description, Modality::kTir), description, 0);
    }
  }

  FrameRecord first;
  first.frame = 0;
  first.pred = prev;
  first.gt = seq.gt[0];
  if (!seq.gt_alt.empty()) first.gt_alt = seq.gt_alt[0];
  first.iou = iou(first.pred, first.gt);
  first.center_error = center_error(first.pred, first.gt);
  first.kb_size = std::max(kb_rgb.size(), kb_tir.size());
  first.tokens_kept = 0;
  first.description_used = description;
  log.records.push_back(first);

  int last_update = 0;
  for (int t = 1; t < frames; ++t) {
    WindowPx win = context_window(prev, frame_h, frame_w);
    Image search_rgb = crop_resize(seq.rgb[t], win, e.search_edge);
    Image search_tir = crop_resize(seq.tir[t], win, e.search_edge);

    FrameInputs in;
    in.tmpl_rgb = &tmpl_rgb;
    in.tmpl_tir = &tmpl_tir;
    in.search_rgb = &search_rgb;
    in.search_tir = &search_tir;
    in.description = description;
    in.training = false;

    ForwardResult res = model.forward_frame(in, state, kb_rgb, kb_tir);
    state = res.next_state;
    prev = to_frame_box(res.box, win, e);

    FrameRecord rec;
    rec.frame = t;
    rec.pred = prev;
    rec.gt = seq.gt[t];
    if (!seq.gt_alt.empty()) rec.gt_alt = seq.gt_alt[t];
    rec.iou = iou(rec.pred, rec.gt);
    rec.center_error = center_error(rec.pred, rec.gt);
    rec.tokens_kept = res.tokens_kept;
    rec.description_used = description;

    const double score = peak_score(res.maps);
    if (score >= cfg.update_threshold && t - last_update >= cfg.update_interval) {
      WindowPx uwin = context_window(prev, frame_h, frame_w);
      tmpl_rgb = crop_resize(seq.rgb[t], uwin, e.template_edge);
      tmpl_tir = crop_resize(seq.tir[t], uwin, e.template_edge);
      if (auto* scripted = dynamic_cast<ScriptedProvider*>(&provider)) scripted->set_cursor(t);
      DescriptionRequest req{&seq.rgb[t], prev, fill_describe_prompt(prev)};
      if (auto d = provider.describe(req)) {
        description = *d;
        kb_rgb.insert(model.text_feature(description, Modality::kRgb), description, t);
        kb_tir.insert(model.text_feature(description, Modality::kTir), description, t);
      }
      last_update = t;
      rec.updated = true;
    }
    rec.kb_size = std::max(kb_rgb.size(), kb_tir.size());
    log.records.push_back(rec);
  }

  log.summary = summarize(log.records);
  return log;
}

}  // namespace ragtrack
