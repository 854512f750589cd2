#include "ragtrack/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "ragtrack/tracker.hpp"

namespace ragtrack {

AdamW::AdamW(ParamStore& store, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : store_(store), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& e : store_.entries()) {
    const std::size_t n = e.trainable ? static_cast<std::size_t>(e.tensor.numel()) : 0;
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < store_.entries().size(); ++i) {
    const auto& e = store_.entries()[i];
    if (!e.trainable) continue;
    const double* g = e.tensor.grad();   // const read: null when never touched
    if (g == nullptr) continue;
    Tensor p = e.tensor;
    double* theta = p.data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const std::int64_t n = p.numel();
    for (std::int64_t k = 0; k < n; ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * theta[k]);
    }
  }
}

void AdamW::zero_grad() {
  for (const auto& e : store_.entries()) {
    Tensor p = e.tensor;
    p.zero_grad();
  }
}

namespace {

struct SearchSample {
  Image rgb, tir;
  BBox gt;  // grid-space target for the loss
  std::string description;
};

struct Sample {
  Image tmpl_rgb, tmpl_tir;
  SearchSample a;
  SearchSample b;          // next frame of the same sequence, when it exists
  bool has_b = false;
  std::vector<std::string> extra_descriptions;
};

SearchSample crop_search(const SequenceRecord& seq, int t, const TrainOptions& opts,
                         const EncoderConfig& e, bool grayscale, std::mt19937_64& rng) {
  const int frame_h = seq.rgb[0].h, frame_w = seq.rgb[0].w;
  const PixelBox& gt = seq.gt[t];
  double jx = 0.0, jy = 0.0;
  if (opts.augment && opts.translate_px > 0.0) {
    std::uniform_real_distribution<double> jitter(-opts.translate_px, opts.translate_px);
    jx = jitter(rng);
    jy = jitter(rng);
  }
  double side = 2.0 * std::sqrt(std::max(gt.w, 1.0) * std::max(gt.h, 1.0));
  side = std::max(side, 4.0);
  if (opts.augment && opts.scale_jitter > 1.0) {
    // Without this the target fills the same fraction of every training crop
    // and the size head degenerates to a constant, which compounds through the
    // window-sizing feedback at track time.
    std::uniform_real_distribution<double> logf(-std::log(opts.scale_jitter),
                                                std::log(opts.scale_jitter));
    side *= std::exp(logf(rng));
  }
  WindowPx win = clamp_window(gt.cx() + jx, gt.cy() + jy, side, frame_h, frame_w);

  SearchSample s;
  s.rgb = crop_resize(seq.rgb[t], win, e.search_edge);
  s.tir = crop_resize(seq.tir[t], win, e.search_edge);
  if (grayscale) s.rgb = to_grayscale(s.rgb);

  // Target in grid units of the resized crop. First grid axis runs down the
  // crop, so it takes the vertical center.
  const double res_scale = static_cast<double>(e.search_edge) / win.side;
  s.gt.x = (gt.cy() - win.y) * res_scale / e.patch;
  s.gt.y = (gt.cx() - win.x) * res_scale / e.patch;
  s.gt.w = gt.w / win.side;
  s.gt.h = gt.h / win.side;
  s.description = seq.descriptions.empty() ? std::string() : seq.descriptions[t];
  return s;
}

Sample draw_sample(const std::vector<SequenceRecord>& dataset, const TrainOptions& opts,
                   const EncoderConfig& e, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick_seq(0, dataset.size() - 1);
  const SequenceRecord& seq = dataset[pick_seq(rng)];
  const int len = static_cast<int>(seq.rgb.size());
  std::uniform_int_distribution<int> pick_frame(0, len - 1);
  const int tz = pick_frame(rng);                       // template frame
  const int tx = std::min(pick_frame(rng), len - 2);    // first search frame
  const int frame_h = seq.rgb[0].h, frame_w = seq.rgb[0].w;

  Sample s;

  WindowPx zwin = context_window(seq.gt[tz], frame_h, frame_w);
  s.tmpl_rgb = crop_resize(seq.rgb[tz], zwin, e.template_edge);
  s.tmpl_tir = crop_resize(seq.tir[tz], zwin, e.template_edge);

  bool grayscale = false;
  if (opts.augment) {
    std::uniform_real_distribution<double> angle(-opts.rotation_degrees, opts.rotation_degrees);
    const double deg = angle(rng);
    s.tmpl_rgb = rotate_nn(s.tmpl_rgb, deg);
    s.tmpl_tir = rotate_nn(s.tmpl_tir, deg);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    grayscale = coin(rng) < opts.grayscale_prob;
    if (grayscale) s.tmpl_rgb = to_grayscale(s.tmpl_rgb);
  }

  // Consecutive frames so the carried reasoning state trains on the hand-off
  // it sees in the tracking loop, not only on its fresh initial value.
  s.a = crop_search(seq, std::max(tx, 0), opts, e, grayscale, rng);
  if (len >= 2) {
    s.b = crop_search(seq, std::max(tx, 0) + 1, opts, e, grayscale, rng);
    s.has_b = true;
  }

  if (!seq.descriptions.empty()) {
    std::uniform_int_distribution<int> pick_desc(0, len - 1);
    s.extra_descriptions.push_back(seq.descriptions[pick_desc(rng)]);
    s.extra_descriptions.push_back(seq.descriptions[pick_desc(rng)]);
  }
  return s;
}

}  // namespace

std::vector<StepRecord> train_model(RagTrackModel& model,
                                    const std::vector<SequenceRecord>& dataset,
                                    const TrainOptions& opts) {
  if (dataset.empty()) throw std::invalid_argument("training needs at least one sequence");
  const TrackerConfig& cfg = model.config();
  const EncoderConfig& e = cfg.enc;
  std::mt19937_64 rng(opts.seed * 0x2545f4914f6cdd1dULL + 0x9e3779b9u);
  AdamW opt(model.store(), cfg.learning_rate, cfg.weight_decay);

  std::vector<StepRecord> out;
  out.reserve(opts.steps);
  for (int step = 0; step < opts.steps; ++step) {
    Sample s = draw_sample(dataset, opts, e, rng);

    KnowledgeBase kb_rgb(cfg.kb_size, cfg.kb_lambda);
    KnowledgeBase kb_tir(cfg.kb_size, cfg.kb_lambda);
    kb_rgb.insert(model.text_feature(s.a.description, Modality::kRgb), s.a.description);
    kb_tir.insert(model.text_feature(s.a.description, Modality::kTir), s.a.description);
    for (const std::string& d : s.extra_descriptions) {
      kb_rgb.insert(model.text_feature(d, Modality::kRgb), d);
      kb_tir.insert(model.text_feature(d, Modality::kTir), d);
    }

    const int edge = e.grid_edge();
    Tape tape;
    auto frame_loss = [&](const SearchSample& fs, CrmState& state) {
      FrameInputs in;
      in.tmpl_rgb = &s.tmpl_rgb;
      in.tmpl_tir = &s.tmpl_tir;
      in.search_rgb = &fs.rgb;
      in.search_tir = &fs.tir;
      in.description = fs.description;
      in.training = true;
      ForwardResult res = model.forward_frame(in, state, kb_rgb, kb_tir, &tape);
      state = res.next_state;
      const int ci = std::clamp(static_cast<int>(std::floor(fs.gt.x)), 0, edge - 1);
      const int cj = std::clamp(static_cast<int>(std::floor(fs.gt.y)), 0, edge - 1);
      BBoxT pred = decode_bbox_at(res.maps, ci, cj, &tape);
      return total_loss(res.maps, pred, fs.gt, cfg.lambda_iou, cfg.lambda_l1, edge, &tape);
    };

    CrmState state;
    LossTerms loss = frame_loss(s.a, state);
    if (s.has_b) {
      LossTerms lb = frame_loss(s.b, state);
      loss.cls = scale(add(loss.cls, lb.cls, &tape), 0.5, &tape);
      loss.iou = scale(add(loss.iou, lb.iou, &tape), 0.5, &tape);
      loss.l1 = scale(add(loss.l1, lb.l1, &tape), 0.5, &tape);
      loss.total = scale(add(loss.total, lb.total, &tape), 0.5, &tape);
    }

    opt.zero_grad();
    tape.backward(loss.total);
    opt.step();

    StepRecord rec;
    rec.step = step;
    rec.total = loss.total.value();
    rec.cls = loss.cls.value();
    rec.iou = loss.iou.value();
    rec.l1 = loss.l1.value();
    out.push_back(rec);
    if (opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == opts.steps)) {
      std::fprintf(stderr, "step %4d  loss %.4f  (cls %.4f  iou %.4f  l1 %.4f)\n", step,
                   rec.total, rec.cls, rec.iou, rec.l1);
    }
  }
  return out;
}

std::string steps_to_jsonl(const std::vector<StepRecord>& steps) {
  std::ostringstream os;
  for (const StepRecord& s : steps) {
    nlohmann::json j = {
        {"step", s.step}, {"total", s.total}, {"cls", s.cls}, {"iou", s.iou}, {"l1", s.l1}};
    os << j.dump() << "\n";
  }
  return os.str();
}

}  // namespace ragtrack
