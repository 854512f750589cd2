#include "ragtrack/head.hpp"

#include <cmath>
#include <stdexcept>

namespace ragtrack {

Tensor tokens_to_grid(const Tensor& kept_tokens, const Tensor& frozen, const SelectionMeta& meta,
                      int grid_edge, Tape* tape) {
  const int n = grid_edge * grid_edge;
  const int c = kept_tokens.dim(1);
  std::vector<int> kept = meta.kept;
  if (kept.empty() && kept_tokens.dim(0) == n) {
    kept.resize(n);
    for (int i = 0; i < n; ++i) kept[i] = i;
  }
  if (static_cast<int>(kept.size()) != kept_tokens.dim(0)) {
    throw std::invalid_argument("scatter metadata does not match token count");
  }
  if (static_cast<int>(kept.size()) + static_cast<int>(meta.dropped.size()) != n) {
    throw std::invalid_argument("scatter metadata does not cover the grid");
  }
  Tensor holes = meta.any_dropped() ? frozen : Tensor{};
  Tensor dense = scatter_rows(kept_tokens, kept, holes, meta.dropped, n, tape);
  return reshape(transpose2d(dense, tape), {c, grid_edge, grid_edge}, tape);
}

namespace {

Tensor conv_block(const Tensor& x, ConvBlockParams& p, bool training, double momentum, double eps,
                  Tape* tape) {
  Tensor y = conv2d_3x3(x, p.w, p.b, tape);
  y = batch_norm2d(y, p.bn_gain, p.bn_bias, p.bn_mean, p.bn_var, training, momentum, eps, tape);
  return relu(y, tape);
}

}  // namespace

PredictionMaps head_forward(const Tensor& search_rgb, const Tensor& search_tir,
                            const SelectionMeta& meta, HeadParams& params, int grid_edge,
                            bool training, Tape* tape) {
  Tensor grid_rgb = tokens_to_grid(search_rgb, meta.frozen_rgb, meta, grid_edge, tape);
  Tensor grid_tir = tokens_to_grid(search_tir, meta.frozen_tir, meta, grid_edge, tape);
  Tensor x = concat_rows({grid_rgb, grid_tir}, tape);
  x = conv2d_1x1(x, params.compress_w, params.compress_b, tape);
  for (ConvBlockParams& block : params.trunk) {
    x = conv_block(x, block, training, params.bn_momentum, params.bn_eps, tape);
  }
  PredictionMaps maps;
  maps.cls = sigmoid(conv2d_3x3(x, params.cls_w, params.cls_b, tape), tape);
  maps.off = sigmoid(conv2d_3x3(x, params.off_w, params.off_b, tape), tape);
  maps.size = sigmoid(conv2d_3x3(x, params.size_w, params.size_b, tape), tape);
  return maps;
}

std::pair<int, int> argmax_cell(const Tensor& cls) {
  const int e1 = cls.dim(1), e2 = cls.dim(2);
  const double* d = cls.data();
  int best = 0;
  for (int t = 1; t < e1 * e2; ++t) {
    if (d[t] > d[best]) best = t;
  }
  return {best / e2, best % e2};
}

BBox decode_bbox(const PredictionMaps& maps) {
  auto [i, j] = argmax_cell(maps.cls);
  const int e = maps.cls.dim(2);
  const std::int64_t cell = static_cast<std::int64_t>(i) * e + j;
  const std::int64_t plane = static_cast<std::int64_t>(maps.off.dim(1)) * maps.off.dim(2);
  BBox b;
  b.x = i + maps.off.data()[cell];
  b.y = j + maps.off.data()[plane + cell];
  b.w = maps.size.data()[cell];
  b.h = maps.size.data()[plane + cell];
  return b;
}

BBoxT decode_bbox_grad(const PredictionMaps& maps, Tape* tape) {
  auto [i, j] = argmax_cell(maps.cls);
  return decode_bbox_at(maps, i, j, tape);
}

BBoxT decode_bbox_at(const PredictionMaps& maps, int i, int j, Tape* tape) {
  const int e = maps.cls.dim(2);
  const std::int64_t cell = static_cast<std::int64_t>(i) * e + j;
  const std::int64_t plane = static_cast<std::int64_t>(maps.off.dim(1)) * maps.off.dim(2);
  BBoxT b;
  b.x = add(Tensor::scalar(i), pick(maps.off, cell, tape), tape);
  b.y = add(Tensor::scalar(j), pick(maps.off, plane + cell, tape), tape);
  b.w = pick(maps.size, cell, tape);
  b.h = pick(maps.size, plane + cell, tape);
  return b;
}

double peak_score(const PredictionMaps& maps) {
  auto [i, j] = argmax_cell(maps.cls);
  return maps.cls.data()[static_cast<std::int64_t>(i) * maps.cls.dim(2) + j];
}

double heatmap_sigma(const BBox& gt, int grid_edge) {
  const double wg = gt.w * grid_edge;
  const double hg = gt.h * grid_edge;
  return std::max(1.0, std::sqrt(wg * wg + hg * hg) / 6.0);
}

std::vector<double> gt_heatmap(const BBox& gt, int grid_edge) {
  const int ci = static_cast<int>(std::floor(gt.x));
  const int cj = static_cast<int>(std::floor(gt.y));
  if (ci < 0 || ci >= grid_edge || cj < 0 || cj >= grid_edge) {
    throw std::invalid_argument("heatmap center outside the grid");
  }
  const double sigma = heatmap_sigma(gt, grid_edge);
  std::vector<double> y(static_cast<std::size_t>(grid_edge) * grid_edge);
  for (int i = 0; i < grid_edge; ++i) {
    for (int j = 0; j < grid_edge; ++j) {
      const double d2 = static_cast<double>((i - ci) * (i - ci) + (j - cj) * (j - cj));
      y[static_cast<std::size_t>(i) * grid_edge + j] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
  y[static_cast<std::size_t>(ci) * grid_edge + cj] = 1.0;
  return y;
}

Tensor focal_loss(const Tensor& cls, const BBox& gt, int grid_edge, Tape* tape) {
  constexpr double kEps = 1e-12;
  const std::vector<double> y = gt_heatmap(gt, grid_edge);
  const int ci = static_cast<int>(std::floor(gt.x));
  const int cj = static_cast<int>(std::floor(gt.y));
  const std::int64_t center = static_cast<std::int64_t>(ci) * grid_edge + cj;

  Tensor flat = reshape(cls, {grid_edge * grid_edge}, tape);
  Tensor safe = clamp(flat, kEps, 1.0 - kEps, tape);

  // Positive cell: (1 - I)^2 log I.
  Tensor p = pick(safe, center, tape);
  Tensor one_minus_p = const_minus(1.0, p, tape);
  Tensor pos = mul(mul(one_minus_p, one_minus_p, tape), tlog(p, tape), tape);

  // Negatives: (1 - Y)^4 I^2 log(1 - I), with the positive cell masked out.
  std::vector<double> wneg(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double q = 1.0 - y[t];
    wneg[t] = q * q * q * q;
  }
  wneg[center] = 0.0;
  Tensor wn = Tensor::from({grid_edge * grid_edge}, wneg);
  Tensor neg = sum_all(
      mul(wn, mul(mul(safe, safe, tape), tlog(const_minus(1.0, safe, tape), tape), tape), tape),
      tape);

  return scale(add(pos, neg, tape), -1.0, tape);
}

Tensor l1_loss(const BBoxT& pred, const BBox& gt, Tape* tape) {
  Tensor dx = tabs(add_scalar(pred.x, -gt.x, tape), tape);
  Tensor dy = tabs(add_scalar(pred.y, -gt.y, tape), tape);
  Tensor dw = tabs(add_scalar(pred.w, -gt.w, tape), tape);
  Tensor dh = tabs(add_scalar(pred.h, -gt.h, tape), tape);
  return scale(add(add(dx, dy, tape), add(dw, dh, tape), tape), 0.25, tape);
}

namespace {

struct GridBoxT {
  // Corner coordinates per grid axis: a = first axis (pairs with h), b = second
  // axis (pairs with w).
  Tensor a0, a1, b0, b1;
};

GridBoxT to_corners(const BBoxT& box, int grid_edge, Tape* tape) {
  GridBoxT g;
  Tensor half_h = scale(box.h, grid_edge / 2.0, tape);
  Tensor half_w = scale(box.w, grid_edge / 2.0, tape);
  g.a0 = sub(box.x, half_h, tape);
  g.a1 = add(box.x, half_h, tape);
  g.b0 = sub(box.y, half_w, tape);
  g.b1 = add(box.y, half_w, tape);
  return g;
}

BBoxT constant_box(const BBox& box) {
  return BBoxT{Tensor::scalar(box.x), Tensor::scalar(box.y), Tensor::scalar(box.w),
               Tensor::scalar(box.h)};
}

}  // namespace

Tensor giou_loss(const BBoxT& pred, const BBox& gt, int grid_edge, Tape* tape) {
  if (pred.w.value() <= 0.0 || pred.h.value() <= 0.0 || gt.w <= 0.0 || gt.h <= 0.0) {
    throw std::invalid_argument("degenerate box in overlap loss");
  }
  GridBoxT p = to_corners(pred, grid_edge, tape);
  GridBoxT g = to_corners(constant_box(gt), grid_edge, tape);

  Tensor ia = relu(sub(tmin(p.a1, g.a1, tape), tmax(p.a0, g.a0, tape), tape), tape);
  Tensor ib = relu(sub(tmin(p.b1, g.b1, tape), tmax(p.b0, g.b0, tape), tape), tape);
  Tensor inter = mul(ia, ib, tape);

  Tensor area_p = mul(sub(p.a1, p.a0, tape), sub(p.b1, p.b0, tape), tape);
  Tensor area_g = mul(sub(g.a1, g.a0, tape), sub(g.b1, g.b0, tape), tape);
  Tensor uni = sub(add(area_p, area_g, tape), inter, tape);

  Tensor ha = sub(tmax(p.a1, g.a1, tape), tmin(p.a0, g.a0, tape), tape);
  Tensor hb = sub(tmax(p.b1, g.b1, tape), tmin(p.b0, g.b0, tape), tape);
  Tensor hull = mul(ha, hb, tape);

  Tensor giou = sub(div(inter, uni, tape), div(sub(hull, uni, tape), hull, tape), tape);
  return const_minus(1.0, giou, tape);
}

double giou_loss_plain(const BBox& pred, const BBox& gt, int grid_edge) {
  return giou_loss(constant_box(pred), gt, grid_edge, nullptr).value();
}

Tensor combine_loss(const Tensor& cls, const Tensor& iou, const Tensor& l1, double lambda_iou,
                    double lambda_l1, Tape* tape) {
  return add(cls, add(scale(iou, lambda_iou, tape), scale(l1, lambda_l1, tape), tape), tape);
}

LossTerms total_loss(const PredictionMaps& maps, const BBoxT& pred, const BBox& gt,
                     double lambda_iou, double lambda_l1, int grid_edge, Tape* tape) {
  LossTerms t;
  t.cls = focal_loss(maps.cls, gt, grid_edge, tape);
  t.iou = giou_loss(pred, gt, grid_edge, tape);

  BBoxT pred_norm{scale(pred.x, 1.0 / grid_edge, tape), scale(pred.y, 1.0 / grid_edge, tape),
                  pred.w, pred.h};
  BBox gt_norm{gt.x / grid_edge, gt.y / grid_edge, gt.w, gt.h};
  t.l1 = l1_loss(pred_norm, gt_norm, tape);

  t.total = combine_loss(t.cls, t.iou, t.l1, lambda_iou, lambda_l1, tape);
  return t;
}

}  // namespace ragtrack
