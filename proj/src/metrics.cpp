#include "ragtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ragtrack {

double iou(const PixelBox& a, const PixelBox& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0)
    throw std::invalid_argument("iou: degenerate box (non-positive extent)");
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  // Corner sums round, so a box against itself can land a few ulps above 1;
  // keep the documented range.
  return std::min(1.0, inter / uni);
}

double center_error(const PixelBox& a, const PixelBox& b) {
  const double dx = a.cx() - b.cx();
  const double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

double precision_rate(const std::vector<double>& errors, double threshold) {
  if (errors.empty()) throw std::invalid_argument("precision_rate: no frames");
  std::size_t hits = 0;
  for (double e : errors)
    if (e <= threshold) ++hits;
  return static_cast<double>(hits) / errors.size();
}

double success_rate(const std::vector<double>& ious) {
  if (ious.empty()) throw std::invalid_argument("success_rate: no frames");
  double acc = 0.0;
  for (int t = 0; t <= 20; ++t) {
    const double thr = t * 0.05;
    std::size_t hits = 0;
    for (double v : ious)
      if (v > thr) ++hits;
    acc += static_cast<double>(hits) / ious.size();
  }
  return acc / 21.0;
}

double norm_precision_rate(const std::vector<PixelBox>& pred, const std::vector<PixelBox>& gt,
                           double threshold) {
  if (pred.empty()) throw std::invalid_argument("norm_precision_rate: no frames");
  if (pred.size() != gt.size()) throw std::invalid_argument("norm_precision_rate: stream length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i].w <= 0.0 || gt[i].h <= 0.0)
      throw std::invalid_argument("norm_precision_rate: degenerate ground-truth extent");
    const double ex = (pred[i].cx() - gt[i].cx()) / gt[i].w;
    const double ey = (pred[i].cy() - gt[i].cy()) / gt[i].h;
    if (std::sqrt(ex * ex + ey * ey) <= threshold) ++hits;
  }
  return static_cast<double>(hits) / pred.size();
}

std::pair<double, double> max_metrics(const std::vector<PixelBox>& pred,
                                      const std::vector<std::vector<PixelBox>>& streams,
                                      double pr_threshold) {
  if (streams.empty()) throw std::invalid_argument("max_metrics: no annotation streams");
  double best_pr = 0.0, best_sr = 0.0;
  for (const auto& gt : streams) {
    if (gt.size() != pred.size()) throw std::invalid_argument("max_metrics: stream length mismatch");
    std::vector<double> errs(pred.size()), ovs(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      errs[i] = center_error(pred[i], gt[i]);
      ovs[i] = iou(pred[i], gt[i]);
    }
    best_pr = std::max(best_pr, precision_rate(errs, pr_threshold));
    best_sr = std::max(best_sr, success_rate(ovs));
  }
  return {best_pr, best_sr};
}

}  // namespace ragtrack
