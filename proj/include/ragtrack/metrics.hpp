// Tracking evaluation metrics over pixel-space boxes.

#pragma once

#include <utility>
#include <vector>

namespace ragtrack {

// Top-left origin plus extents, frame pixels.
struct PixelBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double area() const { return w * h; }
};

// Intersection over union; errors on non-positive extents.
double iou(const PixelBox& a, const PixelBox& b);
// Euclidean distance between box centers.
double center_error(const PixelBox& a, const PixelBox& b);

// Fraction of frames whose center error is within `threshold` pixels.
double precision_rate(const std::vector<double>& errors, double threshold = 20.0);
// Mean over overlap thresholds {0, 0.05, ..., 1.0} of the fraction of frames
// whose IoU strictly exceeds the threshold (area under the success curve).
double success_rate(const std::vector<double>& ious);
// Center error normalized per-axis by the ground-truth extents; counts frames
// with normalized error within `threshold`.
double norm_precision_rate(const std::vector<PixelBox>& pred, const std::vector<PixelBox>& gt,
                           double threshold = 0.2);
// Evaluate against every annotation stream and keep the best (PR, SR) pair.
std::pair<double, double> max_metrics(const std::vector<PixelBox>& pred,
                                      const std::vector<std::vector<PixelBox>>& streams,
                                      double pr_threshold = 20.0);

}  // namespace ragtrack
