// Prediction head: scatter search tokens back onto the spatial grid, run a
// small convolutional tower, decode a box, and compute the training loss
// (focal classification + weighted generalized-IoU + weighted L1).

#pragma once

#include <array>
#include <vector>

#include "ragtrack/fusion.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

struct ConvBlockParams {
  Tensor w, b;                  // 3x3 conv
  Tensor bn_gain, bn_bias;      // learnable
  Tensor bn_mean, bn_var;       // running buffers, mutated in training mode
};

struct HeadParams {
  Tensor compress_w, compress_b;          // 1x1 conv: 2C -> C
  std::array<ConvBlockParams, 4> trunk;   // Conv-BN-ReLU at width C
  Tensor cls_w, cls_b;                    // 3x3: C -> 1
  Tensor off_w, off_b;                    // 3x3: C -> 2
  Tensor size_w, size_b;                  // 3x3: C -> 2
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

// Sigmoid-bounded output maps: cls [1 x E x E], off [2 x E x E], size [2 x E x E].
struct PredictionMaps {
  Tensor cls, off, size;
};

// Decoded box. x and y are centers in feature-grid units along the first and
// second grid axes; w and h are extents normalized to [0, 1] along the second
// and first axes respectively (so x pairs with h and y pairs with w when the
// box is drawn on the grid).
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

// Same box with gradient-carrying scalar components.
struct BBoxT {
  Tensor x, y, w, h;
};

struct LossTerms {
  Tensor cls, iou, l1, total;
};

// Rebuilds the dense [C x E x E] grid from kept tokens plus frozen values for
// the dropped positions. Token t lands at grid cell (t / E, t % E); with
// nothing dropped this is a pure transpose-reshape of the token matrix.
Tensor tokens_to_grid(const Tensor& kept_tokens, const Tensor& frozen, const SelectionMeta& meta,
                      int grid_edge, Tape* tape = nullptr);

PredictionMaps head_forward(const Tensor& search_rgb, const Tensor& search_tir,
                            const SelectionMeta& meta, HeadParams& params, int grid_edge,
                            bool training, Tape* tape = nullptr);

// Argmax cell of the classification map, ties toward the lower first index and
// then the lower second index.
std::pair<int, int> argmax_cell(const Tensor& cls);

// x = i* + off(0, i*, j*); y = j* + off(1, i*, j*); w = size(0); h = size(1).
BBox decode_bbox(const PredictionMaps& maps);

// Same decode with the component reads recorded on the tape. The argmax cell
// itself is treated as a constant of the forward pass.
BBoxT decode_bbox_grad(const PredictionMaps& maps, Tape* tape);

// Decode at a fixed cell instead of the argmax. Training reads the regression
// maps at the label's center cell so the bounded offset head is never asked to
// reach a box it cannot express.
BBoxT decode_bbox_at(const PredictionMaps& maps, int i, int j, Tape* tape);

double peak_score(const PredictionMaps& maps);

// Gaussian spread for the ground-truth heatmap: max(1, box diagonal / 6) in
// grid cells.
double heatmap_sigma(const BBox& gt, int grid_edge);

// Dense ground-truth heatmap, peak 1 at the cell containing the box center.
std::vector<double> gt_heatmap(const BBox& gt, int grid_edge);

// Penalty-reduced focal loss against the Gaussian heatmap, normalized by the
// single positive.
Tensor focal_loss(const Tensor& cls, const BBox& gt, int grid_edge, Tape* tape = nullptr);

// Mean absolute difference over (x, y, w, h); centers must already be
// normalized by the grid extent.
Tensor l1_loss(const BBoxT& pred, const BBox& gt, Tape* tape = nullptr);

// 1 - GIoU of the two boxes drawn on the grid; errors on non-positive extents.
Tensor giou_loss(const BBoxT& pred, const BBox& gt, int grid_edge, Tape* tape = nullptr);
double giou_loss_plain(const BBox& pred, const BBox& gt, int grid_edge);

// cls + lambda_iou * iou + lambda_l1 * l1.
Tensor combine_loss(const Tensor& cls, const Tensor& iou, const Tensor& l1, double lambda_iou,
                    double lambda_l1, Tape* tape = nullptr);

// Computes the three components and combines them, with the center
// normalization for the L1 term applied here.
LossTerms total_loss(const PredictionMaps& maps, const BBoxT& pred, const BBox& gt,
                     double lambda_iou, double lambda_l1, int grid_edge, Tape* tape = nullptr);

}  // namespace ragtrack
