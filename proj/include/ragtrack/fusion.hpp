// Adaptive token fusion: attention-derived search-token scoring, top-ratio
// selection shared across modalities, channel relevance with symmetric channel
// exchange, and a residual position-wise fusion MLP.

#pragma once

#include <array>
#include <utility>
#include <vector>

#include "ragtrack/encoder.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

// Per-search-token attention mass split by key segment, plus their sum.
struct SearchScores {
  std::vector<double> x2r, x2h, x2z, x2x, total;
};

struct SelectionResult {
  std::vector<int> kept;  // ascending indices into the scored segment
  double gamma = 1.0;
};

struct ExchangePlan {
  std::vector<int> channels;  // ascending
  double sigma = 0.0;
};

struct FusionLayerParams {
  Tensor relevance_w_rgb;  // [C x C]
  Tensor relevance_w_tir;  // [C x C]
  Tensor fuse_w1, fuse_b1, fuse_w2, fuse_b2;
};

// Offsets (within the template segment) of the central block of the template
// patch grid; the block edge is ceil(grid_edge / 2).
std::vector<int> template_center_offsets(int n_template_tokens);

// Sums head-averaged post-softmax attention mass per search query over four
// key groups: reasoning, text, template center, and search tokens.
SearchScores score_search_tokens(const AttentionRecord& rec, const std::array<int, 5>& bounds);

// Highest-scoring ceil(gamma * N) indices, ties toward the lower index.
SelectionResult select_tokens(const std::vector<double>& scores, double gamma);
std::vector<int> select_topk(const std::vector<double>& scores, int k);

// S = (F_rgb W_rgb)^T (F_tir W_tir): channel-by-channel relevance map.
Tensor channel_relevance(const Tensor& f_rgb, const Tensor& f_tir, const Tensor& w_rgb,
                         const Tensor& w_tir, Tape* tape = nullptr);

// round(sigma * C) most relevant channels by row mean of S, ties toward the
// lower index.
ExchangePlan plan_exchange(const Tensor& relevance, double sigma);

// Symmetric swap of the planned channels between the two modalities.
std::pair<Tensor, Tensor> exchange_channels(const Tensor& f_rgb, const Tensor& f_tir,
                                            const ExchangePlan& plan, Tape* tape = nullptr);

// Token-dimension concat -> two-layer MLP -> residual -> split back.
std::pair<Tensor, Tensor> fuse_modalities(const Tensor& f_rgb, const Tensor& f_tir,
                                          const FusionLayerParams& params, Tape* tape = nullptr);

// Bookkeeping for tokens dropped during selection, so the head can scatter
// every search position back onto the spatial grid.
struct SelectionMeta {
  int n_search_original = 0;
  std::vector<int> kept;                    // indices into the original search segment
  std::vector<int> dropped;                 // complement of kept, ascending
  Tensor frozen_rgb, frozen_tir;            // detached rows for the dropped indices
  bool any_dropped() const { return !dropped.empty(); }
};

// Builds the in-encoder fusion callback. Selection always targets
// ceil(gamma * N_x_original) survivors, so after the first pruning hook the
// later hooks keep every remaining token and only refresh channel exchange and
// fusion. `meta` is overwritten at each pruning step.
FusionHook make_atf_hook(double gamma, double sigma,
                         const std::vector<FusionLayerParams>& layer_params,
                         SelectionMeta& meta);

}  // namespace ragtrack
