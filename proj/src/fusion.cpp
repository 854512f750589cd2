#include "ragtrack/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ragtrack {

std::vector<int> template_center_offsets(int n_template_tokens) {
  int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_template_tokens))));
  if (g * g != n_template_tokens) {
    throw std::invalid_argument("template token count is not a square: " +
                                std::to_string(n_template_tokens));
  }
  int block = (g + 1) / 2;  // ceil(g / 2)
  int start = (g - block) / 2;
  std::vector<int> out;
  out.reserve(block * block);
  for (int gy = start; gy < start + block; ++gy) {
    for (int gx = start; gx < start + block; ++gx) {
      out.push_back(gy * g + gx);
    }
  }
  return out;
}

SearchScores score_search_tokens(const AttentionRecord& rec, const std::array<int, 5>& bounds) {
  const int n = rec.n;
  if (bounds[4] != n) {
    throw std::invalid_argument("attention size does not match token bounds");
  }
  const int r0 = bounds[0], h0 = bounds[1], z0 = bounds[2], x0 = bounds[3], x1 = bounds[4];
  const std::vector<int> center = template_center_offsets(x0 - z0);
  const int n_x = x1 - x0;

  SearchScores s;
  s.x2r.assign(n_x, 0.0);
  s.x2h.assign(n_x, 0.0);
  s.x2z.assign(n_x, 0.0);
  s.x2x.assign(n_x, 0.0);
  s.total.assign(n_x, 0.0);

  const double* w = rec.head_mean.data();
  for (int q = 0; q < n_x; ++q) {
    const double* row = w + static_cast<std::size_t>(x0 + q) * n;
    double ar = 0.0, ah = 0.0, az = 0.0, ax = 0.0;
    for (int j = r0; j < h0; ++j) ar += row[j];
    for (int j = h0; j < z0; ++j) ah += row[j];
    for (int off : center) az += row[z0 + off];
    for (int j = x0; j < x1; ++j) ax += row[j];
    s.x2r[q] = ar;
    s.x2h[q] = ah;
    s.x2z[q] = az;
    s.x2x[q] = ax;
    s.total[q] = ar + ah + az + ax;
  }
  return s;
}

std::vector<int> select_topk(const std::vector<double>& scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (k < 0 || k > n) {
    throw std::invalid_argument("top-k count out of range: " + std::to_string(k));
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

SelectionResult select_tokens(const std::vector<double>& scores, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw std::invalid_argument("selection ratio must be in (0, 1]");
  }
  const int n = static_cast<int>(scores.size());
  int keep = static_cast<int>(std::ceil(gamma * n));
  keep = std::min(std::max(keep, 1), n);
  SelectionResult r;
  r.gamma = gamma;
  r.kept = select_topk(scores, keep);
  return r;
}

Tensor channel_relevance(const Tensor& f_rgb, const Tensor& f_tir, const Tensor& w_rgb,
                         const Tensor& w_tir, Tape* tape) {
  Tensor pr = matmul(f_rgb, w_rgb, tape);
  Tensor pt = matmul(f_tir, w_tir, tape);
  return matmul(transpose2d(pr, tape), pt, tape);
}

ExchangePlan plan_exchange(const Tensor& relevance, double sigma) {
  if (relevance.ndim() != 2 || relevance.shape()[0] != relevance.shape()[1]) {
    throw std::invalid_argument("relevance map must be square, got " + shape_str(relevance.shape()));
  }
  if (sigma < 0.0 || sigma > 1.0) {
    throw std::invalid_argument("exchange ratio must be in [0, 1]");
  }
  const int c = relevance.shape()[0];
  std::vector<double> importance(c, 0.0);
  const double* d = relevance.data();
  for (int i = 0; i < c; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += d[static_cast<std::size_t>(i) * c + j];
    importance[i] = acc / c;
  }
  int k = static_cast<int>(std::lround(sigma * c));
  k = std::min(std::max(k, 0), c);
  ExchangePlan plan;
  plan.sigma = sigma;
  plan.channels = select_topk(importance, k);
  return plan;
}

std::pair<Tensor, Tensor> exchange_channels(const Tensor& f_rgb, const Tensor& f_tir,
                                            const ExchangePlan& plan, Tape* tape) {
  return swap_columns(f_rgb, f_tir, plan.channels, tape);
}

std::pair<Tensor, Tensor> fuse_modalities(const Tensor& f_rgb, const Tensor& f_tir,
                                          const FusionLayerParams& params, Tape* tape) {
  if (f_rgb.shape() != f_tir.shape()) {
    throw std::invalid_argument("fusion inputs must share a shape");
  }
  const int n = f_rgb.shape()[0];
  Tensor joint = concat_rows({f_rgb, f_tir}, tape);
  Tensor mixed = mlp2(joint, params.fuse_w1, params.fuse_b1, params.fuse_w2, params.fuse_b2, tape);
  Tensor out = add(joint, mixed, tape);
  return {slice_rows(out, 0, n, tape), slice_rows(out, n, 2 * n, tape)};
}

namespace {

// Rebuilds a token sequence whose search segment holds only the kept rows.
TokenSequence prune_search(const TokenSequence& seq, const std::vector<int>& kept, Tape* tape) {
  std::vector<int> rows;
  rows.reserve(seq.bounds[3] + kept.size());
  for (int i = 0; i < seq.bounds[3]; ++i) rows.push_back(i);
  for (int idx : kept) rows.push_back(seq.bounds[3] + idx);
  TokenSequence out;
  out.tokens = gather_rows(seq.tokens, rows, tape);
  out.bounds = seq.bounds;
  out.bounds[4] = seq.bounds[3] + static_cast<int>(kept.size());
  out.modality = seq.modality;
  return out;
}

}  // namespace

FusionHook make_atf_hook(double gamma, double sigma,
                         const std::vector<FusionLayerParams>& layer_params,
                         SelectionMeta& meta) {
  meta = SelectionMeta{};
  // One parameter set per fusion layer, consumed in call order.
  auto call_index = std::make_shared<int>(0);
  return [gamma, sigma, &layer_params, &meta, call_index](
             int /*layer_index*/, TokenSequence& rgb, TokenSequence& tir,
             const AttentionRecord& rec_rgb, const AttentionRecord& rec_tir, Tape* tape) {
    const int p = (*call_index)++;
    if (p >= static_cast<int>(layer_params.size())) {
      throw std::logic_error("fusion hook called more times than parameter sets provided");
    }
    const FusionLayerParams& params = layer_params[p];

    if (meta.n_search_original == 0) {
      meta.n_search_original = rgb.x_len();
    }
    const int target = std::min(
        std::max(static_cast<int>(std::ceil(gamma * meta.n_search_original)), 1),
        meta.n_search_original);

    if (rgb.x_len() > target) {
      SearchScores sr = score_search_tokens(rec_rgb, rgb.bounds);
      SearchScores st = score_search_tokens(rec_tir, tir.bounds);
      std::vector<double> joint(sr.total.size());
      for (std::size_t i = 0; i < joint.size(); ++i) joint[i] = sr.total[i] + st.total[i];
      std::vector<int> kept_now = select_topk(joint, target);

      // Map the surviving positions back to original search indices and stash
      // the dropped rows before they leave the sequence.
      std::vector<int> prev = meta.kept;
      if (prev.empty()) {
        prev.resize(meta.n_search_original);
        std::iota(prev.begin(), prev.end(), 0);
      }
      std::vector<int> kept_orig, dropped_orig, dropped_local;
      for (int i = 0; i < static_cast<int>(prev.size()); ++i) {
        if (std::binary_search(kept_now.begin(), kept_now.end(), i)) {
          kept_orig.push_back(prev[i]);
        } else {
          dropped_orig.push_back(prev[i]);
          dropped_local.push_back(i);
        }
      }
      std::vector<int> dropped_rows;
      for (int i : dropped_local) dropped_rows.push_back(rgb.bounds[3] + i);
      Tensor froz_rgb = gather_rows(rgb.tokens, dropped_rows).detach();
      Tensor froz_tir = gather_rows(tir.tokens, dropped_rows).detach();
      if (meta.dropped.empty()) {
        meta.frozen_rgb = froz_rgb;
        meta.frozen_tir = froz_tir;
      } else {
        meta.frozen_rgb = concat_rows({meta.frozen_rgb, froz_rgb});
        meta.frozen_tir = concat_rows({meta.frozen_tir, froz_tir});
      }
      meta.dropped.insert(meta.dropped.end(), dropped_orig.begin(), dropped_orig.end());
      meta.kept = kept_orig;

      rgb = prune_search(rgb, kept_now, tape);
      tir = prune_search(tir, kept_now, tape);
    } else if (meta.kept.empty()) {
      meta.kept.resize(meta.n_search_original);
      std::iota(meta.kept.begin(), meta.kept.end(), 0);
    }

    Tensor rel = channel_relevance(rgb.tokens, tir.tokens, params.relevance_w_rgb,
                                   params.relevance_w_tir, /*tape=*/nullptr);
    ExchangePlan plan = plan_exchange(rel, sigma);
    auto swapped = exchange_channels(rgb.tokens, tir.tokens, plan, tape);
    auto fused = fuse_modalities(swapped.first, swapped.second, params, tape);
    rgb.tokens = fused.first;
    tir.tokens = fused.second;
  };
}

}  // namespace ragtrack
