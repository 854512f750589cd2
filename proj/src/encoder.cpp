#include "ragtrack/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace ragtrack {

Tensor TokenSequence::r_segment(Tape* tape) const { return slice_rows(tokens, bounds[0], bounds[1], tape); }
Tensor TokenSequence::h_segment(Tape* tape) const { return slice_rows(tokens, bounds[1], bounds[2], tape); }
Tensor TokenSequence::z_segment(Tape* tape) const { return slice_rows(tokens, bounds[2], bounds[3], tape); }
Tensor TokenSequence::x_segment(Tape* tape) const { return slice_rows(tokens, bounds[3], bounds[4], tape); }

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int hash_word(const std::string& word, int vocab) {
  // FNV-1a, platform-independent.
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : word) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return static_cast<int>(h % static_cast<std::uint64_t>(vocab));
}

Tensor patch_embed(const Image& img, int patch, const PatchEmbedParams& params, const Tensor& pos,
                   Tape* tape) {
  if (img.h != img.w) throw std::invalid_argument("patch_embed: image must be square");
  if (img.h % patch != 0)
    throw std::invalid_argument("patch_embed: edge " + std::to_string(img.h) +
                                " not divisible by patch " + std::to_string(patch));
  const int g = img.h / patch;
  const int n = g * g;
  const int pv = 3 * patch * patch;
  if (params.proj_w.dim(0) != pv)
    throw std::invalid_argument("patch_embed: projection expects " + std::to_string(params.proj_w.dim(0)) +
                                " inputs, patches have " + std::to_string(pv));
  if (pos.dim(0) != n)
    throw std::invalid_argument("patch_embed: positional table rows " + std::to_string(pos.dim(0)) +
                                " != token count " + std::to_string(n));
  std::vector<double> flat(static_cast<std::size_t>(n) * pv);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      double* row = flat.data() + (static_cast<std::size_t>(gy) * g + gx) * pv;
      for (int c = 0; c < 3; ++c)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            row[(static_cast<std::size_t>(c) * patch + py) * patch + px] =
                img.at(c, gy * patch + py, gx * patch + px);
    }
  Tensor patches = Tensor::from({n, pv}, std::move(flat));
  return add(linear(patches, params.proj_w, params.proj_b, tape), pos, tape);
}

Tensor encode_text(const std::string& description, const TextEncoderParams& params,
                   const EncoderConfig& cfg, Tape* tape) {
  std::vector<std::string> words = tokenize_words(kPrefixHead);
  for (const std::string& w : tokenize_words(description)) words.push_back(w);
  for (const std::string& w : tokenize_words(kPrefixTail)) words.push_back(w);
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(hash_word(w, cfg.text_vocab));
  // Canonical pooling order: sorting the ids makes the mean independent of
  // word order down to the last bit.
  std::sort(ids.begin(), ids.end());
  Tensor rows = gather_rows(params.table, ids, tape);
  Tensor pooled = mean_pool_tokens(concat_rows({params.prefix, rows}, tape), tape);
  Tensor projected = linear(pooled, params.out_w, params.out_b, tape);
  return reshape(projected, {cfg.n_text, cfg.channels}, tape);
}

TokenSequence build_sequence(const Tensor& reasoning, const Tensor& text, const Tensor& tmpl,
                             const Tensor& search, Modality modality, Tape* tape) {
  const int c = reasoning.dim(1);
  for (const Tensor* t : {&text, &tmpl, &search})
    if (t->dim(1) != c)
      throw std::invalid_argument("build_sequence: width mismatch: " + shape_str(reasoning.shape()) +
                                  " vs " + shape_str(t->shape()));
  for (const Tensor* t : {&reasoning, &text, &tmpl, &search})
    if (t->dim(0) < 1) throw std::invalid_argument("build_sequence: empty segment");
  TokenSequence seq;
  seq.tokens = concat_rows({reasoning, text, tmpl, search}, tape);
  seq.modality = modality;
  seq.bounds = {0, reasoning.dim(0), reasoning.dim(0) + text.dim(0),
                reasoning.dim(0) + text.dim(0) + tmpl.dim(0),
                reasoning.dim(0) + text.dim(0) + tmpl.dim(0) + search.dim(0)};
  return seq;
}

namespace {

// Multi-head self-attention; stores post-softmax weights into `rec`.
Tensor mhsa(const Tensor& x, const AttnParams& p, int heads, Tape* tape, AttentionRecord& rec) {
  const int n = x.dim(0), c = x.dim(1);
  const int d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor q = linear(x, p.wq, p.bq, tape);
  Tensor k = linear(x, p.wk, p.bk, tape);
  Tensor v = linear(x, p.wv, p.bv, tape);
  rec.heads = heads;
  rec.n = n;
  rec.weights.assign(static_cast<std::size_t>(heads) * n * n, 0.0);
  rec.head_mean.assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * d, (h + 1) * d, tape);
    Tensor kh = slice_cols(k, h * d, (h + 1) * d, tape);
    Tensor vh = slice_cols(v, h * d, (h + 1) * d, tape);
    Tensor att = softmax_rows(scale(matmul(qh, transpose2d(kh, tape), tape), inv_sqrt_d, tape), tape);
    const double* av = att.data();
    double* wv_out = rec.weights.data() + static_cast<std::size_t>(h) * n * n;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * n; ++i) {
      wv_out[i] = av[i];
      rec.head_mean[i] += av[i] / heads;
    }
    outs.push_back(matmul(att, vh, tape));
  }
  return linear(concat_cols(outs, tape), p.wo, p.bo, tape);
}

}  // namespace

std::pair<TokenSequence, AttentionRecord> encoder_layer(const TokenSequence& seq,
                                                        const LayerParams& params,
                                                        const EncoderConfig& cfg, Tape* tape) {
  if (seq.tokens.dim(1) != cfg.channels)
    throw std::invalid_argument("encoder_layer: token width " + std::to_string(seq.tokens.dim(1)) +
                                " != channels " + std::to_string(cfg.channels));
  AttentionRecord rec;
  Tensor attended = mhsa(seq.tokens, params.attn, cfg.heads, tape, rec);
  Tensor mid = add(seq.tokens,
                   layer_norm(scale_by(attended, params.delta1, tape), params.ln1_g, params.ln1_b,
                              cfg.ln_eps, tape),
                   tape);
  Tensor ff = mlp2(mid, params.mlp_w1, params.mlp_b1, params.mlp_w2, params.mlp_b2, tape);
  Tensor out = add(mid,
                   layer_norm(scale_by(ff, params.delta2, tape), params.ln2_g, params.ln2_b,
                              cfg.ln_eps, tape),
                   tape);
  TokenSequence res = seq;
  res.tokens = out;
  return {res, std::move(rec)};
}

EncoderOutput forward_encoder(TokenSequence rgb, TokenSequence tir,
                              const std::vector<LayerParams>& layers, const EncoderConfig& cfg,
                              const FusionHook& hook, Tape* tape) {
  if (static_cast<int>(layers.size()) != cfg.layers)
    throw std::invalid_argument("forward_encoder: expected " + std::to_string(cfg.layers) +
                                " layer parameter sets, got " + std::to_string(layers.size()));
  EncoderOutput out;
  for (int l = 1; l <= cfg.layers; ++l) {
    auto [next_rgb, rec_rgb] = encoder_layer(rgb, layers[l - 1], cfg, tape);
    auto [next_tir, rec_tir] = encoder_layer(tir, layers[l - 1], cfg, tape);
    rgb = std::move(next_rgb);
    tir = std::move(next_tir);
    const bool fuse_here = std::find(cfg.fusion_layers.begin(), cfg.fusion_layers.end(), l) !=
                           cfg.fusion_layers.end();
    if (fuse_here && hook) hook(l, rgb, tir, rec_rgb, rec_tir, tape);
    out.records_rgb.push_back(std::move(rec_rgb));
    out.records_tir.push_back(std::move(rec_tir));
  }
  out.rgb = std::move(rgb);
  out.tir = std::move(tir);
  return out;
}

}  // namespace ragtrack
