// Unified token encoder: patch embedding for both image streams, a hash-based
// text encoder with a learnable prefix, and parameter-shared transformer
// layers with per-layer learnable residual scales.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ragtrack/config.hpp"
#include "ragtrack/image.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

enum class Modality { kRgb, kTir };

// Fixed text surrounding the learnable prefix tokens.
inline constexpr const char* kPrefixHead = "A sequence of a";
inline constexpr const char* kPrefixTail = "object:";

struct PatchEmbedParams {
  Tensor proj_w;  // [3*patch^2 x C]
  Tensor proj_b;  // [C]
};

struct TextEncoderParams {
  Tensor table;   // [vocab x C]
  Tensor prefix;  // [prefix_len x C] learnable prefix tokens
  Tensor out_w;   // [C x n_text*C]
  Tensor out_b;   // [n_text*C]
};

struct AttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerParams {
  AttnParams attn;
  Tensor delta1, delta2;        // learnable residual scales, 1-element each
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Concatenated token matrix [reasoning; text; template; search] with segment
// boundaries as running offsets {0, r_end, h_end, z_end, x_end}.
struct TokenSequence {
  Tensor tokens;
  std::array<int, 5> bounds{};
  Modality modality = Modality::kRgb;

  int r_len() const { return bounds[1] - bounds[0]; }
  int h_len() const { return bounds[2] - bounds[1]; }
  int z_len() const { return bounds[3] - bounds[2]; }
  int x_len() const { return bounds[4] - bounds[3]; }
  int total() const { return bounds[4]; }
  Tensor r_segment(Tape* tape = nullptr) const;
  Tensor h_segment(Tape* tape = nullptr) const;
  Tensor z_segment(Tape* tape = nullptr) const;
  Tensor x_segment(Tape* tape = nullptr) const;
};

// Post-softmax attention of one layer: per-head weights plus the head average
// that downstream token scoring consumes.
struct AttentionRecord {
  int heads = 0;
  int n = 0;
  std::vector<double> weights;    // heads x n x n
  std::vector<double> head_mean;  // n x n
};

std::vector<std::string> tokenize_words(const std::string& text);
int hash_word(const std::string& word, int vocab);

// Non-overlapping patches, row-major over the patch grid, linearly projected
// with a learned positional embedding added.
Tensor patch_embed(const Image& img, int patch, const PatchEmbedParams& params, const Tensor& pos,
                   Tape* tape = nullptr);

// Deterministic text feature: hashed word embeddings (fixed prefix text plus
// the description) pooled with the learnable prefix tokens, then projected.
// Word order never matters: hashed ids are pooled in sorted order.
Tensor encode_text(const std::string& description, const TextEncoderParams& params,
                   const EncoderConfig& cfg, Tape* tape = nullptr);

TokenSequence build_sequence(const Tensor& reasoning, const Tensor& text, const Tensor& tmpl,
                             const Tensor& search, Modality modality, Tape* tape = nullptr);

// One transformer layer: attention and MLP branches are scaled by the layer's
// learnable deltas and normalized before the residual add, so zero deltas (with
// zero norm bias) make the layer an exact identity.
std::pair<TokenSequence, AttentionRecord> encoder_layer(const TokenSequence& seq,
                                                        const LayerParams& params,
                                                        const EncoderConfig& cfg,
                                                        Tape* tape = nullptr);

using FusionHook =
    std::function<void(int layer_index, TokenSequence& rgb, TokenSequence& tir,
                       const AttentionRecord& rec_rgb, const AttentionRecord& rec_tir, Tape* tape)>;

struct EncoderOutput {
  TokenSequence rgb;
  TokenSequence tir;
  std::vector<AttentionRecord> records_rgb;  // one per layer, pre-hook
  std::vector<AttentionRecord> records_tir;
};

// Runs both modalities through the same layer parameters; after each layer
// whose index (1-based) is in cfg.fusion_layers, invokes the hook with that
// layer's attention records. The hook may shrink or rewrite the sequences.
EncoderOutput forward_encoder(TokenSequence rgb, TokenSequence tir,
                              const std::vector<LayerParams>& layers, const EncoderConfig& cfg,
                              const FusionHook& hook, Tape* tape = nullptr);

}  // namespace ragtrack
