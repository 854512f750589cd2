// Reasoning over a small per-modality memory of text description features:
// similarity-gated insertion, top-k retrieval, cross-attention refinement of
// the search tokens, and the recurrent reasoning-token update.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ragtrack/config.hpp"
#include "ragtrack/image.hpp"
#include "ragtrack/metrics.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

struct KbEntry {
  Tensor feature;       // [1 x C], detached
  std::string text;
  long long stamp = 0;  // insertion counter, strictly increasing
  int frame = -1;       // caller-supplied frame index, for diagnostics
};

// Fixed-capacity memory with oldest-first eviction. Insertion is gated: a
// candidate whose best cosine similarity against the stored entries reaches
// the threshold is rejected as redundant.
class KnowledgeBase {
 public:
  KnowledgeBase(int capacity, double similarity_threshold);

  // Returns true when the entry was stored.
  bool insert(const Tensor& feature, const std::string& text, int frame = -1);

  // Top-k by cosine similarity to the query, ties broken toward the most
  // recently inserted entry. Returns min(k, size) entries.
  std::vector<KbEntry> retrieve(const Tensor& query, int k) const;

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  double threshold() const { return threshold_; }
  const std::vector<KbEntry>& entries() const { return entries_; }
  void clear();

  // Serialized view (texts and stamps) for logs and debugging.
  std::string dump_json() const;

 private:
  int capacity_;
  double threshold_;
  long long next_stamp_ = 0;
  std::vector<KbEntry> entries_;
};

struct CrmParams {
  // Projection from raw text-encoder features into memory space.
  Tensor text_proj_w, text_proj_b;
  // Single-head cross-attention used for search refinement (phi_1).
  Tensor refine_wq, refine_wk, refine_wv;
  // Reasoning propagation MLP G: [1 x 3C] -> [N_r x C].
  Tensor prop_w1, prop_b1, prop_w2, prop_b2;
  // Temporal branch: cross-attention (phi_2) plus the token-wise MLP.
  Tensor temp_wq, temp_wk, temp_wv;
  Tensor temp_w1, temp_b1, temp_w2, temp_b2;
  // Learnable initial reasoning tokens.
  Tensor r0;
};

// Projects raw text-encoder output into the memory feature space.
Tensor project_text_feature(const Tensor& raw, const CrmParams& params, Tape* tape = nullptr);

// Single-head cross-attention with residual: out = q + softmax(QK^T/sqrt(C)) V.
// An empty key set returns the query tensor unchanged.
Tensor cross_attend(const Tensor& queries, const Tensor& keys, const Tensor& wq, const Tensor& wk,
                    const Tensor& wv, Tape* tape = nullptr);

// Refines search tokens against retrieved memory entries.
Tensor refine_search(const Tensor& search, const std::vector<KbEntry>& retrieved,
                     const CrmParams& params, Tape* tape = nullptr);

// Next reasoning tokens from mean-pooled reasoning/text/template segments.
Tensor propagate_reasoning(const Tensor& r_seg, const Tensor& h_seg, const Tensor& z_seg,
                           const CrmParams& params, Tape* tape = nullptr);

// Three-step augmentation of the refined search tokens by the carried
// reasoning state: cross-attend the reasoning tokens over the search tokens,
// expand them with a residual MLP, then gate each search token by its logistic
// agreement (averaged over the reasoning axis) with the expanded tokens.
// Returns {r_expanded, search_gated}.
std::pair<Tensor, Tensor> temporal_augment(const Tensor& r_next, const Tensor& refined_search,
                                           const CrmParams& params, Tape* tape = nullptr);

// ---------------------------------------------------------------------------
// Target description generation.

extern const char* kDescribePrompt;
extern const char* kRefinePrompt;

// Substitutes integer pixel coordinates into the description prompt template.
std::string fill_describe_prompt(const PixelBox& box);

struct DescriptionRequest {
  const Image* frame = nullptr;
  PixelBox bbox;
  std::string prompt;
};

// Source of natural-language target descriptions. Implementations may call an
// external captioning service or replay scripted text.
class DescriptionProvider {
 public:
  virtual ~DescriptionProvider() = default;
  // Empty optional means "no description available"; callers keep the
  // previous description in that case.
  virtual std::optional<std::string> describe(const DescriptionRequest& req) = 0;
};

// Replays a fixed per-frame list of descriptions.
class ScriptedProvider : public DescriptionProvider {
 public:
  explicit ScriptedProvider(std::vector<std::string> lines);
  std::optional<std::string> describe(const DescriptionRequest& req) override;
  void set_cursor(int frame_index) { cursor_ = frame_index; }

 private:
  std::vector<std::string> lines_;
  int cursor_ = 0;
};

// POSTs the cropped frame to an HTTP captioning endpoint:
//   request  {"image": <base64 png>, "bbox": [x, y, w, h], "prompt": "..."}
//   response {"description": "..."}
// Any transport or schema failure yields an empty optional.
class HttpProvider : public DescriptionProvider {
 public:
  HttpProvider(std::string host, int port, std::string path = "/describe",
               int timeout_seconds = 2);
  std::optional<std::string> describe(const DescriptionRequest& req) override;

 private:
  std::string host_, path_;
  int port_, timeout_seconds_;
};

std::string base64_encode(const std::vector<unsigned char>& bytes);

}  // namespace ragtrack
