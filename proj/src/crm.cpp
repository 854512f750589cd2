#include "ragtrack/crm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace ragtrack {

// ---------------------------------------------------------------------------
// Knowledge base

KnowledgeBase::KnowledgeBase(int capacity, double similarity_threshold)
    : capacity_(capacity), threshold_(similarity_threshold) {
  if (capacity_ < 1) throw std::invalid_argument("memory capacity must be positive");
}

bool KnowledgeBase::insert(const Tensor& feature, const std::string& text, int frame) {
  for (const KbEntry& e : entries_) {
    if (cosine_similarity(e.feature, feature) >= threshold_) return false;
  }
  if (static_cast<int>(entries_.size()) == capacity_) {
    entries_.erase(entries_.begin());
  }
  entries_.push_back(KbEntry{feature.detach(), text, next_stamp_++, frame});
  return true;
}

std::vector<KbEntry> KnowledgeBase::retrieve(const Tensor& query, int k) const {
  if (k < 0) throw std::invalid_argument("retrieval count must be non-negative");
  std::vector<int> order(entries_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<double> sim(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    sim[i] = cosine_similarity(entries_[i].feature, query);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return entries_[a].stamp > entries_[b].stamp;
  });
  const int take = std::min<int>(k, static_cast<int>(order.size()));
  std::vector<KbEntry> out;
  out.reserve(take);
  for (int i = 0; i < take; ++i) out.push_back(entries_[order[i]]);
  return out;
}

void KnowledgeBase::clear() {
  entries_.clear();
  next_stamp_ = 0;
}

std::string KnowledgeBase::dump_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const KbEntry& e : entries_) {
    std::vector<double> vec(e.feature.data(), e.feature.data() + e.feature.numel());
    arr.push_back({{"inserted_at_frame", e.frame},
                   {"stamp", e.stamp},
                   {"text", e.text},
                   {"vector", vec}});
  }
  return arr.dump();
}

// ---------------------------------------------------------------------------
// Feature-space operators

Tensor project_text_feature(const Tensor& raw, const CrmParams& params, Tape* tape) {
  return linear(raw, params.text_proj_w, params.text_proj_b, tape);
}

Tensor cross_attend(const Tensor& queries, const Tensor& keys, const Tensor& wq, const Tensor& wk,
                    const Tensor& wv, Tape* tape) {
  if (keys.ndim() == 2 && keys.shape()[0] == 0) return queries;
  const int c = queries.shape()[1];
  Tensor q = matmul(queries, wq, tape);
  Tensor k = matmul(keys, wk, tape);
  Tensor v = matmul(keys, wv, tape);
  Tensor att = softmax_rows(scale(matmul(q, transpose2d(k, tape), tape),
                                  1.0 / std::sqrt(static_cast<double>(c)), tape),
                            tape);
  return add(queries, matmul(att, v, tape), tape);
}

Tensor refine_search(const Tensor& search, const std::vector<KbEntry>& retrieved,
                     const CrmParams& params, Tape* tape) {
  if (retrieved.empty()) return search;
  std::vector<Tensor> rows;
  rows.reserve(retrieved.size());
  for (const KbEntry& e : retrieved) rows.push_back(e.feature);
  Tensor memory = concat_rows(rows, tape);
  return cross_attend(search, memory, params.refine_wq, params.refine_wk, params.refine_wv, tape);
}

Tensor propagate_reasoning(const Tensor& r_seg, const Tensor& h_seg, const Tensor& z_seg,
                           const CrmParams& params, Tape* tape) {
  Tensor pooled = concat_cols({mean_pool_tokens(r_seg, tape), mean_pool_tokens(h_seg, tape),
                               mean_pool_tokens(z_seg, tape)},
                              tape);
  Tensor flat = mlp2(pooled, params.prop_w1, params.prop_b1, params.prop_w2, params.prop_b2, tape);
  const int c = r_seg.shape()[1];
  const int n_r = flat.numel() / c;
  return reshape(flat, {n_r, c}, tape);
}

std::pair<Tensor, Tensor> temporal_augment(const Tensor& r_next, const Tensor& refined_search,
                                           const CrmParams& params, Tape* tape) {
  if (r_next.shape()[1] != refined_search.shape()[1]) {
    throw std::invalid_argument("reasoning and search widths differ");
  }
  Tensor enriched = cross_attend(r_next, refined_search, params.temp_wq, params.temp_wk,
                                 params.temp_wv, tape);
  Tensor expanded = add(enriched, mlp2(enriched, params.temp_w1, params.temp_b1, params.temp_w2,
                                       params.temp_b2, tape),
                        tape);
  // Per-search-token gate: agreement between each search token and the
  // expanded reasoning tokens, averaged over the reasoning axis, squashed to
  // (0, 1) so the multiplicative gate stays bounded.
  Tensor agree = matmul(refined_search, transpose2d(expanded, tape), tape);  // [N_x x N_r]
  Tensor gate = sigmoid(mean_cols(agree, tape), tape);                       // [N_x x 1]
  Tensor gated = mul_rows_scalar(refined_search, gate, tape);
  return {expanded, gated};
}

// ---------------------------------------------------------------------------
// Description generation

const char* kDescribePrompt =
    "Describe the object located in the image at <box>({x},{y},{x+w},{y+h})</box>. "
    "Focus on distinctive visual features, motion patterns, and key identifiers to "
    "distinguish it from background elements and distractors. Keep the description in "
    "a continuous sentence under 20 words. Avoid mentioning bounding boxes or "
    "coordinates. Do not use parentheses for explanations.";

const char* kRefinePrompt =
    "Correcting the textual description of the tracking object. Ensure the final "
    "output is a continuous sentence under 20 words, logically coherent, does not "
    "mention bounding boxes, or coordinates terms, and does not use parentheses for "
    "explanations. Do not introduce new details. Output only the integrated "
    "description without any additional text. Textual description: [Initial description]";

std::string fill_describe_prompt(const PixelBox& box) {
  auto sub = [](std::string s, const std::string& from, const std::string& to) {
    auto pos = s.find(from);
    if (pos != std::string::npos) s.replace(pos, from.size(), to);
    return s;
  };
  std::string out = kDescribePrompt;
  out = sub(out, "{x}", std::to_string(static_cast<long long>(std::llround(box.x))));
  out = sub(out, "{y}", std::to_string(static_cast<long long>(std::llround(box.y))));
  out = sub(out, "{x+w}", std::to_string(static_cast<long long>(std::llround(box.x + box.w))));
  out = sub(out, "{y+h}", std::to_string(static_cast<long long>(std::llround(box.y + box.h))));
  return out;
}

ScriptedProvider::ScriptedProvider(std::vector<std::string> lines) : lines_(std::move(lines)) {}

std::optional<std::string> ScriptedProvider::describe(const DescriptionRequest&) {
  if (cursor_ < 0 || cursor_ >= static_cast<int>(lines_.size())) return std::nullopt;
  return lines_[cursor_];
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
  }
  if (i + 1 == bytes.size()) {
    unsigned v = bytes[i] << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

HttpProvider::HttpProvider(std::string host, int port, std::string path, int timeout_seconds)
    : host_(std::move(host)), path_(std::move(path)), port_(port),
      timeout_seconds_(timeout_seconds) {}

std::optional<std::string> HttpProvider::describe(const DescriptionRequest& req) {
  if (req.frame == nullptr) return std::nullopt;
  std::vector<unsigned char> png;
  try {
    png = encode_png(*req.frame);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  nlohmann::json body = {
      {"image", base64_encode(png)},
      {"bbox",
       {static_cast<long long>(std::llround(req.bbox.x)),
        static_cast<long long>(std::llround(req.bbox.y)),
        static_cast<long long>(std::llround(req.bbox.w)),
        static_cast<long long>(std::llround(req.bbox.h))}},
      {"prompt", req.prompt},
  };
  httplib::Client cli(host_, port_);
  cli.set_connection_timeout(timeout_seconds_, 0);
  cli.set_read_timeout(timeout_seconds_, 0);
  cli.set_write_timeout(timeout_seconds_, 0);
  auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res || res->status < 200 || res->status >= 300) return std::nullopt;
  try {
    nlohmann::json parsed = nlohmann::json::parse(res->body);
    if (!parsed.contains("description") || !parsed["description"].is_string()) {
      return std::nullopt;
    }
    return parsed["description"].get<std::string>();
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace ragtrack
