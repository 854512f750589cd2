// The full tracking model: every learnable tensor registered by name in a
// ParamStore, plus the per-frame forward pass that strings together text
// encoding, patch embedding, the shared encoder with in-network fusion, the
// reasoning module, and the prediction head.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ragtrack/config.hpp"
#include "ragtrack/crm.hpp"
#include "ragtrack/encoder.hpp"
#include "ragtrack/fusion.hpp"
#include "ragtrack/head.hpp"
#include "ragtrack/image.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

// Insertion-ordered registry of named tensors. Entries flagged non-trainable
// (normalization running statistics) are saved and loaded but skipped by the
// optimizer.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  Tensor add(const std::string& name, Tensor t, bool trainable = true);
  const std::vector<Entry>& entries() const { return entries_; }
  const Tensor& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::int64_t scalar_count(bool trainable_only = true) const;

 private:
  std::vector<Entry> entries_;
};

// Reasoning tokens carried across frames, one set per modality.
struct CrmState {
  Tensor reasoning_rgb, reasoning_tir;  // [N_r x C], detached
  bool initialized = false;
};

struct FrameInputs {
  const Image* tmpl_rgb = nullptr;
  const Image* tmpl_tir = nullptr;
  const Image* search_rgb = nullptr;
  const Image* search_tir = nullptr;
  std::string description;
  bool training = false;
};

struct ForwardResult {
  PredictionMaps maps;
  BBox box;
  BBoxT box_grad;  // populated when a tape is supplied
  SelectionMeta meta;
  int tokens_kept = 0;
  Tensor text_feat_rgb, text_feat_tir;  // projected description features [n_text x C]
  CrmState next_state;
};

class RagTrackModel {
 public:
  explicit RagTrackModel(const TrackerConfig& cfg);

  const TrackerConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  // Projected description feature for one modality, for memory insertion and
  // retrieval queries.
  Tensor text_feature(const std::string& description, Modality m, Tape* tape = nullptr);

  ForwardResult forward_frame(const FrameInputs& in, const CrmState& state,
                              const KnowledgeBase& kb_rgb, const KnowledgeBase& kb_tir,
                              Tape* tape = nullptr);

  // Deep copy: same structure, independent storage.
  RagTrackModel clone() const;
  void copy_data_from(const RagTrackModel& other);

  const CrmParams& crm(Modality m) const;

 private:
  void register_params();

  TrackerConfig cfg_;
  ParamStore store_;

  PatchEmbedParams patch_;
  Tensor pos_template_, pos_search_;
  TextEncoderParams text_;
  std::vector<LayerParams> layers_;
  std::vector<FusionLayerParams> fusion_;
  CrmParams crm_rgb_, crm_tir_;
  HeadParams head_;
};

}  // namespace ragtrack
