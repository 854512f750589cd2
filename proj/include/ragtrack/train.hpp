// Single-frame training steps over synthetic sequences, with the adaptive
// moment optimizer (decoupled weight decay) implemented from its published
// update equations.

#pragma once

#include <cstdint>
#include <vector>

#include "ragtrack/model.hpp"
#include "ragtrack/synth.hpp"

namespace ragtrack {

class AdamW {
 public:
  AdamW(ParamStore& store, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  // Applies accumulated gradients to every trainable tensor:
  //   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
  //   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
  void step();
  void zero_grad();
  int steps_taken() const { return t_; }

 private:
  ParamStore& store_;
  double lr_, wd_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
  int steps = 300;
  bool augment = true;
  std::uint64_t seed = 0;
  double rotation_degrees = 15.0;   // template-only rotation range (+/-)
  double translate_px = 4.0;        // search-window center jitter (+/-)
  double scale_jitter = 1.3;        // search-window side factor, log-uniform in [1/s, s]
  double grayscale_prob = 0.25;     // RGB-stream grayscale probability
  int log_every = 25;               // 0 silences progress lines
};

struct StepRecord {
  int step = 0;
  double total = 0, cls = 0, iou = 0, l1 = 0;
};

// Minimizes the tracking loss on frames sampled from the dataset; fresh
// reasoning state and description memories every step so the learnable initial
// tokens and text projections train. Deterministic per seed.
std::vector<StepRecord> train_model(RagTrackModel& model,
                                    const std::vector<SequenceRecord>& dataset,
                                    const TrainOptions& opts);

std::string steps_to_jsonl(const std::vector<StepRecord>& steps);

}  // namespace ragtrack
