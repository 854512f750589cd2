// Tracker configuration: one flat struct covering encoder geometry, fusion,
// retrieval memory, update schedule, and optimization defaults.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ragtrack {

struct EncoderConfig {
  int channels = 64;
  int layers = 8;
  int heads = 4;
  int patch = 8;
  int template_edge = 32;
  int search_edge = 64;
  int prefix_len = 2;
  int n_reasoning = 1;
  int n_text = 1;
  std::vector<int> fusion_layers = {2, 4, 6, 8};
  int mlp_expansion = 4;
  int text_vocab = 4096;
  double ln_eps = 1e-5;

  int grid_edge() const { return search_edge / patch; }
  int template_grid_edge() const { return template_edge / patch; }
  int n_template_tokens() const { return template_grid_edge() * template_grid_edge(); }
  int n_search_tokens() const { return grid_edge() * grid_edge(); }
  int total_tokens() const { return n_reasoning + n_text + n_template_tokens() + n_search_tokens(); }

  void validate() const;  // throws std::invalid_argument on violation
};

struct TrackerConfig {
  EncoderConfig enc;

  // token fusion
  double gamma = 0.85;   // search-token retention ratio
  double sigma = 0.5;    // fraction of channels exchanged

  // retrieval memory
  int kb_size = 4;
  int retrieve_k = 2;
  double kb_lambda = 1.0;

  // template/description update schedule
  double update_threshold = 0.65;
  int update_interval = 5;

  // loss weights
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;

  // optimization (step size is the desk-scale value; decay matches the source setup)
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;

  std::uint64_t seed = 0;

  void validate() const;
};

std::string config_to_json(const TrackerConfig& cfg);
TrackerConfig config_from_json(const std::string& text);

}  // namespace ragtrack
