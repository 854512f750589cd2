#include "ragtrack/config.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace ragtrack {

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (channels <= 0 || layers <= 0 || heads <= 0 || patch <= 0) fail("non-positive core dimension");
  if (channels % heads != 0) fail("channels must be divisible by heads");
  if (template_edge % patch != 0) fail("template_edge must be divisible by patch");
  if (search_edge % patch != 0) fail("search_edge must be divisible by patch");
  if (prefix_len <= 0) fail("prefix_len must be positive");
  if (n_reasoning < 1 || n_text < 1) fail("reasoning/text token counts must be at least 1");
  if (text_vocab <= 0) fail("text_vocab must be positive");
  if (mlp_expansion <= 0) fail("mlp_expansion must be positive");
  int g = template_grid_edge();
  if (g * g != n_template_tokens()) fail("template grid must be square");
  if (fusion_layers.empty()) fail("fusion_layers must be non-empty");
  if (!std::is_sorted(fusion_layers.begin(), fusion_layers.end())) fail("fusion_layers must be sorted");
  for (std::size_t i = 1; i < fusion_layers.size(); ++i)
    if (fusion_layers[i] == fusion_layers[i - 1]) fail("fusion_layers must be distinct");
  for (int l : fusion_layers)
    if (l < 1 || l > layers) fail("fusion layer index " + std::to_string(l) + " outside 1.." + std::to_string(layers));
}

void TrackerConfig::validate() const {
  enc.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0, 1]");
  if (!(sigma >= 0.0 && sigma <= 1.0)) fail("sigma must be in [0, 1]");
  if (kb_size < 1) fail("kb_size must be at least 1");
  if (retrieve_k < 1) fail("retrieve_k must be at least 1");
  if (!(kb_lambda >= -1.0 && kb_lambda <= 1.0)) fail("kb_lambda must be a valid cosine threshold");
  if (update_interval < 1) fail("update_interval must be at least 1");
  if (lambda_iou < 0.0 || lambda_l1 < 0.0) fail("loss weights must be non-negative");
  if (learning_rate <= 0.0) fail("learning_rate must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
}

std::string config_to_json(const TrackerConfig& cfg) {
  nlohmann::json j;
  j["channels"] = cfg.enc.channels;
  j["layers"] = cfg.enc.layers;
  j["heads"] = cfg.enc.heads;
  j["patch"] = cfg.enc.patch;
  j["template_edge"] = cfg.enc.template_edge;
  j["search_edge"] = cfg.enc.search_edge;
  j["prefix_len"] = cfg.enc.prefix_len;
  j["n_reasoning"] = cfg.enc.n_reasoning;
  j["n_text"] = cfg.enc.n_text;
  j["fusion_layers"] = cfg.enc.fusion_layers;
  j["mlp_expansion"] = cfg.enc.mlp_expansion;
  j["text_vocab"] = cfg.enc.text_vocab;
  j["ln_eps"] = cfg.enc.ln_eps;
  j["gamma"] = cfg.gamma;
  j["sigma"] = cfg.sigma;
  j["kb_size"] = cfg.kb_size;
  j["retrieve_k"] = cfg.retrieve_k;
  j["kb_lambda"] = cfg.kb_lambda;
  j["update_threshold"] = cfg.update_threshold;
  j["update_interval"] = cfg.update_interval;
  j["lambda_iou"] = cfg.lambda_iou;
  j["lambda_l1"] = cfg.lambda_l1;
  j["learning_rate"] = cfg.learning_rate;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

TrackerConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: bad JSON: ") + e.what());
  }
  TrackerConfig cfg;
  auto get = [&j](const char* key, auto& into) {
    if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
  };
  get("channels", cfg.enc.channels);
  get("layers", cfg.enc.layers);
  get("heads", cfg.enc.heads);
  get("patch", cfg.enc.patch);
  get("template_edge", cfg.enc.template_edge);
  get("search_edge", cfg.enc.search_edge);
  get("prefix_len", cfg.enc.prefix_len);
  get("n_reasoning", cfg.enc.n_reasoning);
  get("n_text", cfg.enc.n_text);
  get("fusion_layers", cfg.enc.fusion_layers);
  get("mlp_expansion", cfg.enc.mlp_expansion);
  get("text_vocab", cfg.enc.text_vocab);
  get("ln_eps", cfg.enc.ln_eps);
  get("gamma", cfg.gamma);
  get("sigma", cfg.sigma);
  get("kb_size", cfg.kb_size);
  get("retrieve_k", cfg.retrieve_k);
  get("kb_lambda", cfg.kb_lambda);
  get("update_threshold", cfg.update_threshold);
  get("update_interval", cfg.update_interval);
  get("lambda_iou", cfg.lambda_iou);
  get("lambda_l1", cfg.lambda_l1);
  get("learning_rate", cfg.learning_rate);
  get("weight_decay", cfg.weight_decay);
  get("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

}  // namespace ragtrack
