#include "ragtrack/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ragtrack {

Tensor ParamStore::add(const std::string& name, Tensor t, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.push_back(Entry{name, t, trainable});
  return t;
}

const Tensor& ParamStore::find(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::int64_t ParamStore::scalar_count(bool trainable_only) const {
  std::int64_t n = 0;
  for (const Entry& e : entries_) {
    if (!trainable_only || e.trainable) n += e.tensor.numel();
  }
  return n;
}

namespace {

// Uniform fan-in initialization; every tensor gets its own slice of the seeded
// stream in registration order, so construction is reproducible.
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(std::vector<int> shape, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = dist(rng_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  Tensor constant(std::vector<int> shape, double value, bool requires_grad = true) {
    return Tensor::full(std::move(shape), value, requires_grad);
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

RagTrackModel::RagTrackModel(const TrackerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  register_params();
}

void RagTrackModel::register_params() {
  const EncoderConfig& e = cfg_.enc;
  const int c = e.channels;
  Init init(cfg_.seed * 0x9e3779b97f4a7c15ULL + 0x51ed2701u);

  auto reg = [&](const std::string& name, Tensor t, bool trainable = true) {
    return store_.add(name, t, trainable);
  };

  const int patch_dim = 3 * e.patch * e.patch;
  patch_.proj_w = reg("patch.proj_w", init.uniform({patch_dim, c}, patch_dim));
  patch_.proj_b = reg("patch.proj_b", init.constant({c}, 0.0));
  pos_template_ = reg("pos.template", init.uniform({e.n_template_tokens(), c}, c));
  pos_search_ = reg("pos.search", init.uniform({e.n_search_tokens(), c}, c));

  text_.table = reg("text.table", init.uniform({e.text_vocab, c}, c));
  text_.prefix = reg("text.prefix", init.uniform({e.prefix_len, c}, c));
  text_.out_w = reg("text.out_w", init.uniform({c, e.n_text * c}, c));
  text_.out_b = reg("text.out_b", init.constant({e.n_text * c}, 0.0));

  layers_.resize(e.layers);
  for (int l = 0; l < e.layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    LayerParams& lp = layers_[l];
    lp.attn.wq = reg(p + "attn.wq", init.uniform({c, c}, c));
    lp.attn.bq = reg(p + "attn.bq", init.constant({c}, 0.0));
    lp.attn.wk = reg(p + "attn.wk", init.uniform({c, c}, c));
    lp.attn.bk = reg(p + "attn.bk", init.constant({c}, 0.0));
    lp.attn.wv = reg(p + "attn.wv", init.uniform({c, c}, c));
    lp.attn.bv = reg(p + "attn.bv", init.constant({c}, 0.0));
    lp.attn.wo = reg(p + "attn.wo", init.uniform({c, c}, c));
    lp.attn.bo = reg(p + "attn.bo", init.constant({c}, 0.0));
    lp.delta1 = reg(p + "delta1", init.constant({1}, 1.0));
    lp.delta2 = reg(p + "delta2", init.constant({1}, 1.0));
    lp.ln1_g = reg(p + "ln1_g", init.constant({c}, 1.0));
    lp.ln1_b = reg(p + "ln1_b", init.constant({c}, 0.0));
    lp.ln2_g = reg(p + "ln2_g", init.constant({c}, 1.0));
    lp.ln2_b = reg(p + "ln2_b", init.constant({c}, 0.0));
    lp.mlp_w1 = reg(p + "mlp_w1", init.uniform({c, e.mlp_expansion * c}, c));
    lp.mlp_b1 = reg(p + "mlp_b1", init.constant({e.mlp_expansion * c}, 0.0));
    lp.mlp_w2 = reg(p + "mlp_w2", init.uniform({e.mlp_expansion * c, c}, e.mlp_expansion * c));
    lp.mlp_b2 = reg(p + "mlp_b2", init.constant({c}, 0.0));
  }

  fusion_.resize(e.fusion_layers.size());
  for (std::size_t f = 0; f < fusion_.size(); ++f) {
    const std::string p = "fusion" + std::to_string(e.fusion_layers[f]) + ".";
    FusionLayerParams& fp = fusion_[f];
    fp.relevance_w_rgb = reg(p + "relevance_w_rgb", init.uniform({c, c}, c));
    fp.relevance_w_tir = reg(p + "relevance_w_tir", init.uniform({c, c}, c));
    fp.fuse_w1 = reg(p + "fuse_w1", init.uniform({c, c}, c));
    fp.fuse_b1 = reg(p + "fuse_b1", init.constant({c}, 0.0));
    fp.fuse_w2 = reg(p + "fuse_w2", init.uniform({c, c}, c));
    fp.fuse_b2 = reg(p + "fuse_b2", init.constant({c}, 0.0));
  }

  auto reg_crm = [&](const std::string& mod, CrmParams& cp) {
    const std::string p = "crm." + mod + ".";
    cp.text_proj_w = reg(p + "text_proj_w", init.uniform({c, c}, c));
    cp.text_proj_b = reg(p + "text_proj_b", init.constant({c}, 0.0));
    cp.refine_wq = reg(p + "refine_wq", init.uniform({c, c}, c));
    cp.refine_wk = reg(p + "refine_wk", init.uniform({c, c}, c));
    cp.refine_wv = reg(p + "refine_wv", init.uniform({c, c}, c));
    cp.prop_w1 = reg(p + "prop_w1", init.uniform({3 * c, c}, 3 * c));
    cp.prop_b1 = reg(p + "prop_b1", init.constant({c}, 0.0));
    cp.prop_w2 = reg(p + "prop_w2", init.uniform({c, e.n_reasoning * c}, c));
    cp.prop_b2 = reg(p + "prop_b2", init.constant({e.n_reasoning * c}, 0.0));
    cp.temp_wq = reg(p + "temp_wq", init.uniform({c, c}, c));
    cp.temp_wk = reg(p + "temp_wk", init.uniform({c, c}, c));
    cp.temp_wv = reg(p + "temp_wv", init.uniform({c, c}, c));
    cp.temp_w1 = reg(p + "temp_w1", init.uniform({c, e.mlp_expansion * c}, c));
    cp.temp_b1 = reg(p + "temp_b1", init.constant({e.mlp_expansion * c}, 0.0));
    cp.temp_w2 = reg(p + "temp_w2", init.uniform({e.mlp_expansion * c, c}, e.mlp_expansion * c));
    cp.temp_b2 = reg(p + "temp_b2", init.constant({c}, 0.0));
    cp.r0 = reg(p + "r0", init.uniform({e.n_reasoning, c}, c));
  };
  reg_crm("rgb", crm_rgb_);
  reg_crm("tir", crm_tir_);

  head_.compress_w = reg("head.compress_w", init.uniform({c, 2 * c}, 2 * c));
  head_.compress_b = reg("head.compress_b", init.constant({c}, 0.0));
  for (int t = 0; t < 4; ++t) {
    const std::string p = "head.trunk" + std::to_string(t + 1) + ".";
    ConvBlockParams& block = head_.trunk[t];
    block.w = reg(p + "w", init.uniform({c, c, 3, 3}, c * 9));
    block.b = reg(p + "b", init.constant({c}, 0.0));
    block.bn_gain = reg(p + "bn_gain", init.constant({c}, 1.0));
    block.bn_bias = reg(p + "bn_bias", init.constant({c}, 0.0));
    block.bn_mean = reg(p + "bn_mean", init.constant({c}, 0.0, false), false);
    block.bn_var = reg(p + "bn_var", init.constant({c}, 1.0, false), false);
  }
  head_.cls_w = reg("head.cls_w", init.uniform({1, c, 3, 3}, c * 9));
  head_.cls_b = reg("head.cls_b", init.constant({1}, 0.0));
  head_.off_w = reg("head.off_w", init.uniform({2, c, 3, 3}, c * 9));
  head_.off_b = reg("head.off_b", init.constant({2}, 0.0));
  head_.size_w = reg("head.size_w", init.uniform({2, c, 3, 3}, c * 9));
  head_.size_b = reg("head.size_b", init.constant({2}, 0.0));
}

const CrmParams& RagTrackModel::crm(Modality m) const {
  return m == Modality::kRgb ? crm_rgb_ : crm_tir_;
}

Tensor RagTrackModel::text_feature(const std::string& description, Modality m, Tape* tape) {
  Tensor raw = encode_text(description, text_, cfg_.enc, tape);
  return project_text_feature(raw, m == Modality::kRgb ? crm_rgb_ : crm_tir_, tape);
}

ForwardResult RagTrackModel::forward_frame(const FrameInputs& in, const CrmState& state,
                                           const KnowledgeBase& kb_rgb,
                                           const KnowledgeBase& kb_tir, Tape* tape) {
  if (!in.tmpl_rgb || !in.tmpl_tir || !in.search_rgb || !in.search_tir) {
    throw std::invalid_argument("forward_frame: missing input image");
  }
  const EncoderConfig& e = cfg_.enc;

  Tensor text_raw = encode_text(in.description, text_, e, tape);
  ForwardResult out;
  out.text_feat_rgb = project_text_feature(text_raw, crm_rgb_, tape);
  out.text_feat_tir = project_text_feature(text_raw, crm_tir_, tape);

  Tensor r_rgb = state.initialized ? state.reasoning_rgb : crm_rgb_.r0;
  Tensor r_tir = state.initialized ? state.reasoning_tir : crm_tir_.r0;

  Tensor z_rgb = patch_embed(*in.tmpl_rgb, e.patch, patch_, pos_template_, tape);
  Tensor z_tir = patch_embed(*in.tmpl_tir, e.patch, patch_, pos_template_, tape);
  Tensor x_rgb = patch_embed(*in.search_rgb, e.patch, patch_, pos_search_, tape);
  Tensor x_tir = patch_embed(*in.search_tir, e.patch, patch_, pos_search_, tape);

  TokenSequence seq_rgb = build_sequence(r_rgb, out.text_feat_rgb, z_rgb, x_rgb, Modality::kRgb, tape);
  TokenSequence seq_tir = build_sequence(r_tir, out.text_feat_tir, z_tir, x_tir, Modality::kTir, tape);

  FusionHook hook = make_atf_hook(cfg_.gamma, cfg_.sigma, fusion_, out.meta);
  EncoderOutput enc = forward_encoder(seq_rgb, seq_tir, layers_, e, hook, tape);
  out.tokens_kept = enc.rgb.x_len();

  auto run_crm = [&](const TokenSequence& seq, const CrmParams& cp, const KnowledgeBase& kb,
                     const Tensor& query) {
    std::vector<KbEntry> retrieved = kb.retrieve(query, cfg_.retrieve_k);
    Tensor refined = refine_search(seq.x_segment(tape), retrieved, cp, tape);
    Tensor r_next = propagate_reasoning(seq.r_segment(tape), seq.h_segment(tape),
                                        seq.z_segment(tape), cp, tape);
    auto augmented = temporal_augment(r_next, refined, cp, tape);
    return std::make_pair(augmented.second, r_next);
  };

  auto [x_tilde_rgb, r_next_rgb] = run_crm(enc.rgb, crm_rgb_, kb_rgb, out.text_feat_rgb);
  auto [x_tilde_tir, r_next_tir] = run_crm(enc.tir, crm_tir_, kb_tir, out.text_feat_tir);

  out.next_state.reasoning_rgb = r_next_rgb.detach();
  out.next_state.reasoning_tir = r_next_tir.detach();
  out.next_state.initialized = true;

  out.maps = head_forward(x_tilde_rgb, x_tilde_tir, out.meta, head_, e.grid_edge(), in.training,
                          tape);
  out.box = decode_bbox(out.maps);
  if (tape != nullptr) out.box_grad = decode_bbox_grad(out.maps, tape);
  return out;
}

RagTrackModel RagTrackModel::clone() const {
  RagTrackModel copy(cfg_);
  copy.copy_data_from(*this);
  return copy;
}

void RagTrackModel::copy_data_from(const RagTrackModel& other) {
  const auto& src = other.store_.entries();
  const auto& dst = store_.entries();
  if (src.size() != dst.size()) throw std::logic_error("parameter stores differ in size");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.numel() != dst[i].tensor.numel()) {
      throw std::logic_error("parameter stores differ at " + src[i].name);
    }
    Tensor d = dst[i].tensor;  // shares storage with the registered tensor
    std::copy(src[i].tensor.data(), src[i].tensor.data() + src[i].tensor.numel(), d.data());
  }
}

}  // namespace ragtrack
