#include "ragtrack/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ragtrack/config.hpp"
#include "ragtrack/crm.hpp"
#include "ragtrack/encoder.hpp"
#include "ragtrack/fusion.hpp"
#include "ragtrack/head.hpp"
#include "ragtrack/metrics.hpp"
#include "ragtrack/tensor.hpp"

namespace ragtrack {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Reference selection: full sort with explicit tie rule, then index order.
std::vector<int> selection_oracle(const std::vector<double>& scores, int keep) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

bool check_selection(int cases, std::string& detail, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size_dist(4, 256);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  std::uniform_real_distribution<double> gdist(0.05, 1.0);
  for (int c = 0; c < cases; ++c) {
    const int n = size_dist(rng);
    std::vector<double> scores(n);
    for (double& s : scores) s = val(rng);
    // Inject ties by copying values around.
    std::uniform_int_distribution<int> idx(0, n - 1);
    for (int t = 0; t < n / 4; ++t) scores[idx(rng)] = scores[idx(rng)];
    const double gamma = gdist(rng);
    SelectionResult got = select_tokens(scores, gamma);
    const int keep = std::min(std::max(static_cast<int>(std::ceil(gamma * n)), 1), n);
    std::vector<int> want = selection_oracle(scores, keep);
    if (got.kept != want) {
      detail = "case " + std::to_string(c) + ": size " + std::to_string(n) + " gamma " +
               fmt(gamma) + " mismatch";
      return false;
    }
  }
  return true;
}

bool check_exchange(int cases, std::string& detail, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ndist(2, 12);
  std::uniform_int_distribution<int> cdist(2, 16);
  std::uniform_real_distribution<double> val(-3.0, 3.0);
  for (int c = 0; c < cases; ++c) {
    const int n = ndist(rng), ch = cdist(rng);
    auto rand_mat = [&]() {
      std::vector<double> v(static_cast<std::size_t>(n) * ch);
      for (double& x : v) x = val(rng);
      return Tensor::from({n, ch}, std::move(v));
    };
    Tensor a = rand_mat(), b = rand_mat();
    std::vector<int> chans;
    for (int k = 0; k < ch; ++k) {
      if (rng() % 2 == 0) chans.push_back(k);
    }
    ExchangePlan plan{chans, 0.0};
    auto [ax, bx] = exchange_channels(a, b, plan);

    // Multiset across both tensors is preserved.
    std::vector<double> before(a.data(), a.data() + a.numel());
    before.insert(before.end(), b.data(), b.data() + b.numel());
    std::vector<double> after(ax.data(), ax.data() + ax.numel());
    after.insert(after.end(), bx.data(), bx.data() + bx.numel());
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());
    if (before != after) {
      detail = "value multiset changed (case " + std::to_string(c) + ")";
      return false;
    }

    // Double application restores the originals exactly.
    auto [a2, b2] = exchange_channels(ax, bx, plan);
    if (!std::equal(a2.data(), a2.data() + a2.numel(), a.data()) ||
        !std::equal(b2.data(), b2.data() + b2.numel(), b.data())) {
      detail = "double swap is not the identity (case " + std::to_string(c) + ")";
      return false;
    }

    // Ratio edge cases through the planner.
    Tensor rel = channel_relevance(a, b, Tensor::from({ch, ch}, std::vector<double>(ch * ch, 0.1)),
                                   Tensor::from({ch, ch}, std::vector<double>(ch * ch, 0.2)));
    ExchangePlan none = plan_exchange(rel, 0.0);
    ExchangePlan all = plan_exchange(rel, 1.0);
    auto [an, bn] = exchange_channels(a, b, none);
    auto [aa, ba] = exchange_channels(a, b, all);
    if (!std::equal(an.data(), an.data() + an.numel(), a.data()) ||
        !std::equal(bn.data(), bn.data() + bn.numel(), b.data())) {
      detail = "empty plan moved values";
      return false;
    }
    if (!std::equal(aa.data(), aa.data() + aa.numel(), b.data()) ||
        !std::equal(ba.data(), ba.data() + ba.numel(), a.data())) {
      detail = "full plan is not a total swap";
      return false;
    }
  }
  return true;
}

bool check_kb(int ops, std::string& detail, std::mt19937_64& rng) {
  const int dim = 6;
  KnowledgeBase kb(4, 1.0);
  std::vector<std::pair<std::vector<double>, long long>> shadow;  // feature, stamp
  long long stamp = 0;
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 3);

  auto rand_vec = [&]() {
    std::vector<double> v(dim);
    for (double& x : v) x = val(rng);
    return v;
  };
  auto cosine = [&](const std::vector<double>& x, const std::vector<double>& y) {
    return cosine_similarity(Tensor::from({1, dim}, x), Tensor::from({1, dim}, y));
  };

  for (int op = 0; op < ops; ++op) {
    if (coin(rng) != 0) {
      std::vector<double> v;
      bool force_dup = !shadow.empty() && coin(rng) == 1;
      if (force_dup) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(shadow.size()) - 1);
        v = shadow[pick(rng)].first;
      } else {
        v = rand_vec();
      }
      bool accepted = kb.insert(Tensor::from({1, dim}, v), "t" + std::to_string(op));
      bool expect = true;
      for (const auto& [f, st] : shadow) {
        if (cosine(f, v) >= 1.0) expect = false;
      }
      if (expect) {
        if (shadow.size() == 4) shadow.erase(shadow.begin());
        shadow.push_back({v, stamp++});
      }
      if (accepted != expect) {
        detail = "insert gate disagreed at op " + std::to_string(op);
        return false;
      }
      if (force_dup && accepted) {
        detail = "duplicate accepted at op " + std::to_string(op);
        return false;
      }
    } else if (!shadow.empty()) {
      std::vector<double> q = rand_vec();
      std::uniform_int_distribution<int> kdist(0, 5);
      const int k = kdist(rng);
      auto got = kb.retrieve(Tensor::from({1, dim}, q), k);
      // Exhaustive-scan oracle with the recency tie rule.
      std::vector<int> order(shadow.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> sim(shadow.size());
      for (std::size_t i = 0; i < shadow.size(); ++i) sim[i] = cosine(shadow[i].first, q);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sim[a] != sim[b]) return sim[a] > sim[b];
        return shadow[a].second > shadow[b].second;
      });
      const int take = std::min<int>(k, static_cast<int>(order.size()));
      if (static_cast<int>(got.size()) != take) {
        detail = "retrieve count mismatch at op " + std::to_string(op);
        return false;
      }
      for (int i = 0; i < take; ++i) {
        const auto& want = shadow[order[i]].first;
        const double* have = got[i].feature.data();
        if (!std::equal(want.begin(), want.end(), have)) {
          detail = "retrieve order mismatch at op " + std::to_string(op);
          return false;
        }
      }
    }
    if (kb.size() > 4) {
      detail = "capacity exceeded at op " + std::to_string(op);
      return false;
    }
  }
  return true;
}

bool check_metrics(int cases, std::string& detail, std::mt19937_64& rng) {
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };

  // Hand geometry and enumerations.
  PixelBox b1{0, 0, 2, 2}, b2{1, 1, 2, 2};
  if (!near(iou(b1, b2), 1.0 / 7.0)) {
    detail = "overlap hand value: " + fmt(iou(b1, b2));
    return false;
  }
  if (!near(center_error(PixelBox{0, 0, 2, 2}, PixelBox{3, 4, 2, 2}), 5.0)) {
    detail = "3-4-5 center distance failed";
    return false;
  }
  if (!near(success_rate({1.0, 1.0, 1.0}), 20.0 / 21.0)) {
    detail = "all-perfect success curve: " + fmt(success_rate({1.0, 1.0, 1.0}));
    return false;
  }
  if (!near(precision_rate({5.0, 25.0}, 20.0), 0.5)) {
    detail = "precision hand count failed";
    return false;
  }

  std::uniform_real_distribution<double> pos(0.0, 100.0);
  std::uniform_real_distribution<double> ext(1.0, 30.0);
  std::uniform_int_distribution<int> len_dist(1, 12);
  for (int c = 0; c < cases; ++c) {
    const int len = len_dist(rng);
    std::vector<PixelBox> pred(len), gt(len), alt(len);
    std::vector<double> errors(len), ious(len);
    for (int i = 0; i < len; ++i) {
      pred[i] = {pos(rng), pos(rng), ext(rng), ext(rng)};
      gt[i] = {pos(rng), pos(rng), ext(rng), ext(rng)};
      alt[i] = {pos(rng), pos(rng), ext(rng), ext(rng)};
      errors[i] = center_error(pred[i], gt[i]);
      ious[i] = iou(pred[i], gt[i]);
    }

    // Success AUC by direct enumeration.
    double acc = 0.0;
    for (int ti = 0; ti <= 20; ++ti) {
      const double thr = 0.05 * ti;
      int hits = 0;
      for (double v : ious) {
        if (v > thr) ++hits;
      }
      acc += static_cast<double>(hits) / len;
    }
    if (!near(success_rate(ious), acc / 21.0)) {
      detail = "success AUC mismatch (case " + std::to_string(c) + ")";
      return false;
    }

    // Precision by direct count.
    int hits = 0;
    for (double v : errors) {
      if (v <= 20.0) ++hits;
    }
    if (!near(precision_rate(errors, 20.0), static_cast<double>(hits) / len)) {
      detail = "precision mismatch (case " + std::to_string(c) + ")";
      return false;
    }

    // Normalized precision by direct recomputation.
    int nhits = 0;
    for (int i = 0; i < len; ++i) {
      const double nx = (pred[i].cx() - gt[i].cx()) / gt[i].w;
      const double ny = (pred[i].cy() - gt[i].cy()) / gt[i].h;
      if (std::sqrt(nx * nx + ny * ny) <= 0.2) ++nhits;
    }
    if (!near(norm_precision_rate(pred, gt, 0.2), static_cast<double>(nhits) / len)) {
      detail = "normalized precision mismatch (case " + std::to_string(c) + ")";
      return false;
    }

    // Max-over-streams equals the elementwise max of separate computations.
    auto [mpr, msr] = max_metrics(pred, {gt, alt}, 20.0);
    std::vector<double> e2(len), i2(len);
    for (int i = 0; i < len; ++i) {
      e2[i] = center_error(pred[i], alt[i]);
      i2[i] = iou(pred[i], alt[i]);
    }
    const double want_mpr = std::max(precision_rate(errors, 20.0), precision_rate(e2, 20.0));
    const double want_msr = std::max(success_rate(ious), success_rate(i2));
    if (!near(mpr, want_mpr) || !near(msr, want_msr)) {
      detail = "stream-max mismatch (case " + std::to_string(c) + ")";
      return false;
    }
  }
  return true;
}

bool check_identities(std::string& detail, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> val(-2.0, 2.0);

  // Empty memory: refinement returns its input tensor, not a copy.
  {
    std::vector<double> v(5 * 8);
    for (double& x : v) x = val(rng);
    Tensor search = Tensor::from({5, 8}, std::move(v));
    CrmParams cp;
    cp.refine_wq = Tensor::zeros({8, 8});
    cp.refine_wk = Tensor::zeros({8, 8});
    cp.refine_wv = Tensor::zeros({8, 8});
    Tensor out = refine_search(search, {}, cp);
    if (!out.same_impl(search)) {
      detail = "empty-memory refinement copied its input";
      return false;
    }
  }

  // Zero residual scales with zero norm bias: encoder layer is exact identity.
  {
    EncoderConfig cfg;
    cfg.channels = 16;
    cfg.heads = 2;
    const int c = cfg.channels;
    LayerParams lp;
    auto randm = [&](int r, int cc) {
      std::vector<double> v(static_cast<std::size_t>(r) * cc);
      for (double& x : v) x = val(rng);
      return Tensor::from({r, cc}, std::move(v));
    };
    lp.attn.wq = randm(c, c);
    lp.attn.bq = Tensor::zeros({c});
    lp.attn.wk = randm(c, c);
    lp.attn.bk = Tensor::zeros({c});
    lp.attn.wv = randm(c, c);
    lp.attn.bv = Tensor::zeros({c});
    lp.attn.wo = randm(c, c);
    lp.attn.bo = Tensor::zeros({c});
    lp.delta1 = Tensor::zeros({1});
    lp.delta2 = Tensor::zeros({1});
    lp.ln1_g = Tensor::full({c}, 1.0);
    lp.ln1_b = Tensor::zeros({c});
    lp.ln2_g = Tensor::full({c}, 1.0);
    lp.ln2_b = Tensor::zeros({c});
    lp.mlp_w1 = randm(c, 4 * c);
    lp.mlp_b1 = Tensor::zeros({4 * c});
    lp.mlp_w2 = randm(4 * c, c);
    lp.mlp_b2 = Tensor::zeros({c});

    TokenSequence seq = build_sequence(randm(1, c), randm(1, c), randm(4, c), randm(4, c),
                                       Modality::kRgb);
    auto [out, rec] = encoder_layer(seq, lp, cfg);
    if (!std::equal(out.tokens.data(), out.tokens.data() + out.tokens.numel(),
                    seq.tokens.data())) {
      detail = "zero-scale layer changed its input";
      return false;
    }
  }
  return true;
}

bool check_losses(std::string& detail) {
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };

  // Decode substitution example on an 8x8 grid.
  {
    std::vector<double> cls(64, 0.0);
    cls[3 * 8 + 5] = 1.0;
    PredictionMaps maps;
    maps.cls = Tensor::from({1, 8, 8}, std::move(cls));
    maps.off = Tensor::full({2, 8, 8}, 0.5);
    maps.size = Tensor::full({2, 8, 8}, 0.25);
    BBox b = decode_bbox(maps);
    if (!near(b.x, 3.5) || !near(b.y, 5.5) || !near(b.w, 0.25) || !near(b.h, 0.25)) {
      detail = "decode substitution example failed";
      return false;
    }
  }

  // Corner boxes [0,0,2,2] vs [1,1,2,2]: overlap loss 1 - (1/7 - 2/9).
  {
    const int grid = 8;
    BBox p{1.0, 1.0, 2.0 / grid, 2.0 / grid};
    BBox g{2.0, 2.0, 2.0 / grid, 2.0 / grid};
    const double got = giou_loss_plain(p, g, grid);
    const double want = 1.0 - (1.0 / 7.0 - 2.0 / 9.0);
    if (!near(got, want)) {
      detail = "overlap-loss hand geometry: " + fmt(got) + " vs " + fmt(want);
      return false;
    }
  }

  // Component combination with the default weights.
  {
    Tensor one = Tensor::scalar(1.0);
    const double got = combine_loss(one, one, one, 2.0, 5.0).value();
    if (got != 8.0) {
      detail = "unit components with weights (2, 5) gave " + fmt(got);
      return false;
    }
  }
  return true;
}

bool check_config(std::string& detail) {
  TrackerConfig cfg;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok && detail.empty()) detail = "default mismatch: " + what;
    return ok;
  };
  bool pass = true;
  pass &= expect(cfg.gamma == 0.85, "retention ratio");
  pass &= expect(cfg.sigma == 0.5, "exchange ratio");
  pass &= expect(cfg.kb_size == 4, "memory capacity");
  pass &= expect(cfg.retrieve_k == 2, "retrieval count");
  pass &= expect(cfg.kb_lambda == 1.0, "similarity threshold");
  pass &= expect(cfg.enc.n_reasoning == 1, "reasoning tokens");
  pass &= expect(cfg.enc.n_text == 1, "text tokens");
  pass &= expect(cfg.update_threshold == 0.65, "update threshold");
  pass &= expect(cfg.update_interval == 5, "update interval");
  pass &= expect(cfg.lambda_iou == 2.0, "overlap weight");
  pass &= expect(cfg.lambda_l1 == 5.0, "l1 weight");
  return pass;
}

}  // namespace

std::vector<CheckResult> run_selftest(bool thorough) {
  std::vector<CheckResult> results;
  auto run = [&](const std::string& name, auto&& fn) {
    CheckResult r;
    r.name = name;
    try {
      r.pass = fn(r.detail);
    } catch (const std::exception& ex) {
      r.pass = false;
      r.detail = std::string("exception: ") + ex.what();
    }
    results.push_back(std::move(r));
  };

  const int sel_cases = thorough ? 1000 : 200;
  const int ex_cases = thorough ? 500 : 100;
  const int kb_ops = thorough ? 10000 : 2000;
  const int met_cases = thorough ? 1000 : 200;

  run("token selection vs sort oracle", [&](std::string& d) {
    std::mt19937_64 rng(11);
    return check_selection(sel_cases, d, rng);
  });
  run("channel exchange invariants", [&](std::string& d) {
    std::mt19937_64 rng(12);
    return check_exchange(ex_cases, d, rng);
  });
  run("memory vs exhaustive scan", [&](std::string& d) {
    std::mt19937_64 rng(13);
    return check_kb(kb_ops, d, rng);
  });
  run("metric oracles", [&](std::string& d) {
    std::mt19937_64 rng(14);
    return check_metrics(met_cases, d, rng);
  });
  run("degenerate-path identities", [&](std::string& d) {
    std::mt19937_64 rng(15);
    return check_identities(d, rng);
  });
  run("loss hand values", [&](std::string& d) { return check_losses(d); });
  run("configuration defaults", [&](std::string& d) { return check_config(d); });
  return results;
}

}  // namespace ragtrack
