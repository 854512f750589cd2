// Tracking metric tests: hand-geometry oracles for overlap and center error,
// enumerated threshold curves, and randomized property checks against
// brute-force recomputation.

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ragtrack/metrics.hpp"

using namespace ragtrack;

namespace {

PixelBox rand_box(std::mt19937_64& rng, double span = 100.0) {
  std::uniform_real_distribution<double> pos(0.0, span);
  std::uniform_real_distribution<double> ext(1.0, span / 3.0);
  return PixelBox{pos(rng), pos(rng), ext(rng), ext(rng)};
}

double iou_oracle(const PixelBox& a, const PixelBox& b) {
  const double x0 = std::max(a.x, b.x);
  const double y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.x + a.w, b.x + b.w);
  const double y1 = std::min(a.y + a.h, b.y + b.h);
  const double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  return std::min(1.0, inter / (a.w * a.h + b.w * b.h - inter));
}

double sr_oracle(const std::vector<double>& ious) {
  double acc = 0.0;
  for (int t = 0; t <= 20; ++t) {
    int hits = 0;
    for (double v : ious)
      if (v > t * 0.05) ++hits;
    acc += static_cast<double>(hits) / ious.size();
  }
  return acc / 21.0;
}

}  // namespace

TEST_CASE("overlap ratio") {
  PixelBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  PixelBox far{10, 10, 2, 2};
  CHECK(iou(a, far) == 0.0);
  PixelBox shifted{1, 1, 2, 2};  // overlap 1, union 7
  CHECK(iou(a, shifted) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou(shifted, a) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));

  CHECK_THROWS(iou(PixelBox{0, 0, 0, 2}, a));
  CHECK_THROWS(iou(a, PixelBox{0, 0, 2, -1}));

  std::mt19937_64 rng(97);
  for (int trial = 0; trial < 300; ++trial) {
    PixelBox p = rand_box(rng), q = rand_box(rng);
    const double v = iou(p, q);
    CHECK(v == doctest::Approx(iou_oracle(p, q)).epsilon(1e-14));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(q, p) == v);
    // self-overlap stays in range even though the corner sums round
    const double self = iou(p, p);
    CHECK(self <= 1.0);
    CHECK(self > 1.0 - 1e-12);
  }
}

TEST_CASE("center distance") {
  PixelBox a{0, 0, 4, 4};
  CHECK(center_error(a, a) == 0.0);
  PixelBox moved{3, 4, 4, 4};
  CHECK(center_error(a, moved) == 5.0);

  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    PixelBox p = rand_box(rng), q = rand_box(rng);
    const double dx = (p.x + p.w / 2) - (q.x + q.w / 2);
    const double dy = (p.y + p.h / 2) - (q.y + q.h / 2);
    CHECK(center_error(p, q) == doctest::Approx(std::sqrt(dx * dx + dy * dy)).epsilon(1e-14));
  }
}

TEST_CASE("precision over a pixel threshold") {
  CHECK(precision_rate({0.0, 0.0, 0.0}) == 1.0);
  CHECK(precision_rate({5.0, 25.0}, 20.0) == 0.5);
  CHECK(precision_rate({5.0, 20.0}, 20.0) == 1.0);  // boundary counts
  CHECK(precision_rate({30.0, 40.0}, 20.0) == 0.0);
  CHECK_THROWS(precision_rate({}, 20.0));
}

TEST_CASE("success curve area") {
  CHECK(success_rate({1.0, 1.0, 1.0}) == doctest::Approx(20.0 / 21.0).epsilon(1e-12));
  CHECK(success_rate({0.0, 0.0}) == 0.0);
  // a single 0.5 overlap beats the ten thresholds 0.00 .. 0.45
  CHECK(success_rate({0.5}) == doctest::Approx(10.0 / 21.0).epsilon(1e-12));
  CHECK_THROWS(success_rate({}));

  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> len(1, 30);
    std::vector<double> ious(len(rng));
    for (auto& v : ious) v = ud(rng);
    CHECK(success_rate(ious) == doctest::Approx(sr_oracle(ious)).epsilon(1e-14));
  }
}

TEST_CASE("extent-normalized precision") {
  std::vector<PixelBox> gt = {{10, 10, 20, 10}};
  CHECK(norm_precision_rate(gt, gt) == 1.0);

  // center off by a tenth of the gt width: normalized error 0.1, inside 0.2
  std::vector<PixelBox> near = {{12, 10, 20, 10}};
  CHECK(norm_precision_rate(near, gt) == 1.0);

  // center off by one full extent per axis: sqrt(2) > 0.2
  std::vector<PixelBox> off = {{30, 20, 20, 10}};
  CHECK(norm_precision_rate(off, gt) == 0.0);

  CHECK_THROWS(norm_precision_rate({}, {}));
  CHECK_THROWS(norm_precision_rate(near, {{10, 10, 0, 10}}));
  CHECK_THROWS(norm_precision_rate(near, {{0, 0, 4, 4}, {0, 0, 4, 4}}));

  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> len(1, 12);
    const int n = len(rng);
    std::vector<PixelBox> p(n), g(n);
    for (int i = 0; i < n; ++i) {
      p[i] = rand_box(rng, 40.0);
      g[i] = rand_box(rng, 40.0);
    }
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      const double ex = (p[i].cx() - g[i].cx()) / g[i].w;
      const double ey = (p[i].cy() - g[i].cy()) / g[i].h;
      if (std::sqrt(ex * ex + ey * ey) <= 0.2) ++hits;
    }
    CHECK(norm_precision_rate(p, g) ==
          doctest::Approx(static_cast<double>(hits) / n).epsilon(1e-14));
  }
}

TEST_CASE("best metrics across annotation streams") {
  std::mt19937_64 rng(109);
  std::vector<PixelBox> pred(5), gt1(5), gt2(5);
  for (int i = 0; i < 5; ++i) {
    pred[i] = rand_box(rng);
    gt1[i] = rand_box(rng);
    gt2[i] = pred[i];  // stream 2 matches exactly
  }

  auto single = max_metrics(pred, {gt1});
  std::vector<double> errs(5), ovs(5);
  for (int i = 0; i < 5; ++i) {
    errs[i] = center_error(pred[i], gt1[i]);
    ovs[i] = iou(pred[i], gt1[i]);
  }
  CHECK(single.first == precision_rate(errs));
  CHECK(single.second == success_rate(ovs));

  auto both = max_metrics(pred, {gt1, gt2});
  CHECK(both.first == 1.0);
  CHECK(both.second == doctest::Approx(20.0 / 21.0).epsilon(1e-12));

  CHECK_THROWS(max_metrics(pred, {}));
  CHECK_THROWS(max_metrics(pred, {{rand_box(rng)}}));

  // elementwise max of independently computed per-stream metrics
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> len(1, 10);
    const int n = len(rng);
    std::vector<PixelBox> p(n), a(n), b(n);
    for (int i = 0; i < n; ++i) {
      p[i] = rand_box(rng, 30.0);
      a[i] = rand_box(rng, 30.0);
      b[i] = rand_box(rng, 30.0);
    }
    auto got = max_metrics(p, {a, b});
    double pr_a, pr_b, sr_a, sr_b;
    {
      std::vector<double> e(n), o(n);
      for (int i = 0; i < n; ++i) {
        e[i] = center_error(p[i], a[i]);
        o[i] = iou(p[i], a[i]);
      }
      pr_a = precision_rate(e);
      sr_a = sr_oracle(o);
    }
    {
      std::vector<double> e(n), o(n);
      for (int i = 0; i < n; ++i) {
        e[i] = center_error(p[i], b[i]);
        o[i] = iou(p[i], b[i]);
      }
      pr_b = precision_rate(e);
      sr_b = sr_oracle(o);
    }
    CHECK(got.first == doctest::Approx(std::max(pr_a, pr_b)).epsilon(1e-14));
    CHECK(got.second == doctest::Approx(std::max(sr_a, sr_b)).epsilon(1e-14));
  }
}
