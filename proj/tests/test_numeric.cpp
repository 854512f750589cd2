// Oracle and property tests for the tensor library: hand values, independent
// reimplementation oracles, and finite-difference gradient checks per op.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "doctest.h"
#include "ragtrack/tensor.hpp"

using namespace ragtrack;

namespace {

Tensor rand_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.5,
                   double hi = 1.5, double keep_away = 0.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) {
    do {
      x = d(rng);
    } while (std::abs(x) < keep_away);
  }
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar loss wrapper so wrong gradients cannot cancel: sum(out .* W) with a
// fixed random weighting W.
Tensor weighted_sum(const Tensor& out, const Tensor& w, Tape* tape) {
  return sum_all(mul(out, w, tape), tape);
}

// Max relative error between tape gradients and central finite differences,
// over every component of every input tensor.
double fd_max_rel_err(const std::function<Tensor(std::vector<Tensor>&, Tape*)>& f,
                      const std::vector<Tensor>& base, double h = 1e-5) {
  std::vector<Tensor> live;
  live.reserve(base.size());
  for (const Tensor& b : base) {
    Tensor t = b.clone();
    t.set_requires_grad(true);
    live.push_back(t);
  }
  Tape tape;
  Tensor loss = f(live, &tape);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double* g = live[i].grad();
    for (std::int64_t k = 0; k < base[i].numel(); ++k) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe;
        probe.reserve(base.size());
        for (const Tensor& b : base) probe.push_back(b.clone());
        probe[i].data()[k] += delta;
        return f(probe, nullptr).value();
      };
      const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      const double denom = std::max({std::abs(g[k]), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(g[k] - fd) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor construction and shape bookkeeping") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.ndim() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS(Tensor::zeros({0, 4}));
  CHECK_THROWS(Tensor::zeros({}));
  CHECK_THROWS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}));

  Tensor s = Tensor::scalar(7.5);
  CHECK(s.numel() == 1);
  CHECK(s.value() == 7.5);

  Tensor c = t.clone();
  c.data()[0] = 99.0;
  CHECK(t.at(0, 0) == 1.0);  // deep copy

  Tensor alias = t;
  alias.data()[0] = 42.0;
  CHECK(t.at(0, 0) == 42.0);  // shared handle
}

TEST_CASE("matmul hand values and triple-loop oracle") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == a.data()[i]);

  Tensor z = Tensor::zeros({2, 2});
  Tensor rz = matmul(a, z);
  for (int i = 0; i < 4; ++i) CHECK(rz.data()[i] == 0.0);

  CHECK_THROWS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})));

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor y = rand_tensor({4, 2}, rng);
    Tensor got = matmul(x, y);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += x.at(i, k) * y.at(k, j);
        CHECK(got.at(i, j) == acc);  // bit-for-bit, same accumulation order
      }
  }
}

TEST_CASE("softmax rows: uniformity, stabilization, row sums") {
  Tensor u = softmax_rows(Tensor::from({1, 4}, {3.3, 3.3, 3.3, 3.3}));
  for (int j = 0; j < 4; ++j) CHECK(u.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));

  Tensor s = softmax_rows(Tensor::from({1, 2}, {1000.0, 0.0}));
  CHECK(std::isfinite(s.at(0, 0)));
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(0, 1) < 1e-300);

  std::mt19937_64 rng(7);
  Tensor r = softmax_rows(rand_tensor({5, 7}, rng, -30.0, 30.0));
  for (int i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) {
      CHECK(r.at(i, j) >= 0.0);
      CHECK(r.at(i, j) <= 1.0);
      sum += r.at(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer norm: degenerate vectors and pre-affine moments") {
  Tensor g1 = Tensor::from({3}, {1, 1, 1});
  Tensor b0 = Tensor::zeros({3});
  Tensor c = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), g1, b0, 1e-5);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(c.at(0, j)) < 1e-9);

  Tensor g2 = Tensor::from({2}, {1, 1});
  Tensor z2 = Tensor::zeros({2});
  Tensor pm = layer_norm(Tensor::from({1, 2}, {-1, 1}), g2, z2, 1e-5);
  CHECK(pm.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(pm.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));

  std::mt19937_64 rng(11);
  Tensor gain = Tensor::from({8}, std::vector<double>(8, 1.0));
  Tensor bias = Tensor::zeros({8});
  Tensor x = rand_tensor({4, 8}, rng, -3.0, 3.0);
  Tensor y = layer_norm(x, gain, bias, 1e-5);
  for (int i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 8; ++j) mean += y.at(i, j);
    mean /= 8.0;
    for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 8.0;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(var >= 1.0 - 1e-4);
    CHECK(var <= 1.0 + 1e-12);
  }
}

TEST_CASE("mlp2 equals its two-matmul re-expression") {
  std::mt19937_64 rng(13);
  Tensor x = rand_tensor({3, 4}, rng);
  Tensor w1 = rand_tensor({4, 16}, rng);
  Tensor b1 = rand_tensor({16}, rng);
  Tensor w2 = rand_tensor({16, 4}, rng);
  Tensor b2 = rand_tensor({4}, rng);

  Tensor direct = mlp2(x, w1, b1, w2, b2);
  Tensor again = linear(gelu(linear(x, w1, b1)), w2, b2);
  for (std::int64_t i = 0; i < direct.numel(); ++i)
    CHECK(direct.data()[i] == again.data()[i]);

  Tensor zw1 = Tensor::zeros({4, 16}), zb1 = Tensor::zeros({16});
  Tensor zw2 = Tensor::zeros({16, 4}), zb2 = Tensor::zeros({4});
  Tensor zout = mlp2(x, zw1, zb1, zw2, zb2);
  for (std::int64_t i = 0; i < zout.numel(); ++i) CHECK(zout.data()[i] == 0.0);

  CHECK(gelu(Tensor::scalar(0.0)).value() == 0.0);
}

TEST_CASE("mean pooling over tokens") {
  Tensor one = Tensor::from({1, 3}, {2, 4, 6});
  Tensor m1 = mean_pool_tokens(one);
  for (int j = 0; j < 3; ++j) CHECK(m1.at(0, j) == one.at(0, j));

  Tensor pm = Tensor::from({2, 3}, {1, -2, 3, -1, 2, -3});
  Tensor m2 = mean_pool_tokens(pm);
  for (int j = 0; j < 3; ++j) CHECK(m2.at(0, j) == 0.0);

  std::mt19937_64 rng(17);
  Tensor x = rand_tensor({5, 6}, rng);
  Tensor m = mean_pool_tokens(x);
  for (int j = 0; j < 6; ++j) {
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += x.at(i, j);
    CHECK(m.at(0, j) == doctest::Approx(s / 5.0).epsilon(1e-14));
  }
}

TEST_CASE("cosine similarity: exact endpoints and degenerate input") {
  std::mt19937_64 rng(19);
  Tensor v = rand_tensor({6}, rng);
  CHECK(cosine_similarity(v, v) == 1.0);  // exact, identical bits
  Tensor neg = v.clone();
  for (int i = 0; i < 6; ++i) neg.data()[i] = -neg.data()[i];
  CHECK(cosine_similarity(v, neg) == -1.0);

  Tensor ex = Tensor::from({2}, {1, 0});
  Tensor ey = Tensor::from({2}, {0, 1});
  CHECK(cosine_similarity(ex, ey) == 0.0);

  CHECK_THROWS(cosine_similarity(Tensor::zeros({3}), v.clone()));

  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = rand_tensor({5}, rng, -2.0, 2.0, 1e-3);
    Tensor b = rand_tensor({5}, rng, -2.0, 2.0, 1e-3);
    double c = cosine_similarity(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("backward basics: linear and quadratic reductions") {
  Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 4, -1}, true);
  {
    Tape tape;
    Tensor loss = sum_all(x, &tape);
    tape.backward(loss);
    for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);
    CHECK_THROWS(tape.backward(loss));  // one shot per tape
  }
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = sum_all(mul(x, x, &tape), &tape);
    tape.backward(loss);
    for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
  }
  {
    Tape tape;
    Tensor not_scalar = add(x, x, &tape);
    CHECK_THROWS(tape.backward(not_scalar));
  }
  {
    Tape tape;
    Tensor detached = Tensor::scalar(1.0);
    CHECK_THROWS(tape.backward(detached));
  }
}

TEST_CASE("gradient accumulates additively on reuse") {
  Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
  Tape tape;
  // x appears twice: loss = sum(x) + sum(x .* x)
  Tensor loss = add(sum_all(x, &tape), sum_all(mul(x, x, &tape), &tape), &tape);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0 * 3.0));
  CHECK(x.grad()[1] == doctest::Approx(1.0 + 2.0 * -1.0));
}

TEST_CASE("finite differences: elementwise and scalar ops") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor w = rand_tensor({3, 4}, rng);

    auto check2 = [&](const char* name,
                      const std::function<Tensor(const Tensor&, const Tensor&, Tape*)>& op,
                      Tensor a, Tensor b) {
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(op(in[0], in[1], t), w, t);
      };
      INFO(name << " seed " << seed);
      CHECK(fd_max_rel_err(f, {a, b}) <= 1e-3);
    };
    auto check1 = [&](const char* name, const std::function<Tensor(const Tensor&, Tape*)>& op,
                      Tensor a) {
      auto f = [&](std::vector<Tensor>& in, Tape* t) { return weighted_sum(op(in[0], t), w, t); };
      INFO(name << " seed " << seed);
      CHECK(fd_max_rel_err(f, {a}) <= 1e-3);
    };

    check2("add", [](const Tensor& a, const Tensor& b, Tape* t) { return add(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng));
    check2("sub", [](const Tensor& a, const Tensor& b, Tape* t) { return sub(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng));
    check2("mul", [](const Tensor& a, const Tensor& b, Tape* t) { return mul(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng));
    check2("div", [](const Tensor& a, const Tensor& b, Tape* t) { return div(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng, -2.0, 2.0, 0.3));
    check2("tmax", [](const Tensor& a, const Tensor& b, Tape* t) { return tmax(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng, -1.5, 1.5, 0.0));
    check2("tmin", [](const Tensor& a, const Tensor& b, Tape* t) { return tmin(a, b, t); },
           rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng, -1.5, 1.5, 0.0));

    check1("scale", [](const Tensor& a, Tape* t) { return scale(a, -1.7, t); },
           rand_tensor({3, 4}, rng));
    check1("add_scalar", [](const Tensor& a, Tape* t) { return add_scalar(a, 0.9, t); },
           rand_tensor({3, 4}, rng));
    check1("const_minus", [](const Tensor& a, Tape* t) { return const_minus(2.0, a, t); },
           rand_tensor({3, 4}, rng));
    check1("sigmoid", [](const Tensor& a, Tape* t) { return sigmoid(a, t); },
           rand_tensor({3, 4}, rng, -4.0, 4.0));
    check1("gelu", [](const Tensor& a, Tape* t) { return gelu(a, t); },
           rand_tensor({3, 4}, rng, -3.0, 3.0));
    check1("relu", [](const Tensor& a, Tape* t) { return relu(a, t); },
           rand_tensor({3, 4}, rng, -1.5, 1.5, 1e-2));
    check1("tabs", [](const Tensor& a, Tape* t) { return tabs(a, t); },
           rand_tensor({3, 4}, rng, -1.5, 1.5, 1e-2));
    check1("tlog", [](const Tensor& a, Tape* t) { return tlog(a, t); },
           rand_tensor({3, 4}, rng, 0.2, 2.5));
    check1("softmax_rows", [](const Tensor& a, Tape* t) { return softmax_rows(a, t); },
           rand_tensor({3, 4}, rng, -2.0, 2.0));
    {
      Tensor wt = transpose2d(w);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return sum_all(mul(transpose2d(in[0], t), wt, t), t);
      };
      INFO("transpose2d seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng)}) <= 1e-3);
    }

    // clamp with inputs held away from the kink at the bounds
    {
      Tensor a = rand_tensor({3, 4}, rng, -1.5, 1.5);
      for (std::int64_t i = 0; i < a.numel(); ++i) {
        double& v = a.data()[i];
        if (std::abs(std::abs(v) - 0.8) < 2e-2) v = 0.5;
      }
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(clamp(in[0], -0.8, 0.8, t), w, t);
      };
      INFO("clamp seed " << seed);
      CHECK(fd_max_rel_err(f, {a}) <= 1e-3);
    }
  }
}

TEST_CASE("finite differences: linear algebra, reductions, broadcast") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed ^ 0xabcdULL);
    {
      Tensor w = rand_tensor({3, 2}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(matmul(in[0], in[1], t), w, t);
      };
      INFO("matmul seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({4, 5}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(linear(in[0], in[1], in[2], t), w, t);
      };
      INFO("linear seed " << seed);
      CHECK(fd_max_rel_err(
                f, {rand_tensor({4, 3}, rng), rand_tensor({3, 5}, rng), rand_tensor({5}, rng)}) <=
            1e-3);
    }
    {
      Tensor w = rand_tensor({3, 4}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(mlp2(in[0], in[1], in[2], in[3], in[4], t), w, t);
      };
      INFO("mlp2 seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng), rand_tensor({4, 8}, rng),
                               rand_tensor({8}, rng), rand_tensor({8, 4}, rng),
                               rand_tensor({4}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({4, 6}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(layer_norm(in[0], in[1], in[2], 1e-5, t), w, t);
      };
      INFO("layer_norm seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({4, 6}, rng, -2.0, 2.0), rand_tensor({6}, rng),
                               rand_tensor({6}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({1, 5}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(mean_pool_tokens(in[0], t), w, t);
      };
      INFO("mean_pool seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({4, 5}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({4, 1}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(mean_cols(in[0], t), w, t);
      };
      INFO("mean_cols seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({4, 5}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({4, 5}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(add_bias(in[0], in[1], t), w, t);
      };
      INFO("add_bias seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({4, 5}, rng), rand_tensor({5}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({3, 4}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(scale_by(in[0], in[1], t), w, t);
      };
      INFO("scale_by seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng), rand_tensor({1}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({4, 3}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(mul_rows_scalar(in[0], in[1], t), w, t);
      };
      INFO("mul_rows_scalar seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({4, 3}, rng), rand_tensor({4, 1}, rng)}) <= 1e-3);
    }
    {
      auto f = [&](std::vector<Tensor>& in, Tape* t) { return sum_all(in[0], t); };
      INFO("sum_all seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng)}) <= 1e-3);
    }
  }
}

TEST_CASE("finite differences: structural ops") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed ^ 0x5555ULL);
    {
      Tensor w = rand_tensor({5, 3}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(concat_rows({in[0], in[1]}, t), w, t);
      };
      INFO("concat_rows seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({2, 3}, rng), rand_tensor({3, 3}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({2, 3}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(slice_rows(in[0], 1, 3, t), w, t);
      };
      INFO("slice_rows seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({5, 3}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({3, 5}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(concat_cols({in[0], in[1]}, t), w, t);
      };
      INFO("concat_cols seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 2}, rng), rand_tensor({3, 3}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({3, 2}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(slice_cols(in[0], 1, 3, t), w, t);
      };
      INFO("slice_cols seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 5}, rng)}) <= 1e-3);
    }
    {
      // duplicate gather indices: the source row must receive summed gradient
      Tensor w = rand_tensor({4, 3}, rng);
      std::vector<int> idx = {2, 0, 2, 1};
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(gather_rows(in[0], idx, t), w, t);
      };
      INFO("gather_rows seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 3}, rng)}) <= 1e-3);
    }
    {
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return scale(pick(in[0], 5, t), 2.5, t);
      };
      INFO("pick seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({2, 6}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(reshape(in[0], {2, 6}, t), w, t);
      };
      INFO("reshape seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({5, 3}, rng);
      Tensor holes = rand_tensor({2, 3}, rng);  // frozen rows, no gradient
      std::vector<int> live_dst = {0, 2, 4}, hole_dst = {1, 3};
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(scatter_rows(in[0], live_dst, holes, hole_dst, 5, t), w, t);
      };
      INFO("scatter_rows seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 3}, rng)}) <= 1e-3);
    }
    {
      Tensor wa = rand_tensor({3, 4}, rng), wb = rand_tensor({3, 4}, rng);
      std::vector<int> cols = {0, 2};
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        auto [sa, sb] = swap_columns(in[0], in[1], cols, t);
        return add(weighted_sum(sa, wa, t), weighted_sum(sb, wb, t), t);
      };
      INFO("swap_columns seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)}) <= 1e-3);
    }
  }
}

TEST_CASE("conv 3x3 matches the direct sliding-window oracle") {
  std::mt19937_64 rng(101);
  Tensor x = rand_tensor({2, 4, 4}, rng);
  Tensor w = rand_tensor({3, 2, 3, 3}, rng);
  Tensor b = rand_tensor({3}, rng);
  Tensor out = conv2d_3x3(x, w, b);
  REQUIRE(out.ndim() == 3);
  CHECK(out.dim(0) == 3);
  CHECK(out.dim(1) == 4);
  CHECK(out.dim(2) == 4);
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double acc = b.at(co);
        for (int ci = 0; ci < 2; ++ci)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int si = i + di, sj = j + dj;
              if (si < 0 || si >= 4 || sj < 0 || sj >= 4) continue;  // zero padding
              acc += x.at(ci, si, sj) * w.data()[((co * 2 + ci) * 3 + (di + 1)) * 3 + (dj + 1)];
            }
        CHECK(out.at(co, i, j) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv 1x1 equals a matmul over flattened positions") {
  std::mt19937_64 rng(103);
  Tensor x = rand_tensor({3, 4, 4}, rng);
  Tensor w = rand_tensor({2, 3}, rng);
  Tensor b = rand_tensor({2}, rng);
  Tensor out = conv2d_1x1(x, w, b);
  for (int co = 0; co < 2; ++co)
    for (int p = 0; p < 16; ++p) {
      double acc = b.at(co);
      for (int ci = 0; ci < 3; ++ci) acc += w.at(co, ci) * x.data()[ci * 16 + p];
      CHECK(out.data()[co * 16 + p] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("finite differences: convolutions") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed ^ 0x7777ULL);
    {
      Tensor w = rand_tensor({3, 4, 4}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(conv2d_3x3(in[0], in[1], in[2], t), w, t);
      };
      INFO("conv2d_3x3 seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({2, 4, 4}, rng), rand_tensor({3, 2, 3, 3}, rng),
                               rand_tensor({3}, rng)}) <= 1e-3);
    }
    {
      Tensor w = rand_tensor({2, 3, 3}, rng);
      auto f = [&](std::vector<Tensor>& in, Tape* t) {
        return weighted_sum(conv2d_1x1(in[0], in[1], in[2], t), w, t);
      };
      INFO("conv2d_1x1 seed " << seed);
      CHECK(fd_max_rel_err(f, {rand_tensor({3, 3, 3}, rng), rand_tensor({2, 3}, rng),
                               rand_tensor({2}, rng)}) <= 1e-3);
    }
  }
}

TEST_CASE("batch norm: training statistics, buffer update, inference mode") {
  std::mt19937_64 rng(107);
  Tensor x = rand_tensor({2, 3, 3}, rng, -2.0, 2.0);
  Tensor gain = Tensor::from({2}, {1.0, 1.0});
  Tensor bias = Tensor::zeros({2});
  Tensor rm = Tensor::from({2}, {0.25, -0.5});
  Tensor rv = Tensor::from({2}, {2.0, 0.5});
  const double momentum = 0.1, eps = 1e-5;

  std::vector<double> batch_mean(2), batch_var(2);
  for (int c = 0; c < 2; ++c) {
    double m = 0.0;
    for (int p = 0; p < 9; ++p) m += x.data()[c * 9 + p];
    m /= 9.0;
    double v = 0.0;
    for (int p = 0; p < 9; ++p) v += (x.data()[c * 9 + p] - m) * (x.data()[c * 9 + p] - m);
    v /= 9.0;
    batch_mean[c] = m;
    batch_var[c] = v;
  }
  const double rm0 = rm.at(0), rv0 = rv.at(0);

  Tensor out = batch_norm2d(x, gain, bias, rm, rv, /*training=*/true, momentum, eps);
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 9; ++p) {
      const double expect =
          (x.data()[c * 9 + p] - batch_mean[c]) / std::sqrt(batch_var[c] + eps);
      CHECK(out.data()[c * 9 + p] == doctest::Approx(expect).epsilon(1e-10));
    }
  CHECK(rm.at(0) == doctest::Approx((1 - momentum) * rm0 + momentum * batch_mean[0]));
  CHECK(rv.at(0) == doctest::Approx((1 - momentum) * rv0 + momentum * batch_var[0]));

  // inference normalizes with the buffers, not the batch
  Tensor frozen_m = Tensor::from({2}, {0.1, 0.2});
  Tensor frozen_v = Tensor::from({2}, {1.5, 0.75});
  Tensor inf = batch_norm2d(x, gain, bias, frozen_m, frozen_v, /*training=*/false, momentum, eps);
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 9; ++p) {
      const double expect =
          (x.data()[c * 9 + p] - frozen_m.at(c)) / std::sqrt(frozen_v.at(c) + eps);
      CHECK(inf.data()[c * 9 + p] == doctest::Approx(expect).epsilon(1e-10));
    }
  CHECK(frozen_m.at(0) == 0.1);  // inference never touches the buffers
  CHECK(frozen_v.at(1) == 0.75);
}

TEST_CASE("finite differences: batch norm training mode") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed ^ 0x9999ULL);
    Tensor w = rand_tensor({2, 3, 3}, rng);
    Tensor rm0 = rand_tensor({2}, rng);
    Tensor rv0 = rand_tensor({2}, rng, 0.5, 2.0);
    auto f = [&](std::vector<Tensor>& in, Tape* t) {
      Tensor rm = rm0.clone();  // fresh buffers per call: the op mutates them
      Tensor rv = rv0.clone();
      return weighted_sum(batch_norm2d(in[0], in[1], in[2], rm, rv, true, 0.1, 1e-5, t), w, t);
    };
    INFO("batch_norm2d seed " << seed);
    CHECK(fd_max_rel_err(f, {rand_tensor({2, 3, 3}, rng, -2.0, 2.0), rand_tensor({2}, rng),
                             rand_tensor({2}, rng)}) <= 1e-3);
  }
}

TEST_CASE("documented ops keep finite values on finite input") {
  std::mt19937_64 rng(113);
  Tensor big = rand_tensor({4, 6}, rng, -500.0, 500.0);
  for (const Tensor& t : {softmax_rows(big), sigmoid(big), gelu(big), tabs(big)}) {
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(std::isfinite(t.data()[i]));
  }
}
