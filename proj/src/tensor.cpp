#include "ragtrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace ragtrack {

void flush_denormals() {
#if defined(__SSE2__)
  _mm_setcsr(_mm_getcsr() | 0x8040);  // FTZ | DAZ
#endif
}

namespace {

std::int64_t count(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void check_shape(const std::vector<int>& shape, const char* op) {
  if (shape.empty()) throw std::invalid_argument(std::string(op) + ": empty shape");
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument(std::string(op) + ": non-positive dimension in " + shape_str(shape));
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Rows along dim 0; everything after dim 0 is the row payload.
std::int64_t row_width(const Tensor& a) { return a.numel() / a.dim(0); }

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ----- Tensor -----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  check_shape(shape, "zeros");
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->v.assign(count(impl->shape), 0.0);
  impl->rg = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->v.begin(), t.impl_->v.end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, "from");
  if (count(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("from: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->v = std::move(values);
  impl->rg = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int i) const { return impl_->shape.at(i); }
std::int64_t Tensor::numel() const { return count(impl_->shape); }

double* Tensor::data() { return impl_->v.data(); }
const double* Tensor::data() const { return impl_->v.data(); }

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value: tensor " + shape_str(shape()) + " is not scalar");
  return impl_->v[0];
}

double Tensor::at(int i) const { return impl_->v[i]; }
double Tensor::at(int i, int j) const { return impl_->v[static_cast<std::int64_t>(i) * dim(1) + j]; }
double Tensor::at(int i, int j, int k) const {
  return impl_->v[(static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k];
}

bool Tensor::requires_grad() const { return impl_ && impl_->rg; }
void Tensor::set_requires_grad(bool rg) { impl_->rg = rg; }

void Tensor::ensure_grad() {
  if (impl_->g.empty()) impl_->g.assign(impl_->v.size(), 0.0);
}

double* Tensor::grad() {
  ensure_grad();
  return impl_->g.data();
}

const double* Tensor::grad() const { return impl_->g.empty() ? nullptr : impl_->g.data(); }

void Tensor::zero_grad() {
  if (!impl_->g.empty()) std::fill(impl_->g.begin(), impl_->g.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->v = impl_->v;
  impl->rg = impl_->rg;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl_->rg = false;
  t.impl_->g.clear();
  return t;
}

// ----- Tape -----

void Tape::record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("backward: tape already consumed; build a fresh tape per forward pass");
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is detached (nothing was recorded for it)");
  const_cast<Tensor&>(loss).grad()[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  consumed_ = true;
}

// ----- op helpers -----

namespace {

Tensor make_out(std::vector<int> shape, bool rec) {
  Tensor t = Tensor::zeros(std::move(shape), rec);
  return t;
}

bool recording(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

// ----- linear algebra -----

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "matmul: need 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  bool rec = recording(tape, {&a, &b});
  Tensor out = make_out({m, n}, rec);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  // i-k-j order: contiguous inner loop, accumulation order over k matches the
  // naive i-j-k triple loop bit for bit.
  for (int i = 0; i < m; ++i) {
    const double* arow = pa + static_cast<std::int64_t>(i) * k;
    double* orow = po + static_cast<std::int64_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + static_cast<std::int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (rec) {
    Tensor A = a, B = b, O = out;
    tape->record([A, B, O]() mutable {
      const double* go = O.grad();
      const int m2 = A.dim(0), k2 = A.dim(1), n2 = B.dim(1);
      if (A.requires_grad()) {
        double* ga = A.grad();
        const double* pb2 = B.data();
        for (int i = 0; i < m2; ++i)
          for (int j = 0; j < n2; ++j) {
            const double g = go[static_cast<std::int64_t>(i) * n2 + j];
            if (g == 0.0) continue;
            const double* brow = pb2 + 0;
            for (int kk = 0; kk < k2; ++kk)
              ga[static_cast<std::int64_t>(i) * k2 + kk] += g * brow[static_cast<std::int64_t>(kk) * n2 + j];
          }
      }
      if (B.requires_grad()) {
        double* gb = B.grad();
        const double* pa2 = A.data();
        for (int kk = 0; kk < k2; ++kk)
          for (int i = 0; i < m2; ++i) {
            const double av = pa2[static_cast<std::int64_t>(i) * k2 + kk];
            if (av == 0.0) continue;
            const double* grow = go + static_cast<std::int64_t>(i) * n2;
            double* gbrow = gb + static_cast<std::int64_t>(kk) * n2;
            for (int j = 0; j < n2; ++j) gbrow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& a, Tape* tape) {
  require(a.ndim() == 2, "transpose2d: need 2-D operand, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  bool rec = recording(tape, {&a});
  Tensor out = make_out({n, m}, rec);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[static_cast<std::int64_t>(j) * m + i] = a.data()[static_cast<std::int64_t>(i) * n + j];
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      const int m2 = A.dim(0), n2 = A.dim(1);
      double* ga = A.grad();
      const double* go = O.grad();
      for (int i = 0; i < m2; ++i)
        for (int j = 0; j < n2; ++j) ga[static_cast<std::int64_t>(i) * n2 + j] += go[static_cast<std::int64_t>(j) * m2 + i];
    });
  }
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, Tape* tape, const char* name, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  bool rec = recording(tape, {&a, &b});
  Tensor out = make_out(a.shape(), rec);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
  if (rec) {
    Tensor A = a, B = b, O = out;
    tape->record([A, B, O, bwd]() mutable {
      const std::int64_t n2 = A.numel();
      const double* go = O.grad();
      double* ga = A.requires_grad() ? A.grad() : nullptr;
      double* gb = B.requires_grad() ? B.grad() : nullptr;
      for (std::int64_t i = 0; i < n2; ++i) {
        double da, db;
        bwd(A.data()[i], B.data()[i], da, db);
        if (ga) ga[i] += go[i] * da;
        if (gb) gb[i] += go[i] * db;
      }
    });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Tape* tape, Fwd fwd, Bwd bwd) {
  bool rec = recording(tape, {&a});
  Tensor out = make_out(a.shape(), rec);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O, bwd]() mutable {
      const std::int64_t n2 = A.numel();
      const double* go = O.grad();
      double* ga = A.grad();
      for (std::int64_t i = 0; i < n2; ++i) ga[i] += go[i] * bwd(A.data()[i], O.data()[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "add",
                            [](double x, double y) { return x + y; },
                            [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "sub",
                            [](double x, double y) { return x - y; },
                            [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "mul",
                            [](double x, double y) { return x * y; },
                            [](double x, double y, double& da, double& db) { da = y; db = x; });
}

Tensor div(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "div",
                            [](double x, double y) { return x / y; },
                            [](double x, double y, double& da, double& db) {
                              da = 1.0 / y;
                              db = -x / (y * y);
                            });
}

Tensor tmax(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "tmax",
                            [](double x, double y) { return x >= y ? x : y; },
                            [](double x, double y, double& da, double& db) {
                              da = x >= y ? 1.0 : 0.0;
                              db = x >= y ? 0.0 : 1.0;
                            });
}

Tensor tmin(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_elementwise(a, b, tape, "tmin",
                            [](double x, double y) { return x <= y ? x : y; },
                            [](double x, double y, double& da, double& db) {
                              da = x <= y ? 1.0 : 0.0;
                              db = x <= y ? 0.0 : 1.0;
                            });
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  return unary_elementwise(a, tape, [s](double x) { return x * s; },
                           [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double c, Tape* tape) {
  return unary_elementwise(a, tape, [c](double x) { return x + c; },
                           [](double, double) { return 1.0; });
}

Tensor const_minus(double c, const Tensor& a, Tape* tape) {
  return unary_elementwise(a, tape, [c](double x) { return c - x; },
                           [](double, double) { return -1.0; });
}

Tensor scale_by(const Tensor& a, const Tensor& s, Tape* tape) {
  require(s.numel() == 1, "scale_by: scale must be a 1-element tensor, got " + shape_str(s.shape()));
  bool rec = recording(tape, {&a, &s});
  Tensor out = make_out(a.shape(), rec);
  const double sv = s.data()[0];
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * sv;
  if (rec) {
    Tensor A = a, S = s, O = out;
    tape->record([A, S, O]() mutable {
      const std::int64_t n2 = A.numel();
      const double* go = O.grad();
      const double sv2 = S.data()[0];
      if (A.requires_grad()) {
        double* ga = A.grad();
        for (std::int64_t i = 0; i < n2; ++i) ga[i] += go[i] * sv2;
      }
      if (S.requires_grad()) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n2; ++i) acc += go[i] * A.data()[i];
        S.grad()[0] += acc;
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0),
          "add_bias: " + shape_str(a.shape()) + " incompatible with bias " + shape_str(b.shape()));
  bool rec = recording(tape, {&a, &b});
  Tensor out = make_out(a.shape(), rec);
  const int n = a.dim(0), c = a.dim(1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<std::int64_t>(i) * c + j] = a.at(i, j) + b.data()[j];
  if (rec) {
    Tensor A = a, B = b, O = out;
    tape->record([A, B, O]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      const double* go = O.grad();
      if (A.requires_grad()) {
        double* ga = A.grad();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n2) * c2; ++i) ga[i] += go[i];
      }
      if (B.requires_grad()) {
        double* gb = B.grad();
        for (int i = 0; i < n2; ++i)
          for (int j = 0; j < c2; ++j) gb[j] += go[static_cast<std::int64_t>(i) * c2 + j];
      }
    });
  }
  return out;
}

// ----- nonlinearities -----

Tensor relu(const Tensor& a, Tape* tape) {
  return unary_elementwise(a, tape, [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a, Tape* tape) {
  return unary_elementwise(a, tape,
                           [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a, Tape* tape) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_elementwise(a, tape,
                           [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                           [](double x, double) {
                             const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                             const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                             return cdf + x * pdf;
                           });
}

Tensor tlog(const Tensor& a, Tape* tape) {
  return unary_elementwise(a, tape, [](double x) { return std::log(x); },
                           [](double x, double) { return 1.0 / x; });
}

Tensor tabs(const Tensor& a, Tape* tape) {
  return unary_elementwise(a, tape, [](double x) { return std::fabs(x); },
                           [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi, Tape* tape) {
  require(lo <= hi, "clamp: lo > hi");
  return unary_elementwise(a, tape,
                           [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                           [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ----- reductions / normalization -----

Tensor sum_all(const Tensor& a, Tape* tape) {
  bool rec = recording(tape, {&a});
  double acc = 0.0;
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += a.data()[i];
  Tensor out = Tensor::scalar(acc, rec);
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      const double g = O.grad()[0];
      double* ga = A.grad();
      const std::int64_t n2 = A.numel();
      for (std::int64_t i = 0; i < n2; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& a, Tape* tape) {
  require(a.ndim() == 2, "softmax_rows: need 2-D operand, got " + shape_str(a.shape()));
  const int n = a.dim(0), c = a.dim(1);
  bool rec = recording(tape, {&a});
  Tensor out = make_out({n, c}, rec);
  for (int i = 0; i < n; ++i) {
    const double* row = a.data() + static_cast<std::int64_t>(i) * c;
    double* orow = out.data() + static_cast<std::int64_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= denom;
  }
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      double* ga = A.grad();
      const double* go = O.grad();
      for (int i = 0; i < n2; ++i) {
        const double* y = O.data() + static_cast<std::int64_t>(i) * c2;
        const double* g = go + static_cast<std::int64_t>(i) * c2;
        double dot = 0.0;
        for (int j = 0; j < c2; ++j) dot += g[j] * y[j];
        double* grow = ga + static_cast<std::int64_t>(i) * c2;
        for (int j = 0; j < c2; ++j) grow[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps, Tape* tape) {
  require(a.ndim() == 2, "layer_norm: need 2-D operand, got " + shape_str(a.shape()));
  const int n = a.dim(0), c = a.dim(1);
  require(gain.ndim() == 1 && gain.dim(0) == c && bias.ndim() == 1 && bias.dim(0) == c,
          "layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
              " incompatible with " + shape_str(a.shape()));
  bool rec = recording(tape, {&a, &gain, &bias});
  Tensor out = make_out({n, c}, rec);
  // Stash per-row inverse stddev and normalized values for the backward pass.
  std::vector<double> inv_std(n);
  std::vector<double> xhat(static_cast<std::size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    const double* row = a.data() + static_cast<std::int64_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      out.data()[static_cast<std::int64_t>(i) * c + j] = xh * gain.data()[j] + bias.data()[j];
    }
  }
  if (rec) {
    Tensor A = a, G = gain, B = bias, O = out;
    auto is_saved = std::make_shared<std::vector<double>>(std::move(inv_std));
    auto xh_saved = std::make_shared<std::vector<double>>(std::move(xhat));
    tape->record([A, G, B, O, is_saved, xh_saved]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      const double* go = O.grad();
      const auto& is = *is_saved;
      const auto& xh = *xh_saved;
      double* gg = G.requires_grad() ? G.grad() : nullptr;
      double* gb = B.requires_grad() ? B.grad() : nullptr;
      double* ga = A.requires_grad() ? A.grad() : nullptr;
      for (int i = 0; i < n2; ++i) {
        const double* g = go + static_cast<std::int64_t>(i) * c2;
        const double* xr = xh.data() + static_cast<std::size_t>(i) * c2;
        if (gg || gb) {
          for (int j = 0; j < c2; ++j) {
            if (gg) gg[j] += g[j] * xr[j];
            if (gb) gb[j] += g[j];
          }
        }
        if (ga) {
          double sum_gg = 0.0, sum_ggx = 0.0;
          for (int j = 0; j < c2; ++j) {
            const double gj = g[j] * G.data()[j];
            sum_gg += gj;
            sum_ggx += gj * xr[j];
          }
          const double inv_c = 1.0 / c2;
          double* gar = ga + static_cast<std::int64_t>(i) * c2;
          for (int j = 0; j < c2; ++j) {
            const double gj = g[j] * G.data()[j];
            gar[j] += is[i] * (gj - inv_c * sum_gg - xr[j] * inv_c * sum_ggx);
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_pool_tokens(const Tensor& a, Tape* tape) {
  require(a.ndim() == 2, "mean_pool_tokens: need 2-D operand, got " + shape_str(a.shape()));
  const int n = a.dim(0), c = a.dim(1);
  require(n >= 1, "mean_pool_tokens: empty input");
  bool rec = recording(tape, {&a});
  Tensor out = make_out({1, c}, rec);
  for (int j = 0; j < c; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a.at(i, j);
    out.data()[j] = acc / n;
  }
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      const double* go = O.grad();
      double* ga = A.grad();
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < c2; ++j) ga[static_cast<std::int64_t>(i) * c2 + j] += go[j] / n2;
    });
  }
  return out;
}

Tensor mean_cols(const Tensor& a, Tape* tape) {
  require(a.ndim() == 2, "mean_cols: need 2-D operand, got " + shape_str(a.shape()));
  const int n = a.dim(0), m = a.dim(1);
  bool rec = recording(tape, {&a});
  Tensor out = make_out({n, 1}, rec);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += a.at(i, j);
    out.data()[i] = acc / m;
  }
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      const int n2 = A.dim(0), m2 = A.dim(1);
      const double* go = O.grad();
      double* ga = A.grad();
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < m2; ++j) ga[static_cast<std::int64_t>(i) * m2 + j] += go[i] / m2;
    });
  }
  return out;
}

// ----- structural ops -----

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape) {
  require(!parts.empty(), "concat_rows: no parts");
  const Tensor& first = parts.front();
  std::vector<int> shape = first.shape();
  std::int64_t width = row_width(first);
  int rows = 0;
  bool any_rg = false;
  for (const Tensor& p : parts) {
    require(p.ndim() == first.ndim(), "concat_rows: rank mismatch");
    require(row_width(p) == width && std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
            "concat_rows: row shapes differ: " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    rows += p.dim(0);
    any_rg = any_rg || p.requires_grad();
  }
  bool rec = tape && any_rg;
  shape[0] = rows;
  Tensor out = make_out(shape, rec);
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    std::memcpy(out.data() + off, p.data(), sizeof(double) * p.numel());
    off += p.numel();
  }
  if (rec) {
    std::vector<Tensor> P = parts;
    Tensor O = out;
    tape->record([P, O]() mutable {
      const double* go = O.grad();
      std::int64_t off2 = 0;
      for (Tensor& p : P) {
        if (p.requires_grad()) {
          double* gp = p.grad();
          const std::int64_t n = p.numel();
          for (std::int64_t i = 0; i < n; ++i) gp[i] += go[off2 + i];
        }
        off2 += p.numel();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1, Tape* tape) {
  require(0 <= r0 && r0 < r1 && r1 <= a.dim(0),
          "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " + shape_str(a.shape()));
  const std::int64_t w = row_width(a);
  bool rec = recording(tape, {&a});
  std::vector<int> shape = a.shape();
  shape[0] = r1 - r0;
  Tensor out = make_out(shape, rec);
  std::memcpy(out.data(), a.data() + r0 * w, sizeof(double) * (r1 - r0) * w);
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O, r0, w]() mutable {
      double* ga = A.grad();
      const double* go = O.grad();
      const std::int64_t n = O.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[r0 * w + i] += go[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  require(!parts.empty(), "concat_cols: no parts");
  const int n = parts.front().dim(0);
  int cols = 0;
  bool any_rg = false;
  for (const Tensor& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == n,
            "concat_cols: operands must be 2-D with matching rows, got " + shape_str(p.shape()));
    cols += p.dim(1);
    any_rg = any_rg || p.requires_grad();
  }
  bool rec = tape && any_rg;
  Tensor out = make_out({n, cols}, rec);
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.dim(1);
    for (int i = 0; i < n; ++i)
      std::memcpy(out.data() + static_cast<std::int64_t>(i) * cols + off,
                  p.data() + static_cast<std::int64_t>(i) * c, sizeof(double) * c);
    off += c;
  }
  if (rec) {
    std::vector<Tensor> P = parts;
    Tensor O = out;
    tape->record([P, O, n, cols]() mutable {
      const double* go = O.grad();
      int off2 = 0;
      for (Tensor& p : P) {
        const int c = p.dim(1);
        if (p.requires_grad()) {
          double* gp = p.grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
              gp[static_cast<std::int64_t>(i) * c + j] += go[static_cast<std::int64_t>(i) * cols + off2 + j];
        }
        off2 += c;
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1, Tape* tape) {
  require(a.ndim() == 2, "slice_cols: need 2-D operand, got " + shape_str(a.shape()));
  require(0 <= c0 && c0 < c1 && c1 <= a.dim(1),
          "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " + shape_str(a.shape()));
  const int n = a.dim(0), c = a.dim(1), w = c1 - c0;
  bool rec = recording(tape, {&a});
  Tensor out = make_out({n, w}, rec);
  for (int i = 0; i < n; ++i)
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * w,
                a.data() + static_cast<std::int64_t>(i) * c + c0, sizeof(double) * w);
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O, c0]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1), w2 = O.dim(1);
      double* ga = A.grad();
      const double* go = O.grad();
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < w2; ++j) ga[static_cast<std::int64_t>(i) * c2 + c0 + j] += go[static_cast<std::int64_t>(i) * w2 + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx, Tape* tape) {
  require(!idx.empty(), "gather_rows: empty index list");
  for (int i : idx)
    require(0 <= i && i < a.dim(0), "gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
  const std::int64_t w = row_width(a);
  bool rec = recording(tape, {&a});
  std::vector<int> shape = a.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor out = make_out(shape, rec);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * w, a.data() + static_cast<std::int64_t>(idx[r]) * w, sizeof(double) * w);
  if (rec) {
    Tensor A = a, O = out;
    auto ix = std::make_shared<std::vector<int>>(idx);
    tape->record([A, O, ix, w]() mutable {
      double* ga = A.grad();
      const double* go = O.grad();
      for (std::size_t r = 0; r < ix->size(); ++r)
        for (std::int64_t j = 0; j < w; ++j) ga[static_cast<std::int64_t>((*ix)[r]) * w + j] += go[r * w + j];
    });
  }
  return out;
}

Tensor pick(const Tensor& a, std::int64_t flat_index, Tape* tape) {
  require(0 <= flat_index && flat_index < a.numel(),
          "pick: flat index " + std::to_string(flat_index) + " out of range for " + shape_str(a.shape()));
  bool rec = recording(tape, {&a});
  Tensor out = Tensor::scalar(a.data()[flat_index], rec);
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O, flat_index]() mutable { A.grad()[flat_index] += O.grad()[0]; });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape, Tape* tape) {
  check_shape(shape, "reshape");
  require(count(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  bool rec = recording(tape, {&a});
  Tensor out = make_out(shape, rec);
  std::memcpy(out.data(), a.data(), sizeof(double) * a.numel());
  if (rec) {
    Tensor A = a, O = out;
    tape->record([A, O]() mutable {
      double* ga = A.grad();
      const double* go = O.grad();
      const std::int64_t n = A.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& live, const std::vector<int>& live_dst, const Tensor& holes,
                    const std::vector<int>& hole_dst, int total_rows, Tape* tape) {
  require(live.dim(0) == static_cast<int>(live_dst.size()), "scatter_rows: live rows != index count");
  const bool have_holes = holes.defined();
  require(!have_holes || holes.dim(0) == static_cast<int>(hole_dst.size()),
          "scatter_rows: hole rows != index count");
  const int holes_n = have_holes ? holes.dim(0) : 0;
  require(live.dim(0) + holes_n == total_rows, "scatter_rows: rows do not cover the target");
  const std::int64_t w = row_width(live);
  if (have_holes)
    require(row_width(holes) == w, "scatter_rows: hole width mismatch");
  std::vector<char> seen(total_rows, 0);
  auto mark = [&](int d) {
    require(0 <= d && d < total_rows && !seen[d], "scatter_rows: bad or duplicate destination " + std::to_string(d));
    seen[d] = 1;
  };
  for (int d : live_dst) mark(d);
  for (int d : hole_dst) mark(d);
  bool rec = recording(tape, {&live});
  std::vector<int> shape = live.shape();
  shape[0] = total_rows;
  Tensor out = make_out(shape, rec);
  for (std::size_t r = 0; r < live_dst.size(); ++r)
    std::memcpy(out.data() + static_cast<std::int64_t>(live_dst[r]) * w, live.data() + r * w, sizeof(double) * w);
  for (int r = 0; r < holes_n; ++r)
    std::memcpy(out.data() + static_cast<std::int64_t>(hole_dst[r]) * w, holes.data() + static_cast<std::int64_t>(r) * w,
                sizeof(double) * w);
  if (rec) {
    Tensor L = live, O = out;
    auto ix = std::make_shared<std::vector<int>>(live_dst);
    tape->record([L, O, ix, w]() mutable {
      double* gl = L.grad();
      const double* go = O.grad();
      for (std::size_t r = 0; r < ix->size(); ++r)
        for (std::int64_t j = 0; j < w; ++j) gl[r * w + j] += go[static_cast<std::int64_t>((*ix)[r]) * w + j];
    });
  }
  return out;
}

std::pair<Tensor, Tensor> swap_columns(const Tensor& a, const Tensor& b, const std::vector<int>& cols, Tape* tape) {
  check_same_shape(a, b, "swap_columns");
  require(a.ndim() == 2, "swap_columns: need 2-D operands, got " + shape_str(a.shape()));
  const int n = a.dim(0), c = a.dim(1);
  std::vector<char> swap_mask(c, 0);
  for (int j : cols) {
    require(0 <= j && j < c, "swap_columns: column " + std::to_string(j) + " out of range for " + shape_str(a.shape()));
    swap_mask[j] = 1;
  }
  bool rec = recording(tape, {&a, &b});
  Tensor oa = make_out({n, c}, rec);
  Tensor ob = make_out({n, c}, rec);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const std::int64_t p = static_cast<std::int64_t>(i) * c + j;
      if (swap_mask[j]) {
        oa.data()[p] = b.data()[p];
        ob.data()[p] = a.data()[p];
      } else {
        oa.data()[p] = a.data()[p];
        ob.data()[p] = b.data()[p];
      }
    }
  if (rec) {
    Tensor A = a, B = b, OA = oa, OB = ob;
    auto mask = std::make_shared<std::vector<char>>(std::move(swap_mask));
    tape->record([A, B, OA, OB, mask]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      double* ga = A.requires_grad() ? A.grad() : nullptr;
      double* gb = B.requires_grad() ? B.grad() : nullptr;
      const double* goa = OA.grad();
      const double* gob = OB.grad();
      for (int i = 0; i < n2; ++i)
        for (int j = 0; j < c2; ++j) {
          const std::int64_t p = static_cast<std::int64_t>(i) * c2 + j;
          if ((*mask)[j]) {
            if (ga) ga[p] += gob[p];
            if (gb) gb[p] += goa[p];
          } else {
            if (ga) ga[p] += goa[p];
            if (gb) gb[p] += gob[p];
          }
        }
    });
  }
  return {oa, ob};
}

Tensor mul_rows_scalar(const Tensor& a, const Tensor& s, Tape* tape) {
  require(a.ndim() == 2 && s.ndim() == 2 && s.dim(1) == 1 && s.dim(0) == a.dim(0),
          "mul_rows_scalar: " + shape_str(a.shape()) + " incompatible with " + shape_str(s.shape()));
  const int n = a.dim(0), c = a.dim(1);
  bool rec = recording(tape, {&a, &s});
  Tensor out = make_out({n, c}, rec);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<std::int64_t>(i) * c + j] = a.at(i, j) * s.data()[i];
  if (rec) {
    Tensor A = a, S = s, O = out;
    tape->record([A, S, O]() mutable {
      const int n2 = A.dim(0), c2 = A.dim(1);
      const double* go = O.grad();
      double* ga = A.requires_grad() ? A.grad() : nullptr;
      double* gs = S.requires_grad() ? S.grad() : nullptr;
      for (int i = 0; i < n2; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c2; ++j) {
          const std::int64_t p = static_cast<std::int64_t>(i) * c2 + j;
          if (ga) ga[p] += go[p] * S.data()[i];
          acc += go[p] * A.data()[p];
        }
        if (gs) gs[i] += acc;
      }
    });
  }
  return out;
}

// ----- convolution / batch norm -----

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require(x.ndim() == 3, "conv2d_3x3: input must be [C x A x B], got " + shape_str(x.shape()));
  require(w.ndim() == 4 && w.dim(2) == 3 && w.dim(3) == 3,
          "conv2d_3x3: weight must be [Cout x Cin x 3 x 3], got " + shape_str(w.shape()));
  require(w.dim(1) == x.dim(0),
          "conv2d_3x3: channel mismatch: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  require(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d_3x3: bias shape " + shape_str(b.shape()));
  const int cin = x.dim(0), A = x.dim(1), B = x.dim(2), cout = w.dim(0);
  bool rec = recording(tape, {&x, &w, &b});
  Tensor out = make_out({cout, A, B}, rec);
  auto xv = [&](int c, int i, int j) -> double {
    if (i < 0 || i >= A || j < 0 || j >= B) return 0.0;
    return x.at(c, i, j);
  };
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < A; ++i)
      for (int j = 0; j < B; ++j) {
        double acc = b.data()[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj)
              acc += w.data()[((static_cast<std::int64_t>(co) * cin + ci) * 3 + (di + 1)) * 3 + (dj + 1)] *
                     xv(ci, i + di, j + dj);
        out.data()[(static_cast<std::int64_t>(co) * A + i) * B + j] = acc;
      }
  if (rec) {
    Tensor X = x, W = w, Bb = b, O = out;
    tape->record([X, W, Bb, O]() mutable {
      const int cin2 = X.dim(0), A2 = X.dim(1), B2 = X.dim(2), cout2 = W.dim(0);
      const double* go = O.grad();
      double* gx = X.requires_grad() ? X.grad() : nullptr;
      double* gw = W.requires_grad() ? W.grad() : nullptr;
      double* gb = Bb.requires_grad() ? Bb.grad() : nullptr;
      for (int co = 0; co < cout2; ++co)
        for (int i = 0; i < A2; ++i)
          for (int j = 0; j < B2; ++j) {
            const double g = go[(static_cast<std::int64_t>(co) * A2 + i) * B2 + j];
            if (g == 0.0) continue;
            if (gb) gb[co] += g;
            for (int ci = 0; ci < cin2; ++ci)
              for (int di = -1; di <= 1; ++di) {
                const int ii = i + di;
                if (ii < 0 || ii >= A2) continue;
                for (int dj = -1; dj <= 1; ++dj) {
                  const int jj = j + dj;
                  if (jj < 0 || jj >= B2) continue;
                  const std::int64_t wpos = ((static_cast<std::int64_t>(co) * cin2 + ci) * 3 + (di + 1)) * 3 + (dj + 1);
                  const std::int64_t xpos = (static_cast<std::int64_t>(ci) * A2 + ii) * B2 + jj;
                  if (gw) gw[wpos] += g * X.data()[xpos];
                  if (gx) gx[xpos] += g * W.data()[wpos];
                }
              }
          }
    });
  }
  return out;
}

Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require(x.ndim() == 3, "conv2d_1x1: input must be [C x A x B], got " + shape_str(x.shape()));
  require(w.ndim() == 2 && w.dim(1) == x.dim(0),
          "conv2d_1x1: weight " + shape_str(w.shape()) + " incompatible with " + shape_str(x.shape()));
  require(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d_1x1: bias shape " + shape_str(b.shape()));
  const int cin = x.dim(0), A = x.dim(1), B = x.dim(2), cout = w.dim(0);
  bool rec = recording(tape, {&x, &w, &b});
  Tensor out = make_out({cout, A, B}, rec);
  const std::int64_t hw = static_cast<std::int64_t>(A) * B;
  for (int co = 0; co < cout; ++co)
    for (std::int64_t p = 0; p < hw; ++p) {
      double acc = b.data()[co];
      for (int ci = 0; ci < cin; ++ci) acc += w.data()[static_cast<std::int64_t>(co) * cin + ci] * x.data()[ci * hw + p];
      out.data()[co * hw + p] = acc;
    }
  if (rec) {
    Tensor X = x, W = w, Bb = b, O = out;
    tape->record([X, W, Bb, O]() mutable {
      const int cin2 = X.dim(0), cout2 = W.dim(0);
      const std::int64_t hw2 = static_cast<std::int64_t>(X.dim(1)) * X.dim(2);
      const double* go = O.grad();
      double* gx = X.requires_grad() ? X.grad() : nullptr;
      double* gw = W.requires_grad() ? W.grad() : nullptr;
      double* gb = Bb.requires_grad() ? Bb.grad() : nullptr;
      for (int co = 0; co < cout2; ++co)
        for (std::int64_t p = 0; p < hw2; ++p) {
          const double g = go[co * hw2 + p];
          if (g == 0.0) continue;
          if (gb) gb[co] += g;
          for (int ci = 0; ci < cin2; ++ci) {
            if (gw) gw[static_cast<std::int64_t>(co) * cin2 + ci] += g * X.data()[ci * hw2 + p];
            if (gx) gx[ci * hw2 + p] += g * W.data()[static_cast<std::int64_t>(co) * cin2 + ci];
          }
        }
    });
  }
  return out;
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& run_mean,
                    Tensor& run_var, bool training, double momentum, double eps, Tape* tape) {
  require(x.ndim() == 3, "batch_norm2d: input must be [C x A x B], got " + shape_str(x.shape()));
  const int c = x.dim(0);
  require(gain.dim(0) == c && bias.dim(0) == c && run_mean.dim(0) == c && run_var.dim(0) == c,
          "batch_norm2d: parameter shapes incompatible with " + shape_str(x.shape()));
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  bool rec = recording(tape, {&x, &gain, &bias});
  Tensor out = make_out(x.shape(), rec);
  if (training) {
    std::vector<double> mean(c), inv_std(c);
    std::vector<double> xhat(static_cast<std::size_t>(c) * hw);
    for (int ci = 0; ci < c; ++ci) {
      const double* row = x.data() + ci * hw;
      double m = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) m += row[p];
      m /= hw;
      double var = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) {
        const double d = row[p] - m;
        var += d * d;
      }
      var /= hw;
      mean[ci] = m;
      inv_std[ci] = 1.0 / std::sqrt(var + eps);
      run_mean.data()[ci] = (1.0 - momentum) * run_mean.data()[ci] + momentum * m;
      run_var.data()[ci] = (1.0 - momentum) * run_var.data()[ci] + momentum * var;
      for (std::int64_t p = 0; p < hw; ++p) {
        const double xh = (row[p] - m) * inv_std[ci];
        xhat[static_cast<std::size_t>(ci) * hw + p] = xh;
        out.data()[ci * hw + p] = xh * gain.data()[ci] + bias.data()[ci];
      }
    }
    if (rec) {
      Tensor X = x, G = gain, B = bias, O = out;
      auto is_saved = std::make_shared<std::vector<double>>(std::move(inv_std));
      auto xh_saved = std::make_shared<std::vector<double>>(std::move(xhat));
      tape->record([X, G, B, O, is_saved, xh_saved, hw]() mutable {
        const int c2 = X.dim(0);
        const double* go = O.grad();
        double* gx = X.requires_grad() ? X.grad() : nullptr;
        double* gg = G.requires_grad() ? G.grad() : nullptr;
        double* gb = B.requires_grad() ? B.grad() : nullptr;
        for (int ci = 0; ci < c2; ++ci) {
          const double* g = go + ci * hw;
          const double* xh = xh_saved->data() + static_cast<std::size_t>(ci) * hw;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::int64_t p = 0; p < hw; ++p) {
            sum_g += g[p];
            sum_gx += g[p] * xh[p];
          }
          if (gg) gg[ci] += sum_gx;
          if (gb) gb[ci] += sum_g;
          if (gx) {
            const double inv_n = 1.0 / hw;
            const double gamma_is = G.data()[ci] * (*is_saved)[ci];
            for (std::int64_t p = 0; p < hw; ++p)
              gx[ci * hw + p] += gamma_is * (g[p] - inv_n * sum_g - xh[p] * inv_n * sum_gx);
          }
        }
      });
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      const double is = 1.0 / std::sqrt(run_var.data()[ci] + eps);
      for (std::int64_t p = 0; p < hw; ++p)
        out.data()[ci * hw + p] = (x.data()[ci * hw + p] - run_mean.data()[ci]) * is * gain.data()[ci] + bias.data()[ci];
    }
    if (rec) {
      Tensor X = x, G = gain, B = bias, O = out, RM = run_mean, RV = run_var;
      tape->record([X, G, B, O, RM, RV, eps, hw]() mutable {
        const int c2 = X.dim(0);
        const double* go = O.grad();
        double* gx = X.requires_grad() ? X.grad() : nullptr;
        double* gg = G.requires_grad() ? G.grad() : nullptr;
        double* gb = B.requires_grad() ? B.grad() : nullptr;
        for (int ci = 0; ci < c2; ++ci) {
          const double is = 1.0 / std::sqrt(RV.data()[ci] + eps);
          for (std::int64_t p = 0; p < hw; ++p) {
            const double g = go[ci * hw + p];
            const double xh = (X.data()[ci * hw + p] - RM.data()[ci]) * is;
            if (gx) gx[ci * hw + p] += g * G.data()[ci] * is;
            if (gg) gg[ci] += g * xh;
            if (gb) gb[ci] += g;
          }
        }
      });
    }
  }
  return out;
}

// ----- composites -----

Tensor linear(const Tensor& a, const Tensor& w, const Tensor& b, Tape* tape) {
  return add_bias(matmul(a, w, tape), b, tape);
}

Tensor mlp2(const Tensor& a, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2, Tape* tape) {
  return linear(gelu(linear(a, w1, b1, tape), tape), w2, b2, tape);
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  require(u.numel() == v.numel(),
          "cosine_similarity: size mismatch: " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
  const std::int64_t n = u.numel();
  bool same = true, negated = true;
  for (std::int64_t i = 0; i < n && (same || negated); ++i) {
    if (u.data()[i] != v.data()[i]) same = false;
    if (u.data()[i] != -v.data()[i]) negated = false;
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    dot += u.data()[i] * v.data()[i];
    nu += u.data()[i] * u.data()[i];
    nv += v.data()[i] * v.data()[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm vector");
  if (same) return 1.0;
  if (negated) return -1.0;
  const double c = dot / std::sqrt(nu * nv);
  return std::max(-1.0, std::min(1.0, c));
}

}  // namespace ragtrack
