// Dense double-precision tensors with reverse-mode autodiff on an explicit tape.
//
// Design notes:
//  - Tensors are shared handles (cheap to copy); values are row-major.
//  - Ops take an optional Tape*. With a tape and at least one gradient-requiring
//    input they record a backward closure; with tape == nullptr they are pure.
//  - Gradients accumulate additively; a Tape is single-use per forward pass.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ragtrack {

// Sets flush-to-zero / denormals-are-zero on platforms that support it.
// Saturated sigmoids and long gradient chains otherwise drop into the denormal
// range and the whole training loop crawls. No-op elsewhere.
void flush_denormals();

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int ndim() const;
  int dim(int i) const;
  std::int64_t numel() const;

  double* data();
  const double* data() const;
  double value() const;  // scalar tensors only

  // 2-D / 3-D accessors (bounds unchecked, test/debug convenience).
  double at(int i) const;
  double at(int i, int j) const;
  double at(int i, int j, int k) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  double* grad();              // allocates (zeroed) on first use
  const double* grad() const;  // nullptr if never allocated
  void zero_grad();

  Tensor clone() const;   // deep copy, keeps requires_grad
  Tensor detach() const;  // deep copy of values, requires_grad = false

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> v;
    std::vector<double> g;  // empty until first grad() call
    bool rg = false;
  };
  std::shared_ptr<Impl> impl_;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  void ensure_grad();
  friend class Tape;
};

// Records backward closures during a forward pass; replays them in reverse.
// backward() may be called exactly once per tape.
class Tape {
 public:
  void record(std::function<void()> fn);
  void backward(const Tensor& loss);
  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

std::string shape_str(const std::vector<int>& shape);

// ----- elementwise and linear algebra -----

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose2d(const Tensor& a, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double s, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double c, Tape* tape = nullptr);
Tensor const_minus(double c, const Tensor& a, Tape* tape = nullptr);  // c - a
// Multiply a whole tensor by a learnable 1-element tensor.
Tensor scale_by(const Tensor& a, const Tensor& s, Tape* tape = nullptr);
// [N x C] + [C] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor tmax(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor tmin(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& a, Tape* tape = nullptr);
Tensor gelu(const Tensor& a, Tape* tape = nullptr);  // exact erf form
Tensor tlog(const Tensor& a, Tape* tape = nullptr);
Tensor tabs(const Tensor& a, Tape* tape = nullptr);
Tensor clamp(const Tensor& a, double lo, double hi, Tape* tape = nullptr);

// ----- reductions, normalization -----

Tensor sum_all(const Tensor& a, Tape* tape = nullptr);  // -> scalar
// Row-max-stabilized softmax over the last axis of a 2-D tensor.
Tensor softmax_rows(const Tensor& a, Tape* tape = nullptr);
// Per-row normalization over the last axis with learnable gain/bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps, Tape* tape = nullptr);
// [N x C] -> [1 x C]; errors on N == 0.
Tensor mean_pool_tokens(const Tensor& a, Tape* tape = nullptr);
// [N x M] -> [N x 1] mean over columns.
Tensor mean_cols(const Tensor& a, Tape* tape = nullptr);

// ----- structural ops (dim-0 rows may have arbitrary trailing extent) -----

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor slice_rows(const Tensor& a, int r0, int r1, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& a, int c0, int c1, Tape* tape = nullptr);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx, Tape* tape = nullptr);
// Single element by flat index -> scalar tensor.
Tensor pick(const Tensor& a, std::int64_t flat_index, Tape* tape = nullptr);
Tensor reshape(const Tensor& a, std::vector<int> shape, Tape* tape = nullptr);
// Interleave gradient-carrying rows with frozen constant rows into one matrix.
Tensor scatter_rows(const Tensor& live, const std::vector<int>& live_dst,
                    const Tensor& holes, const std::vector<int>& hole_dst,
                    int total_rows, Tape* tape = nullptr);
// Swap the listed columns between two equally-shaped matrices.
std::pair<Tensor, Tensor> swap_columns(const Tensor& a, const Tensor& b,
                                       const std::vector<int>& cols, Tape* tape = nullptr);
// [N x C] scaled per row by [N x 1].
Tensor mul_rows_scalar(const Tensor& a, const Tensor& s, Tape* tape = nullptr);

// ----- convolution / batch norm (inputs are [C x A x B] grids) -----

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
// Training mode normalizes with per-channel batch statistics over the spatial
// axes and updates the running buffers; inference mode uses the buffers.
Tensor batch_norm2d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    Tensor& run_mean, Tensor& run_var, bool training,
                    double momentum, double eps, Tape* tape = nullptr);

// ----- composites -----

Tensor linear(const Tensor& a, const Tensor& w, const Tensor& b, Tape* tape = nullptr);
// Two-layer MLP with GELU: linear -> gelu -> linear.
Tensor mlp2(const Tensor& a, const Tensor& w1, const Tensor& b1,
            const Tensor& w2, const Tensor& b2, Tape* tape = nullptr);

// Plain scalar; exact +/-1 for bitwise-equal (or bitwise-negated) operands so
// duplicate gating at threshold 1.0 behaves exactly. Errors on zero-norm input.
double cosine_similarity(const Tensor& u, const Tensor& v);

}  // namespace ragtrack
