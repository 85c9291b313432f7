#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bevpred/common.hpp"

namespace bevpred {

// Row-major dense tensor with reverse-mode autodiff.
//
// Gradients are recorded onto an explicit GradTape: ops only build backward
// nodes when a tape is active (see TapeScope) AND at least one input requires
// gradients.  Gradient buffers accumulate additively and are cleared only by
// an explicit zero_grad().  A tape can be replayed exactly once.
//
// Error contract: shape mismatches raise ShapeError, non-finite values in any
// op input raise NumericError.  Both checks are always on.

struct TensorData {
    std::vector<int64_t> shape;
    std::vector<scalar> values;
    std::vector<scalar> grad;  // empty until first needed, then numel-sized
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape, bool requires_grad = false);

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, scalar v, bool requires_grad = false);
    static Tensor from(std::vector<int64_t> shape, std::vector<scalar> values,
                       bool requires_grad = false);
    static Tensor randn(std::vector<int64_t> shape, Rng& rng, scalar stddev = 1,
                        bool requires_grad = false);
    static Tensor uniform(std::vector<int64_t> shape, Rng& rng, scalar lo, scalar hi,
                          bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int64_t>& shape() const { return d_->shape; }
    int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

    scalar* data() { return d_->values.data(); }
    const scalar* data() const { return d_->values.data(); }
    std::vector<scalar>& values() { return d_->values; }
    const std::vector<scalar>& values() const { return d_->values; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    scalar* grad();              // allocates (zeroed) on first use
    const scalar* grad() const;  // nullptr if never allocated
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad();

    scalar item() const;     // numel()==1 only
    Tensor clone() const;    // deep copy (values only, grad not copied)
    Tensor detach() const;   // deep copy with requires_grad=false

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// ---- gradient tape ---------------------------------------------------------

class GradTape {
public:
    void record(std::function<void()> backward_fn);
    void run_backward();  // reverse order; single use
    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

    static GradTape* active();

private:
    friend class TapeScope;
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// RAII: makes a tape the thread's active recording target.
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* prev_;
};

// Seeds d(loss)/d(loss)=1 and runs the tape backwards.  `loss` must be a
// single-element tensor.
void backward(const Tensor& loss, GradTape& tape);

// ---- op catalog -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, scalar c);
Tensor add_scalar(const Tensor& a, scalar c);

Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);              // [b,m,k]x[b,k,n]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              int64_t pad);                                // x [N,C,H,W], w [O,C,kh,kw]
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
                        int64_t pad);                      // w [C,O,kh,kw]
Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride);
Tensor upsample_nearest2d(const Tensor& x, int64_t factor);

Tensor sum(const Tensor& a);                               // -> [1]
Tensor mean(const Tensor& a);                              // -> [1]
Tensor sum_axis(const Tensor& a, int axis);                // removes the axis
Tensor mean_axis(const Tensor& a, int axis);

Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor permute(const Tensor& a, std::vector<int> dims);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor expand(const Tensor& a, std::vector<int64_t> shape);  // size-1 dims broadcast

Tensor softmax(const Tensor& a);      // last axis
Tensor log_softmax(const Tensor& a);  // last axis
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta);  // last axis

Tensor embedding(const Tensor& table, const std::vector<int64_t>& idx);  // [V,D] -> [N,D]
Tensor bilinear_sample(const Tensor& feat, const Tensor& coords);        // [C,H,W],[P,2]->[P,C]

// ---- finite-difference gradient check ---------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
};

// Compares analytic gradients of scalar-valued f against central differences
// for every element of every input with requires_grad set.  Relative error is
// |a-n| / (|a| + |n| + denom_eps).
GradCheckResult finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  const std::vector<Tensor>& inputs, double eps = 1e-2,
                                  double denom_eps = 1e-8);

}  // namespace bevpred
