#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "gwf/errors.hpp"

namespace gwf {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

class Tensor;

namespace detail {
struct TensorNode;
Tensor make_tensor(std::shared_ptr<TensorNode> node);
}

/// Dense multi-dimensional array of doubles with reverse-mode autodiff.
/// A Tensor is a cheap handle onto a shared node; values are written once at
/// creation and treated as immutable afterwards (grad buffers accumulate).
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int axis) const;
    std::int64_t size() const;

    double* data();
    const double* data() const;
    std::vector<double>& values();
    const std::vector<double>& values() const;
    double item() const;  // scalar tensors only
    double at(std::int64_t flat_index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    bool all_finite() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
    friend Tensor detail::make_tensor(std::shared_ptr<detail::TensorNode> node);
    friend void backward(const Tensor& loss);
};

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand, same length as value
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// When enabled, every op checks its output for NaN/Inf and throws
// NumericError naming the op.
void set_nan_debug(bool enabled);
bool nan_debug_enabled();

/// Suspends graph recording for pure evaluation (validation, ensembles).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_recording_enabled();

// ---------------------------------------------------------------------------
// Elementwise and structural ops. All record backward rules when any input
// requires grad. add/sub/mul/div accept equal shapes or a scalar rhs.
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

/// x: (n, m), bias: (m); adds bias to every row.
Tensor add_rowvec(const Tensor& x, const Tensor& bias);
/// x: (n, m), bias: (n); adds bias[i] to every element of row i.
Tensor add_colvec(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose2d(const Tensor& x);
Tensor slice(const Tensor& x, int axis, int start, int stop);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Gathers rows of a 2-D tensor; backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);

Tensor softmax_rows(const Tensor& x);  // softmax over the last axis of a 2-D tensor
Tensor gelu(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// x: (n, d); gamma, beta: (d). Normalizes each row to zero mean / unit
/// variance, then scales and shifts.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// x: (C, D, H, W), w: (OC, C, k, k, k), bias: (OC) or undefined.
/// Zero padding `pad` on every spatial side, common stride.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad);

/// Adjoint of conv3d with the same kernel layout: maps (OC, D', H', W') back
/// to (C, D, H, W). out_spatial gives the target D,H,W (resolves the
/// stride ambiguity); bias: (C) or undefined.
Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int pad, const Shape& out_spatial);

/// Output extents of conv3d for given input spatial dims.
Shape conv3d_out_shape(const Shape& spatial, int k, int stride, int pad);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation. `loss` must be scalar; populates grad on
// every reachable tensor with requires_grad. The recorded graph is consumed:
// a second call on the same graph throws.
// ---------------------------------------------------------------------------
void backward(const Tensor& loss);

/// Central-difference gradient check. `f` maps x to any tensor; it is
/// scalarized against fixed pseudo-random weights. Returns the max over
/// coordinates of |analytic - numeric| / (|analytic| + eps).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

// ---------------------------------------------------------------------------
// Seedable RNG and parameter initialization.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi);
    double normal(double mean, double stddev);
    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], requires_grad set.
Tensor init_param(Shape shape, int fan_in, Rng& rng);
Tensor zeros_param(Shape shape);

}  // namespace gwf
