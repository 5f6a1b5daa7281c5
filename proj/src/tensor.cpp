#include "gwf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace gwf {

namespace {

bool g_nan_debug = false;
bool g_grad_enabled = true;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check_finite_output(const detail::TensorNode& n) {
    if (!g_nan_debug) return;
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by op '") +
                               n.op + "'");
        }
    }
}

}  // namespace

void set_nan_debug(bool enabled) { g_nan_debug = enabled; }
bool nan_debug_enabled() { return g_nan_debug; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_recording_enabled() { return g_grad_enabled; }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill) {
    auto n = shape_numel(shape);
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int Tensor::dim(int axis) const { return node_->shape.at(axis); }
std::int64_t Tensor::size() const { return node_->size(); }

double* Tensor::data() { return node_->value.data(); }
const double* Tensor::data() const { return node_->value.data(); }
std::vector<double>& Tensor::values() { return node_->value; }
const std::vector<double>& Tensor::values() const { return node_->value; }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item() requires a scalar tensor, got shape " +
                         shape_str(shape()));
    }
    return node_->value[0];
}

double Tensor::at(std::int64_t i) const { return node_->value.at(static_cast<size_t>(i)); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
    return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) throw ShapeError("tensor has no grad buffer");
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw ShapeError("tensor has no grad buffer");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : node_->value)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace detail {

Tensor make_tensor(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

}  // namespace detail

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

Tensor wrap(NodePtr node) { return detail::make_tensor(std::move(node)); }

bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Creates the output node; wires inputs + backward rule if grads are needed.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::initializer_list<const Tensor*> ins,
               std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->op = op;
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (any_requires_grad(ins)) {
        node->requires_grad = true;
        for (const Tensor* t : ins)
            if (t->defined()) node->inputs.push_back(t->node());
        node->backward_fn = std::move(backward_fn);
    }
    check_finite_output(*node);
    return wrap(node);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void accumulate(TensorNode& dst, const std::vector<double>& g) {
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same shape, or one side scalar)
// ---------------------------------------------------------------------------

namespace {

enum class Ew { Add, Sub, Mul, Div };

Tensor elementwise(const char* name, Ew kind, const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.size() == 1 && b.size() > 1;
    const bool b_scalar = b.size() == 1 && a.size() > 1;
    if (!a_scalar && !b_scalar) require_same_shape(name, a, b);

    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    const auto n = shape_numel(out_shape);
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = a_scalar ? pa[0] : pa[i];
        const double y = b_scalar ? pb[0] : pb[i];
        switch (kind) {
            case Ew::Add: out[i] = x + y; break;
            case Ew::Sub: out[i] = x - y; break;
            case Ew::Mul: out[i] = x * y; break;
            case Ew::Div: out[i] = x / y; break;
        }
    }

    auto an = a.node();
    auto bn = b.node();
    return make_op(name, out_shape, std::move(out), {&a, &b},
                   [an, bn, kind, a_scalar, b_scalar, n](TensorNode& o) {
                       const auto& g = o.grad;
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::int64_t i = 0; i < n; ++i) {
                               const double y = b_scalar ? bn->value[0] : bn->value[i];
                               double gi = 0.0;
                               switch (kind) {
                                   case Ew::Add: gi = g[i]; break;
                                   case Ew::Sub: gi = g[i]; break;
                                   case Ew::Mul: gi = g[i] * y; break;
                                   case Ew::Div: gi = g[i] / y; break;
                               }
                               an->grad[a_scalar ? 0 : i] += gi;
                           }
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::int64_t i = 0; i < n; ++i) {
                               const double x = a_scalar ? an->value[0] : an->value[i];
                               const double y = b_scalar ? bn->value[0] : bn->value[i];
                               double gi = 0.0;
                               switch (kind) {
                                   case Ew::Add: gi = g[i]; break;
                                   case Ew::Sub: gi = -g[i]; break;
                                   case Ew::Mul: gi = g[i] * x; break;
                                   case Ew::Div: gi = -g[i] * x / (y * y); break;
                               }
                               bn->grad[b_scalar ? 0 : i] += gi;
                           }
                       }
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", Ew::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", Ew::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", Ew::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise("div", Ew::Div, a, b); }

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    const auto n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op("scale", a.shape(), std::move(out), {&a},
                   [an, c, n](TensorNode& o) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::int64_t i = 0; i < n; ++i) an->grad[i] += c * o.grad[i];
                   });
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto n = a.size();
    std::vector<double> out(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.data()[i] + c;
    auto an = a.node();
    return make_op("add_scalar", a.shape(), std::move(out), {&a},
                   [an, n](TensorNode& o) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::int64_t i = 0; i < n; ++i) an->grad[i] += o.grad[i];
                   });
}

Tensor add_rowvec(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw ShapeError("add_rowvec: need (n,m) and (m), got " +
                         shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    }
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out[i * m + j] = x.data()[i * m + j] + bias.data()[j];
    auto xn = x.node();
    auto bn = bias.node();
    return make_op("add_rowvec", x.shape(), std::move(out), {&x, &bias},
                   [xn, bn, n, m](TensorNode& o) {
                       if (xn->requires_grad) accumulate(*xn, o.grad);
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < m; ++j) bn->grad[j] += o.grad[i * m + j];
                       }
                   });
}

Tensor add_colvec(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(0)) {
        throw ShapeError("add_colvec: need (n,m) and (n), got " +
                         shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    }
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out[i * m + j] = x.data()[i * m + j] + bias.data()[i];
    auto xn = x.node();
    auto bn = bias.node();
    return make_op("add_colvec", x.shape(), std::move(out), {&x, &bias},
                   [xn, bn, n, m](TensorNode& o) {
                       if (xn->requires_grad) accumulate(*xn, o.grad);
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < m; ++j) bn->grad[i] += o.grad[i * m + j];
                       }
                   });
}

// ---------------------------------------------------------------------------
// matmul with optional transposes (2-D only)
// ---------------------------------------------------------------------------

namespace {

// C(n,m) += A(n,k) * B(k,m) with optional transposed reads.
void gemm_acc(double* c, const double* a, const double* b, int n, int k, int m,
              bool ta, bool tb) {
    for (int i = 0; i < n; ++i) {
        double* crow = c + static_cast<std::int64_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            const double av = ta ? a[static_cast<std::int64_t>(p) * n + i]
                                 : a[static_cast<std::int64_t>(i) * k + p];
            if (av == 0.0) continue;
            if (!tb) {
                const double* brow = b + static_cast<std::int64_t>(p) * m;
                for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
            } else {
                for (int j = 0; j < m; ++j)
                    crow[j] += av * b[static_cast<std::int64_t>(j) * k + p];
            }
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: need rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int n = trans_a ? a.dim(1) : a.dim(0);
    const int ka = trans_a ? a.dim(0) : a.dim(1);
    const int kb = trans_b ? b.dim(1) : b.dim(0);
    const int m = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
    }
    std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
    gemm_acc(out.data(), a.data(), b.data(), n, ka, m, trans_a, trans_b);

    auto an = a.node();
    auto bn = b.node();
    const int k = ka;
    return make_op("matmul", {n, m}, std::move(out), {&a, &b},
                   [an, bn, n, k, m, trans_a, trans_b](TensorNode& o) {
                       // dC = G; dA = G * B^T (modulo transposes), dB = A^T * G.
                       if (an->requires_grad) {
                           an->ensure_grad();
                           if (!trans_a)
                               gemm_acc(an->grad.data(), o.grad.data(), bn->value.data(),
                                        n, m, k, false, !trans_b);
                           else
                               gemm_acc(an->grad.data(), bn->value.data(), o.grad.data(),
                                        k, m, n, trans_b, true);
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           if (!trans_b)
                               gemm_acc(bn->grad.data(), an->value.data(), o.grad.data(),
                                        k, n, m, !trans_a, false);
                           else
                               gemm_acc(bn->grad.data(), o.grad.data(), an->value.data(),
                                        m, n, k, true, trans_a);
                       }
                   });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    }
    auto xn = x.node();
    return make_op("reshape", std::move(new_shape), x.values(), {&x},
                   [xn](TensorNode& o) {
                       if (xn->requires_grad) accumulate(*xn, o.grad);
                   });
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose2d: need rank-2, got " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out[static_cast<std::int64_t>(j) * n + i] = x.data()[i * m + j];
    auto xn = x.node();
    return make_op("transpose2d", {m, n}, std::move(out), {&x},
                   [xn, n, m](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < m; ++j)
                               xn->grad[static_cast<std::int64_t>(i) * m + j] +=
                                   o.grad[static_cast<std::int64_t>(j) * n + i];
                   });
}

namespace {

// Strides for row-major iteration: outer = product of dims before axis,
// inner = product after.
void axis_extents(const Shape& s, int axis, std::int64_t& outer, std::int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

Tensor slice(const Tensor& x, int axis, int start, int stop) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const int extent = x.dim(axis);
    if (start < 0 || stop > extent || start >= stop)
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(stop) + ") invalid for axis extent " +
                         std::to_string(extent));
    Shape out_shape = x.shape();
    out_shape[axis] = stop - start;
    std::int64_t outer, inner;
    axis_extents(x.shape(), axis, outer, inner);
    const int len = stop - start;
    std::vector<double> out(static_cast<size_t>(outer) * len * inner);
    for (std::int64_t o = 0; o < outer; ++o)
        for (int a = 0; a < len; ++a)
            std::memcpy(&out[(o * len + a) * inner],
                        &x.data()[(o * extent + start + a) * inner],
                        sizeof(double) * static_cast<size_t>(inner));
    auto xn = x.node();
    return make_op("slice", std::move(out_shape), std::move(out), {&x},
                   [xn, outer, inner, extent, start, len](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::int64_t ou = 0; ou < outer; ++ou)
                           for (int a = 0; a < len; ++a) {
                               const double* g = &o.grad[(ou * len + a) * inner];
                               double* dst = &xn->grad[(ou * extent + start + a) * inner];
                               for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                           }
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(ref.size()))
        throw ShapeError("concat: axis out of range");
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != static_cast<int>(ref.size()))
            throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < p.rank(); ++d) {
            if (d != axis && p.dim(d) != ref[d])
                throw ShapeError("concat: off-axis extent mismatch " +
                                 shape_str(p.shape()) + " vs " + shape_str(ref));
        }
        total += p.dim(axis);
    }
    Shape out_shape = ref;
    out_shape[axis] = total;
    std::int64_t outer, inner;
    axis_extents(out_shape, axis, outer, inner);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    int offset = 0;
    for (const Tensor& p : parts) {
        const int len = p.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(&out[(o * total + offset) * inner],
                        &p.data()[o * len * inner],
                        sizeof(double) * static_cast<size_t>(len) * inner);
        offset += len;
    }

    bool needs_grad = false;
    if (g_grad_enabled)
        for (const Tensor& p : parts) needs_grad = needs_grad || p.requires_grad();

    auto node = std::make_shared<TensorNode>();
    node->op = "concat";
    node->shape = out_shape;
    node->value = std::move(out);
    if (needs_grad) {
        node->requires_grad = true;
        std::vector<NodePtr> ins;
        std::vector<int> lens;
        for (const Tensor& p : parts) {
            ins.push_back(p.node());
            lens.push_back(p.dim(axis));
        }
        node->inputs = ins;
        node->backward_fn = [ins, lens, outer, inner, total](TensorNode& o) {
            int off = 0;
            for (size_t pi = 0; pi < ins.size(); ++pi) {
                const int len = lens[pi];
                if (ins[pi]->requires_grad) {
                    ins[pi]->ensure_grad();
                    for (std::int64_t ou = 0; ou < outer; ++ou) {
                        const double* g = &o.grad[(ou * total + off) * inner];
                        double* dst = &ins[pi]->grad[ou * len * inner];
                        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                    }
                }
                off += len;
            }
        };
    }
    check_finite_output(*node);
    return wrap(node);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    if (x.rank() != 2) throw ShapeError("gather_rows: need rank-2, got " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    for (int r : rows)
        if (r < 0 || r >= n)
            throw ShapeError("gather_rows: row index " + std::to_string(r) +
                             " out of range [0," + std::to_string(n) + ")");
    std::vector<double> out(rows.size() * static_cast<size_t>(m));
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(&out[i * m], &x.data()[static_cast<std::int64_t>(rows[i]) * m],
                    sizeof(double) * static_cast<size_t>(m));
    auto xn = x.node();
    auto rows_copy = rows;
    return make_op("gather_rows", {static_cast<int>(rows.size()), m}, std::move(out),
                   {&x}, [xn, rows_copy, m](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (size_t i = 0; i < rows_copy.size(); ++i) {
                           const double* g = &o.grad[i * m];
                           double* dst = &xn->grad[static_cast<std::int64_t>(rows_copy[i]) * m];
                           for (int j = 0; j < m; ++j) dst[j] += g[j];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: need rank-2, got " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    std::vector<double> out(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i) {
        const double* row = &x.data()[static_cast<std::int64_t>(i) * m];
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            const double e = std::exp(row[j] - mx);
            out[i * m + j] = e;
            s += e;
        }
        for (int j = 0; j < m; ++j) out[i * m + j] /= s;
    }
    auto xn = x.node();
    return make_op("softmax", x.shape(), std::move(out), {&x},
                   [xn, n, m](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int i = 0; i < n; ++i) {
                           const double* y = &o.value[static_cast<std::int64_t>(i) * m];
                           const double* g = &o.grad[static_cast<std::int64_t>(i) * m];
                           double dot = 0.0;
                           for (int j = 0; j < m; ++j) dot += y[j] * g[j];
                           double* dst = &xn->grad[static_cast<std::int64_t>(i) * m];
                           for (int j = 0; j < m; ++j) dst[j] += y[j] * (g[j] - dot);
                       }
                   });
}

Tensor gelu(const Tensor& x) {
    const auto n = x.size();
    std::vector<double> out(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    auto xn = x.node();
    return make_op("gelu", x.shape(), std::move(out), {&x},
                   [xn, n](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::int64_t i = 0; i < n; ++i) {
                           const double v = xn->value[i];
                           const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                           const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                           xn->grad[i] += o.grad[i] * (cdf + v * pdf);
                       }
                   });
}

Tensor tanh_act(const Tensor& x) {
    const auto n = x.size();
    std::vector<double> out(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x.data()[i]);
    auto xn = x.node();
    return make_op("tanh", x.shape(), std::move(out), {&x},
                   [xn, n](TensorNode& o) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (std::int64_t i = 0; i < n; ++i) {
                           const double t = o.value[i];
                           xn->grad[i] += o.grad[i] * (1.0 - t * t);
                       }
                   });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    auto xn = x.node();
    return make_op("sum", {1}, {s}, {&x}, [xn](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = o.grad[0];
        for (auto& v : xn->grad) v += g;
    });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    auto xn = x.node();
    return make_op("mean", {1}, {s * inv}, {&x}, [xn, inv](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = o.grad[0] * inv;
        for (auto& v : xn->grad) v += g;
    });
}

Tensor sum_squares(const Tensor& x) {
    double s = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
    auto xn = x.node();
    return make_op("sum_squares", {1}, {s}, {&x}, [xn](TensorNode& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = o.grad[0];
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += 2.0 * xn->value[i] * g;
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 2) throw ShapeError("layer_norm: need rank-2, got " + shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: gamma/beta must be (" + std::to_string(d) + ")");
    std::vector<double> out(static_cast<size_t>(n) * d);
    std::vector<double> xhat(static_cast<size_t>(n) * d);
    std::vector<double> inv_sigma(n);
    for (int i = 0; i < n; ++i) {
        const double* row = &x.data()[static_cast<std::int64_t>(i) * d];
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return make_op(
        "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
        [xn, gn, bn, n, d, xhat = std::move(xhat),
         inv_sigma = std::move(inv_sigma)](TensorNode& o) {
            for (int i = 0; i < n; ++i) {
                const double* g = &o.grad[static_cast<std::int64_t>(i) * d];
                const double* h = &xhat[static_cast<std::int64_t>(i) * d];
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * h[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    // dx = is * (dy*gamma - mean(dy*gamma) - xhat * mean(dy*gamma*xhat))
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double t = g[j] * gn->value[j];
                        m1 += t;
                        m2 += t * h[j];
                    }
                    m1 /= d;
                    m2 /= d;
                    double* dst = &xn->grad[static_cast<std::int64_t>(i) * d];
                    for (int j = 0; j < d; ++j) {
                        const double t = g[j] * gn->value[j];
                        dst[j] += inv_sigma[i] * (t - m1 - h[j] * m2);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// 3-D convolution and its adjoint
// ---------------------------------------------------------------------------

Shape conv3d_out_shape(const Shape& spatial, int k, int stride, int pad) {
    if (spatial.size() != 3) throw ShapeError("conv3d_out_shape: need 3 spatial dims");
    Shape out(3);
    for (int i = 0; i < 3; ++i) {
        const int e = (spatial[i] + 2 * pad - k) / stride + 1;
        if (spatial[i] + 2 * pad < k)
            throw ShapeError("conv3d: kernel " + std::to_string(k) +
                             " exceeds padded extent on axis " + std::to_string(i));
        out[i] = e;
    }
    return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    if (x.rank() != 4) throw ShapeError("conv3d: input must be (C,D,H,W), got " + shape_str(x.shape()));
    if (w.rank() != 5) throw ShapeError("conv3d: kernel must be (OC,C,k,k,k), got " + shape_str(w.shape()));
    const int C = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C)
        throw ShapeError("conv3d: kernel expects " + std::to_string(w.dim(1)) +
                         " input channels, field has " + std::to_string(C));
    if (w.dim(3) != k || w.dim(4) != k) throw ShapeError("conv3d: kernel must be cubic");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != OC))
        throw ShapeError("conv3d: bias must be (" + std::to_string(OC) + ")");
    Shape os = conv3d_out_shape({D, H, W}, k, stride, pad);
    const int OD = os[0], OH = os[1], OW = os[2];

    std::vector<double> out(static_cast<size_t>(OC) * OD * OH * OW, 0.0);
    auto xat = [&](int c, int z, int y, int xx) {
        return x.data()[((static_cast<std::int64_t>(c) * D + z) * H + y) * W + xx];
    };
    for (int oc = 0; oc < OC; ++oc) {
        const double b = bias.defined() ? bias.data()[oc] : 0.0;
        for (int z = 0; z < OD; ++z)
            for (int y = 0; y < OH; ++y)
                for (int xx = 0; xx < OW; ++xx) {
                    double acc = b;
                    for (int c = 0; c < C; ++c)
                        for (int dz = 0; dz < k; ++dz) {
                            const int zi = z * stride + dz - pad;
                            if (zi < 0 || zi >= D) continue;
                            for (int dy = 0; dy < k; ++dy) {
                                const int yi = y * stride + dy - pad;
                                if (yi < 0 || yi >= H) continue;
                                for (int dx = 0; dx < k; ++dx) {
                                    const int xi = xx * stride + dx - pad;
                                    if (xi < 0 || xi >= W) continue;
                                    acc += xat(c, zi, yi, xi) *
                                           w.data()[(((static_cast<std::int64_t>(oc) * C + c) * k + dz) * k + dy) * k + dx];
                                }
                            }
                        }
                    out[((static_cast<std::int64_t>(oc) * OD + z) * OH + y) * OW + xx] = acc;
                }
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_op(
        "conv3d", {OC, OD, OH, OW}, std::move(out),
        bias.defined() ? std::initializer_list<const Tensor*>{&x, &w, &bias}
                       : std::initializer_list<const Tensor*>{&x, &w},
        [xn, wn, bn, C, D, H, W, OC, OD, OH, OW, k, stride, pad](TensorNode& o) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) bn->ensure_grad();
            for (int oc = 0; oc < OC; ++oc)
                for (int z = 0; z < OD; ++z)
                    for (int y = 0; y < OH; ++y)
                        for (int xx = 0; xx < OW; ++xx) {
                            const double g = o.grad[((static_cast<std::int64_t>(oc) * OD + z) * OH + y) * OW + xx];
                            if (g == 0.0) continue;
                            if (bn && bn->requires_grad) bn->grad[oc] += g;
                            for (int c = 0; c < C; ++c)
                                for (int dz = 0; dz < k; ++dz) {
                                    const int zi = z * stride + dz - pad;
                                    if (zi < 0 || zi >= D) continue;
                                    for (int dy = 0; dy < k; ++dy) {
                                        const int yi = y * stride + dy - pad;
                                        if (yi < 0 || yi >= H) continue;
                                        for (int dx = 0; dx < k; ++dx) {
                                            const int xi = xx * stride + dx - pad;
                                            if (xi < 0 || xi >= W) continue;
                                            const std::int64_t xoff =
                                                ((static_cast<std::int64_t>(c) * D + zi) * H + yi) * W + xi;
                                            const std::int64_t woff =
                                                (((static_cast<std::int64_t>(oc) * C + c) * k + dz) * k + dy) * k + dx;
                                            if (xn->requires_grad)
                                                xn->grad[xoff] += g * wn->value[woff];
                                            if (wn->requires_grad)
                                                wn->grad[woff] += g * xn->value[xoff];
                                        }
                                    }
                                }
                        }
        });
}

Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int pad, const Shape& out_spatial) {
    if (x.rank() != 4) throw ShapeError("conv3d_transpose: input must be rank-4, got " + shape_str(x.shape()));
    if (w.rank() != 5) throw ShapeError("conv3d_transpose: kernel must be rank-5, got " + shape_str(w.shape()));
    const int OC = x.dim(0);  // channels coming in == conv3d's output channels
    const int ID = x.dim(1), IH = x.dim(2), IW = x.dim(3);
    const int C = w.dim(1), k = w.dim(2);
    if (w.dim(0) != OC)
        throw ShapeError("conv3d_transpose: kernel leading dim " + std::to_string(w.dim(0)) +
                         " must match input channels " + std::to_string(OC));
    if (out_spatial.size() != 3) throw ShapeError("conv3d_transpose: out_spatial must have 3 dims");
    Shape check = conv3d_out_shape(out_spatial, k, stride, pad);
    if (check != Shape{ID, IH, IW})
        throw ShapeError("conv3d_transpose: out_spatial " + shape_str(out_spatial) +
                         " is inconsistent with input " + shape_str(x.shape()) +
                         " under k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                         " pad=" + std::to_string(pad));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != C))
        throw ShapeError("conv3d_transpose: bias must be (" + std::to_string(C) + ")");
    const int D = out_spatial[0], H = out_spatial[1], W = out_spatial[2];

    std::vector<double> out(static_cast<size_t>(C) * D * H * W, 0.0);
    for (int oc = 0; oc < OC; ++oc)
        for (int z = 0; z < ID; ++z)
            for (int y = 0; y < IH; ++y)
                for (int xx = 0; xx < IW; ++xx) {
                    const double v = x.data()[((static_cast<std::int64_t>(oc) * ID + z) * IH + y) * IW + xx];
                    if (v == 0.0) continue;
                    for (int c = 0; c < C; ++c)
                        for (int dz = 0; dz < k; ++dz) {
                            const int zi = z * stride + dz - pad;
                            if (zi < 0 || zi >= D) continue;
                            for (int dy = 0; dy < k; ++dy) {
                                const int yi = y * stride + dy - pad;
                                if (yi < 0 || yi >= H) continue;
                                for (int dx = 0; dx < k; ++dx) {
                                    const int xi = xx * stride + dx - pad;
                                    if (xi < 0 || xi >= W) continue;
                                    out[((static_cast<std::int64_t>(c) * D + zi) * H + yi) * W + xi] +=
                                        v * w.data()[(((static_cast<std::int64_t>(oc) * C + c) * k + dz) * k + dy) * k + dx];
                                }
                            }
                        }
                }
    if (bias.defined()) {
        for (int c = 0; c < C; ++c) {
            const double b = bias.data()[c];
            double* dst = &out[static_cast<std::int64_t>(c) * D * H * W];
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(D) * H * W; ++i) dst[i] += b;
        }
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    return make_op(
        "conv3d_transpose", {C, D, H, W}, std::move(out),
        bias.defined() ? std::initializer_list<const Tensor*>{&x, &w, &bias}
                       : std::initializer_list<const Tensor*>{&x, &w},
        [xn, wn, bn, C, D, H, W, OC, ID, IH, IW, k, stride, pad](TensorNode& o) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int c = 0; c < C; ++c) {
                    const double* g = &o.grad[static_cast<std::int64_t>(c) * D * H * W];
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(D) * H * W; ++i)
                        bn->grad[c] += g[i];
                }
            }
            for (int oc = 0; oc < OC; ++oc)
                for (int z = 0; z < ID; ++z)
                    for (int y = 0; y < IH; ++y)
                        for (int xx = 0; xx < IW; ++xx) {
                            const std::int64_t xoff =
                                ((static_cast<std::int64_t>(oc) * ID + z) * IH + y) * IW + xx;
                            double gx = 0.0;
                            for (int c = 0; c < C; ++c)
                                for (int dz = 0; dz < k; ++dz) {
                                    const int zi = z * stride + dz - pad;
                                    if (zi < 0 || zi >= D) continue;
                                    for (int dy = 0; dy < k; ++dy) {
                                        const int yi = y * stride + dy - pad;
                                        if (yi < 0 || yi >= H) continue;
                                        for (int dx = 0; dx < k; ++dx) {
                                            const int xi = xx * stride + dx - pad;
                                            if (xi < 0 || xi >= W) continue;
                                            const std::int64_t ooff =
                                                ((static_cast<std::int64_t>(c) * D + zi) * H + yi) * W + xi;
                                            const std::int64_t woff =
                                                (((static_cast<std::int64_t>(oc) * C + c) * k + dz) * k + dy) * k + dx;
                                            gx += o.grad[ooff] * wn->value[woff];
                                            if (wn->requires_grad)
                                                wn->grad[woff] += o.grad[ooff] * xn->value[xoff];
                                        }
                                    }
                                }
                            if (xn->requires_grad) xn->grad[xoff] += gx;
                        }
        });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ShapeError("backward: undefined tensor");
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " +
                         shape_str(loss.shape()));
    auto root = loss.node();
    if (root->backward_done)
        throw ShapeError("backward: graph already consumed (double-backward is unsupported)");
    if (!root->requires_grad) {
        throw ShapeError("backward: loss does not require grad (no graph recorded)");
    }

    // Iterative post-order DFS for the topological order.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    struct Frame {
        detail::TensorNode* node;
        size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            detail::TensorNode* in = f.node->inputs[f.next_input++].get();
            if (in->requires_grad && !visited.count(in)) {
                visited.insert(in);
                stack.push_back({in, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
    // Release the tape so intermediates can be freed; leaves keep their grads.
    for (detail::TensorNode* n : order) {
        n->backward_fn = nullptr;
        n->inputs.clear();
        n->backward_done = true;
    }
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
    if (eps <= 0.0) throw ShapeError("finite_diff_check: eps must be positive");

    // Deterministic scalarization weights so tensor-valued f reduces to a loss.
    auto weights_for = [](const Tensor& y) {
        std::vector<double> w(static_cast<size_t>(y.size()));
        for (size_t i = 0; i < w.size(); ++i)
            w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3) + 0.05;
        return w;
    };
    auto scalarize_value = [&](const Tensor& y, const std::vector<double>& w) {
        double s = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) s += y.data()[i] * w[i];
        if (!std::isfinite(s))
            throw NumericError("finite_diff_check: non-finite function output");
        return s;
    };

    // Analytic gradient.
    Tensor xg(x.shape(), x.values());
    xg.set_requires_grad(true);
    Tensor y0 = f(xg);
    std::vector<double> w = weights_for(y0);
    Tensor loss = sum(mul(y0, Tensor(y0.shape(), w)));
    backward(loss);
    std::vector<double> analytic = xg.grad();

    // Central differences, one coordinate at a time.
    double worst = 0.0;
    std::vector<double> base = x.values();
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<double> vp = base, vm = base;
        vp[i] += eps;
        vm[i] -= eps;
        const double fp = scalarize_value(f(Tensor(x.shape(), vp)), w);
        const double fm = scalarize_value(f(Tensor(x.shape(), vm)), w);
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + eps);
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// RNG / init
// ---------------------------------------------------------------------------

double Rng::uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
}

double Rng::normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
}

Tensor init_param(Shape shape, int fan_in, Rng& rng) {
    if (fan_in < 1) throw ShapeError("init_param: fan_in must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const auto n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

Tensor zeros_param(Shape shape) {
    Tensor t(std::move(shape), 0.0);
    t.set_requires_grad(true);
    return t;
}

}  // namespace gwf
