// Copyright 2026 the tfew authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tfew/error.hpp"
#include "tfew/rng.hpp"

namespace tfew {

// Dense tensors of rank 1 or 2 with reverse-mode autodiff. The graph is
// define-by-run: while a GradTape is active on the current thread, every
// operation whose inputs require gradients records a backward closure on it.
// Tensors are value handles over shared storage; values are immutable after
// creation except for gradient accumulation and explicit parameter updates.
//
// Broadcasting is deliberately narrow: binary ops accept equal shapes, a
// rank-1 vector against the last dimension of a matrix (applied per row),
// and single-element scalars. Nothing else.

template <class Real>
class GradTape;

namespace detail {
template <class Real>
GradTape<Real>*& active_tape() {
    thread_local GradTape<Real>* tape = nullptr;
    return tape;
}
}  // namespace detail

template <class Real>
struct TensorData {
    std::vector<int> shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // sized on first accumulation
    bool requires_grad = false;
};

template <class Real = double>
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), Real(0), requires_grad);
    }

    static Tensor filled(std::vector<int> shape, Real fill, bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<Real>>();
        t.d_->shape = std::move(shape);
        t.d_->value.assign(check_numel(t.d_->shape), fill);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<Real> data,
                            bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<Real>>();
        t.d_->shape = std::move(shape);
        if (check_numel(t.d_->shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_string(t.d_->shape));
        }
        t.d_->value = std::move(data);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(Real v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    /// Seeded normal init with the given standard deviation.
    static Tensor randn(std::vector<int> shape, Rng& rng, Real stddev = Real(1),
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (Real& v : t.d_->value) v = static_cast<Real>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    std::size_t numel() const { return d_->value.size(); }
    bool is_scalar() const { return numel() == 1; }

    int rows() const { return rank() == 2 ? d_->shape[0] : 1; }
    int cols() const { return d_->shape.back(); }

    // A Tensor is a handle over shared storage: const-ness of the handle does
    // not protect the storage. Value mutation is reserved for initialization
    // and optimizer updates; grad mutation for backward accumulation.
    std::span<const Real> value() const { return d_->value; }
    std::span<Real> mutable_value() const { return d_->value; }

    Real item() const {
        if (!is_scalar()) {
            throw ContractError("item() requires a scalar tensor, got shape " +
                                shape_string(d_->shape));
        }
        return d_->value[0];
    }

    Real at(int i) const { return d_->value[static_cast<std::size_t>(i)]; }
    Real at(int i, int j) const {
        return d_->value[static_cast<std::size_t>(i) * cols() + j];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    bool has_grad() const { return !d_->grad.empty(); }
    /// Gradient of the last backward pass. Empty until backward reaches this
    /// tensor.
    std::span<const Real> grad() const { return d_->grad; }
    Real grad_at(int i) const { return d_->grad[static_cast<std::size_t>(i)]; }
    Real grad_at(int i, int j) const {
        return d_->grad[static_cast<std::size_t>(i) * cols() + j];
    }
    void clear_grad() const { d_->grad.clear(); }

    /// Accumulation buffer, zero-initialized on first use.
    std::vector<Real>& grad_buffer() const {
        if (d_->grad.empty()) d_->grad.assign(d_->value.size(), Real(0));
        return d_->grad;
    }

    TensorData<Real>* data_ptr() const { return d_.get(); }

    static std::string shape_string(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }
    std::string shape_string() const { return shape_string(d_->shape); }

   private:
    static std::size_t check_numel(const std::vector<int>& shape) {
        if (shape.empty()) throw ShapeError("tensor rank must be 1 or 2");
        std::size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(shape));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::shared_ptr<TensorData<Real>> d_;
};

/// Reverse-mode tape. Operations executed while a TapeScope is active push
/// backward closures here in forward order; backward() replays them in
/// reverse, which visits each recorded node exactly once. One tape and the
/// tensors recorded on it belong to a single thread.
template <class Real = double>
class GradTape {
    struct NodeBase {
        virtual ~NodeBase() = default;
        virtual void run() = 0;
    };
    template <class F>
    struct Node final : NodeBase {
        explicit Node(F fn) : f(std::move(fn)) {}
        void run() override { f(); }
        F f;
    };

   public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    template <class F>
    void record(F back) {
        nodes_.push_back(std::make_unique<Node<F>>(std::move(back)));
    }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad tensor
    /// reachable from the loss. The loss must be scalar; a second call without
    /// reset() is a state error.
    void backward(Tensor<Real> loss) {
        if (consumed_) throw StateError("backward called twice on the same tape");
        if (!loss.is_scalar()) {
            throw ContractError("backward requires a scalar loss, got shape " +
                                loss.shape_string());
        }
        consumed_ = true;
        loss.grad_buffer()[0] += Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)->run();
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

   private:
    std::vector<std::unique_ptr<NodeBase>> nodes_;
    bool consumed_ = false;
};

/// Activates a tape on the current thread for the scope's lifetime.
template <class Real = double>
class TapeScope {
   public:
    explicit TapeScope(GradTape<Real>& tape) : prev_(detail::active_tape<Real>()) {
        detail::active_tape<Real>() = &tape;
    }
    ~TapeScope() { detail::active_tape<Real>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

   private:
    GradTape<Real>* prev_;
};

namespace detail {

template <class Real>
bool tracing(std::initializer_list<const Tensor<Real>*> inputs) {
    if (active_tape<Real>() == nullptr) return false;
    for (const Tensor<Real>* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <class Real>
void mark_output(Tensor<Real>& out, bool traced) {
    if (traced) out.set_requires_grad(true);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " +
                         b.shape_string());
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<Real> out = Tensor<Real>::zeros({m, n});
    const Real* pa = a.value().data();
    const Real* pb = b.value().data();
    Real* po = out.mutable_value().data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const Real av = pa[i * k + kk];
            if (av == Real(0)) continue;
            const Real* brow = pb + kk * n;
            Real* orow = po + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    const bool traced = detail::tracing<Real>({&a, &b});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, b, out]() mutable {
            const int m = a.rows(), k = a.cols(), n = b.cols();
            const Real* g = out.grad().data();
            if (a.requires_grad()) {
                Real* ga = a.grad_buffer().data();
                const Real* pb = b.value().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const Real gv = g[i * n + j];
                        if (gv == Real(0)) continue;
                        for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += gv * pb[kk * n + j];
                    }
            }
            if (b.requires_grad()) {
                Real* gb = b.grad_buffer().data();
                const Real* pa = a.value().data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const Real av = pa[i * k + kk];
                        if (av == Real(0)) continue;
                        for (int j = 0; j < n; ++j) gb[kk * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    if (a.rank() != 2) throw ShapeError("transpose requires rank 2, got " + a.shape_string());
    const int m = a.rows(), n = a.cols();
    Tensor<Real> out = Tensor<Real>::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.mutable_value()[j * m + i] = a.at(i, j);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out]() mutable {
            if (!a.requires_grad()) return;
            const int m = a.rows(), n = a.cols();
            Real* ga = a.grad_buffer().data();
            const Real* g = out.grad().data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
    }
    return out;
}

namespace detail {

enum class Broadcast { same, row_vector, scalar };

template <class Real>
Broadcast binary_mode(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.is_scalar()) return Broadcast::scalar;
    if (a.rank() == 2 && b.rank() == 1 && b.cols() == a.cols()) return Broadcast::row_vector;
    throw ShapeError("shapes do not broadcast: " + a.shape_string() + " vs " +
                     b.shape_string());
}

// Elementwise binary op with the three supported broadcast modes. The vector
// (or scalar) operand's gradient sums over the broadcast axis.
template <class Real, class Fwd, class BackA, class BackB>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, BackA back_a,
                       BackB back_b) {
    const Broadcast mode = binary_mode(a, b);
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    const Real* pa = a.value().data();
    const Real* pb = b.value().data();
    Real* po = out.mutable_value().data();
    const std::size_t n = a.numel();
    const std::size_t bc = static_cast<std::size_t>(
        mode == Broadcast::same ? 0 : (mode == Broadcast::scalar ? 1 : b.numel()));
    for (std::size_t i = 0; i < n; ++i) {
        const Real bv = mode == Broadcast::same ? pb[i]
                        : mode == Broadcast::scalar ? pb[0]
                                                    : pb[i % bc];
        po[i] = fwd(pa[i], bv);
    }
    const bool traced = tracing<Real>({&a, &b});
    mark_output(out, traced);
    if (traced) {
        active_tape<Real>()->record([a, b, out, mode, back_a, back_b]() mutable {
            const Real* pa = a.value().data();
            const Real* pb = b.value().data();
            const Real* g = out.grad().data();
            const std::size_t n = a.numel();
            const std::size_t bc = static_cast<std::size_t>(
                mode == Broadcast::same ? 0 : (mode == Broadcast::scalar ? 1 : b.numel()));
            Real* ga = a.requires_grad() ? a.grad_buffer().data() : nullptr;
            Real* gb = b.requires_grad() ? b.grad_buffer().data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t bi = mode == Broadcast::same ? i
                                       : mode == Broadcast::scalar ? 0
                                                                   : i % bc;
                if (ga) ga[i] += back_a(g[i], pa[i], pb[bi]);
                if (gb) gb[bi] += back_b(g[i], pa[i], pb[bi]);
            }
        });
    }
    return out;
}

template <class Real, class Fwd, class Back>
Tensor<Real> unary_op(const Tensor<Real>& a, Fwd fwd, Back back) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    const Real* pa = a.value().data();
    Real* po = out.mutable_value().data();
    for (std::size_t i = 0; i < a.numel(); ++i) po[i] = fwd(pa[i]);
    const bool traced = tracing<Real>({&a});
    mark_output(out, traced);
    if (traced) {
        active_tape<Real>()->record([a, out, back]() mutable {
            if (!a.requires_grad()) return;
            Real* ga = a.grad_buffer().data();
            const Real* pa = a.value().data();
            const Real* pv = out.value().data();
            const Real* g = out.grad().data();
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += back(g[i], pa[i], pv[i]);
        });
    }
    return out;
}

}  // namespace detail

/// a + b. Broadcasts b per row when b is a vector matching a's last dim.
template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x + y; },
        [](Real g, Real, Real) { return g; }, [](Real g, Real, Real) { return g; });
}

/// a * b elementwise; (l ⊙ x) with l broadcast over rows is mul(x, l).
template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x * y; },
        [](Real g, Real, Real y) { return g * y; }, [](Real g, Real x, Real) { return g * x; });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    return detail::unary_op(
        a, [c](Real x) { return c * x; }, [c](Real g, Real, Real) { return c * g; });
}

template <class Real>
Tensor<Real> add_constant(const Tensor<Real>& a, Real c) {
    return detail::unary_op(
        a, [c](Real x) { return x + c; }, [](Real g, Real, Real) { return g; });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return x > Real(0) ? x : Real(0); },
        [](Real g, Real x, Real) { return x > Real(0) ? g : Real(0); });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    static constexpr Real kInvSqrt2 = Real(0.7071067811865475244);
    static constexpr Real kInvSqrt2Pi = Real(0.3989422804014326779);
    return detail::unary_op(
        a,
        [](Real x) { return Real(0.5) * x * (Real(1) + std::erf(x * kInvSqrt2)); },
        [](Real g, Real x, Real) {
            const Real cdf = Real(0.5) * (Real(1) + std::erf(x * kInvSqrt2));
            const Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * x * x);
            return g * (cdf + x * pdf);
        });
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return std::exp(x); }, [](Real g, Real, Real y) { return g * y; });
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return std::log(x); }, [](Real g, Real x, Real) { return g / x; });
}

/// log(1 - p) computed as log1p(-p), with p clamped to 1 - 1e-12 so a
/// saturated token yields a large finite penalty instead of -inf. The
/// gradient is zero in the clamped region.
template <class Real>
Tensor<Real> log1m(const Tensor<Real>& a) {
    static constexpr Real kMax = Real(1) - Real(1e-12);
    return detail::unary_op(
        a, [](Real x) { return std::log1p(-std::min(x, kMax)); },
        [](Real g, Real x, Real) { return x < kMax ? -g / (Real(1) - x) : Real(0); });
}

/// Sum of all elements. Returns a scalar (shape [1]).
template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real acc = 0;
    for (Real v : a.value()) acc += v;
    Tensor<Real> out = Tensor<Real>::scalar(acc);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out]() mutable {
            if (!a.requires_grad()) return;
            Real* ga = a.grad_buffer().data();
            const Real g = out.grad()[0];
            for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
        });
    }
    return out;
}

namespace detail {

template <class Real>
void softmax_rows(const Tensor<Real>& a, Tensor<Real>& out, bool log_space) {
    const int nrows = a.rank() == 2 ? a.rows() : 1;
    const int n = a.cols();
    const Real* pa = a.value().data();
    Real* po = out.mutable_value().data();
    for (int r = 0; r < nrows; ++r) {
        const Real* x = pa + static_cast<std::size_t>(r) * n;
        Real* y = po + static_cast<std::size_t>(r) * n;
        Real mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        Real denom = 0;
        for (int j = 0; j < n; ++j) denom += std::exp(x[j] - mx);
        if (log_space) {
            const Real lse = std::log(denom) + mx;
            for (int j = 0; j < n; ++j) y[j] = x[j] - lse;
        } else {
            for (int j = 0; j < n; ++j) y[j] = std::exp(x[j] - mx) / denom;
        }
    }
}

}  // namespace detail

/// Softmax along the last dimension, computed with max subtraction. Each
/// slice sums to 1; NaN inputs propagate to NaN outputs.
template <class Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& a) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    detail::softmax_rows(a, out, /*log_space=*/false);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out]() mutable {
            if (!a.requires_grad()) return;
            const int nrows = a.rank() == 2 ? a.rows() : 1;
            const int n = a.cols();
            Real* ga = a.grad_buffer().data();
            const Real* y = out.value().data();
            const Real* g = out.grad().data();
            for (int r = 0; r < nrows; ++r) {
                const std::size_t off = static_cast<std::size_t>(r) * n;
                Real dot = 0;
                for (int j = 0; j < n; ++j) dot += g[off + j] * y[off + j];
                for (int j = 0; j < n; ++j) ga[off + j] += y[off + j] * (g[off + j] - dot);
            }
        });
    }
    return out;
}

/// log(softmax(x)) along the last dimension, in one stable pass.
template <class Real>
Tensor<Real> log_softmax_lastdim(const Tensor<Real>& a) {
    Tensor<Real> out = Tensor<Real>::zeros(a.shape());
    detail::softmax_rows(a, out, /*log_space=*/true);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out]() mutable {
            if (!a.requires_grad()) return;
            const int nrows = a.rank() == 2 ? a.rows() : 1;
            const int n = a.cols();
            Real* ga = a.grad_buffer().data();
            const Real* logp = out.value().data();
            const Real* g = out.grad().data();
            for (int r = 0; r < nrows; ++r) {
                const std::size_t off = static_cast<std::size_t>(r) * n;
                Real gsum = 0;
                for (int j = 0; j < n; ++j) gsum += g[off + j];
                for (int j = 0; j < n; ++j)
                    ga[off + j] += g[off + j] - std::exp(logp[off + j]) * gsum;
            }
        });
    }
    return out;
}

/// Row-wise gather: out[i] = a[i, ids[i]].
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& a, const std::vector<int>& ids) {
    if (a.rank() != 2 || static_cast<int>(ids.size()) != a.rows()) {
        throw ShapeError("gather_rows needs one index per row of " + a.shape_string());
    }
    const int n = a.cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= n) {
            throw InputError("gather index " + std::to_string(ids[i]) + " out of range at row " +
                             std::to_string(i));
        }
    }
    Tensor<Real> out = Tensor<Real>::zeros({a.rows()});
    for (int i = 0; i < a.rows(); ++i) out.mutable_value()[i] = a.at(i, ids[i]);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out, ids]() mutable {
            if (!a.requires_grad()) return;
            Real* ga = a.grad_buffer().data();
            const Real* g = out.grad().data();
            const int n = a.cols();
            for (std::size_t i = 0; i < ids.size(); ++i) ga[i * n + ids[i]] += g[i];
        });
    }
    return out;
}

/// Embedding lookup: out[t, :] = table[ids[t], :].
template <class Real>
Tensor<Real> embed(const Tensor<Real>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding table must be rank 2");
    const int v = table.rows(), d = table.cols();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= v) {
            throw InputError("token id " + std::to_string(ids[t]) + " out of range at position " +
                             std::to_string(t));
        }
    }
    if (ids.empty()) throw ContractError("embed requires a non-empty id sequence");
    Tensor<Real> out = Tensor<Real>::zeros({static_cast<int>(ids.size()), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const Real* src = table.value().data() + static_cast<std::size_t>(ids[t]) * d;
        Real* dst = out.mutable_value().data() + t * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    const bool traced = detail::tracing<Real>({&table});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([table, out, ids]() mutable {
            if (!table.requires_grad()) return;
            Real* gt = table.grad_buffer().data();
            const Real* g = out.grad().data();
            const int d = table.cols();
            for (std::size_t t = 0; t < ids.size(); ++t) {
                Real* dst = gt + static_cast<std::size_t>(ids[t]) * d;
                for (int j = 0; j < d; ++j) dst[j] += g[t * d + j];
            }
        });
    }
    return out;
}

/// Column slice [c0, c1) of a rank-2 tensor.
template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int c0, int c1) {
    if (a.rank() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1) {
        throw ShapeError("bad column slice [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + a.shape_string());
    }
    const int m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor<Real> out = Tensor<Real>::zeros({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out.mutable_value()[i * w + j] = a.at(i, c0 + j);
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out, c0, w, n]() mutable {
            if (!a.requires_grad()) return;
            Real* ga = a.grad_buffer().data();
            const Real* g = out.grad().data();
            for (int i = 0; i < a.rows(); ++i)
                for (int j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
        });
    }
    return out;
}

/// Horizontal concatenation of rank-2 tensors with equal row counts.
template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols requires at least one tensor");
    const int m = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != m) {
            throw ShapeError("concat_cols row mismatch: " + p.shape_string());
        }
        total += p.cols();
    }
    Tensor<Real> out = Tensor<Real>::zeros({m, total});
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
                out.mutable_value()[i * total + off + j] = p.at(i, j);
        off += p.cols();
    }
    bool traced = false;
    if (detail::active_tape<Real>() != nullptr) {
        for (const auto& p : parts) traced = traced || p.requires_grad();
    }
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([parts, out, total]() mutable {
            const Real* g = out.grad().data();
            int off = 0;
            for (auto& p : parts) {
                if (p.requires_grad()) {
                    Real* gp = p.grad_buffer().data();
                    for (int i = 0; i < p.rows(); ++i)
                        for (int j = 0; j < p.cols(); ++j)
                            gp[i * p.cols() + j] += g[i * total + off + j];
                }
                off += p.cols();
            }
        });
    }
    return out;
}

/// Stacks scalar tensors into one rank-1 vector, keeping gradient routing.
template <class Real>
Tensor<Real> stack_scalars(const std::vector<Tensor<Real>>& scalars) {
    if (scalars.empty()) throw ContractError("stack_scalars requires at least one scalar");
    Tensor<Real> out = Tensor<Real>::zeros({static_cast<int>(scalars.size())});
    bool traced = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (!scalars[i].is_scalar()) {
            throw ShapeError("stack_scalars operand " + std::to_string(i) + " has shape " +
                             scalars[i].shape_string());
        }
        out.mutable_value()[i] = scalars[i].item();
        if (detail::active_tape<Real>() != nullptr && scalars[i].requires_grad()) traced = true;
    }
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([scalars, out]() mutable {
            const Real* g = out.grad().data();
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                if (scalars[i].requires_grad()) scalars[i].grad_buffer()[0] += g[i];
            }
        });
    }
    return out;
}

/// Selects element i of a rank-1 tensor as a scalar.
template <class Real>
Tensor<Real> pick(const Tensor<Real>& a, int i) {
    if (a.rank() != 1 || i < 0 || i >= a.cols()) {
        throw ShapeError("pick index " + std::to_string(i) + " invalid for " + a.shape_string());
    }
    Tensor<Real> out = Tensor<Real>::scalar(a.at(i));
    const bool traced = detail::tracing<Real>({&a});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([a, out, i]() mutable {
            if (a.requires_grad()) a.grad_buffer()[i] += out.grad()[0];
        });
    }
    return out;
}

/// Sets entries above the diagonal (key position > query position) to -inf.
/// Used on pre-softmax attention scores; gradients pass only where unmasked.
template <class Real>
Tensor<Real> causal_mask(const Tensor<Real>& scores) {
    if (scores.rank() != 2) throw ShapeError("causal_mask requires rank 2");
    const int m = scores.rows(), n = scores.cols();
    Tensor<Real> out = Tensor<Real>::zeros({m, n});
    constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_value()[i * n + j] = j > i ? kNegInf : scores.at(i, j);
    const bool traced = detail::tracing<Real>({&scores});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([scores, out]() mutable {
            if (!scores.requires_grad()) return;
            const int m = scores.rows(), n = scores.cols();
            Real* ga = scores.grad_buffer().data();
            const Real* g = out.grad().data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j <= std::min(i, n - 1); ++j) ga[i * n + j] += g[i * n + j];
        });
    }
    return out;
}

/// RMS normalization over the last dimension with a learned per-feature
/// scale: y[i,j] = x[i,j] * s[j] / sqrt(mean_j(x[i,j]^2) + eps).
template <class Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& s, Real eps = Real(1e-6)) {
    if (x.rank() != 2 || s.rank() != 1 || s.cols() != x.cols()) {
        throw ShapeError("rms_norm shapes: " + x.shape_string() + " with scale " +
                         s.shape_string());
    }
    const int m = x.rows(), d = x.cols();
    Tensor<Real> out = Tensor<Real>::zeros({m, d});
    std::vector<Real> inv_rms(m);
    for (int i = 0; i < m; ++i) {
        Real ms = 0;
        for (int j = 0; j < d; ++j) ms += x.at(i, j) * x.at(i, j);
        inv_rms[i] = Real(1) / std::sqrt(ms / d + eps);
        for (int j = 0; j < d; ++j)
            out.mutable_value()[i * d + j] = x.at(i, j) * s.at(j) * inv_rms[i];
    }
    const bool traced = detail::tracing<Real>({&x, &s});
    detail::mark_output(out, traced);
    if (traced) {
        detail::active_tape<Real>()->record([x, s, out, inv_rms]() mutable {
            const int m = x.rows(), d = x.cols();
            const Real* g = out.grad().data();
            Real* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
            Real* gs = s.requires_grad() ? s.grad_buffer().data() : nullptr;
            for (int i = 0; i < m; ++i) {
                const Real ir = inv_rms[i];
                if (gs) {
                    for (int j = 0; j < d; ++j) gs[j] += g[i * d + j] * x.at(i, j) * ir;
                }
                if (gx) {
                    Real dot = 0;
                    for (int j = 0; j < d; ++j) dot += g[i * d + j] * s.at(j) * x.at(i, j);
                    const Real c = dot * ir * ir / d;
                    for (int j = 0; j < d; ++j)
                        gx[i * d + j] += ir * (g[i * d + j] * s.at(j) - x.at(i, j) * c);
                }
            }
        });
    }
    return out;
}

}  // namespace tfew
