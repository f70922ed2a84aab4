#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lore/rng.hpp"

namespace lore {

// Raised whenever a value pipeline produces NaN/Inf or violates a numeric
// precondition. The CLI maps this to exit code 2.
class numeric_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until backward reaches this tensor
    bool requires_grad = false;
};

template <typename T>
void check_finite(std::span<const T> v, const char* what) {
    for (const T x : v) {
        if (!std::isfinite(x)) throw numeric_error(std::string("non-finite value in ") + what);
    }
}

// Dense row-major f32/f64 tensor. A Tensor is a cheap handle onto shared
// storage; values are written once by the op that creates them, grads are
// accumulated by Tape::backward.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->value.assign(shape_numel(t.d_->shape), T(0));
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.d_->value.begin(), t.d_->value.end(), fill);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("Tensor::from: data size does not match shape " +
                                        shape_str(shape));
        check_finite<T>(data, "Tensor::from");
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->value = std::move(data);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar_of(T v) { return from({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (T& x : t.d_->value) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }
    int64_t dim(int i) const { return d_->shape.at(i); }
    int rank() const { return static_cast<int>(d_->shape.size()); }

    int64_t rows() const {
        require_2d();
        return d_->shape[0];
    }
    int64_t cols() const {
        require_2d();
        return d_->shape[1];
    }

    std::span<const T> values() const { return d_->value; }
    std::span<T> values_mut() { return d_->value; }
    T scalar() const {
        if (numel() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
        return d_->value[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const T> grad() const { return d_->grad; }
    std::span<T> grad_mut() { return d_->grad; }
    void zero_grad() { d_->grad.clear(); }

    // Value copy detached from any autodiff history.
    Tensor detach() const {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = d_->shape;
        t.d_->value = d_->value;
        t.d_->requires_grad = false;
        return t;
    }

    Tensor clone(bool requires_grad) const {
        Tensor t = detach();
        t.d_->requires_grad = requires_grad;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t = Tensor<U>::zeros(d_->shape, false);
        auto out = t.values_mut();
        for (size_t i = 0; i < d_->value.size(); ++i) out[i] = static_cast<U>(d_->value[i]);
        return t;
    }

    std::shared_ptr<TensorData<T>>& data_ptr() { return d_; }
    const std::shared_ptr<TensorData<T>>& data_ptr() const { return d_; }

  private:
    void require_2d() const {
        if (d_->shape.size() != 2)
            throw std::invalid_argument("expected 2-D tensor, got " + shape_str(d_->shape));
    }
    std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
void ensure_grad(const std::shared_ptr<TensorData<T>>& d) {
    if (d->grad.empty()) d->grad.assign(d->value.size(), T(0));
}

// Reverse-mode tape. Ops append their backward closures in construction
// order, which is a topological order of the graph, so backward() is a
// single reverse sweep. A tape can run backward once and must then be
// reset explicitly.
template <typename T>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    size_t size() const { return steps_.size(); }

    void backward(const Tensor<T>& root) {
        if (spent_) throw std::logic_error("Tape::backward called twice without reset()");
        if (root.numel() != 1) throw std::invalid_argument("backward root must be a scalar");
        if (!root.requires_grad())
            throw std::invalid_argument("backward root does not require grad");
        ensure_grad(root.data_ptr());
        root.data_ptr()->grad[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        spent_ = true;
    }

    void reset() {
        steps_.clear();
        spent_ = false;
    }

  private:
    std::vector<std::function<void()>> steps_;
    bool spent_ = false;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using MapCM = Eigen::Map<const EMat<T>>;

// b must have a shape equal to a trailing suffix of a's shape (or be equal).
// Returns the number of leading groups a spans over b.
template <typename T>
int64_t broadcast_groups(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(sa) +
                                    " vs " + shape_str(sb));
    const size_t off = sa.size() - sb.size();
    for (size_t i = 0; i < sb.size(); ++i) {
        if (sa[off + i] != sb[i])
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(sa) +
                                        " vs " + shape_str(sb));
    }
    int64_t groups = 1;
    for (size_t i = 0; i < off; ++i) groups *= sa[i];
    return groups;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_broadcast(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, const char* name,
                           Fwd fwd, Bwd bwd_pair) {
    const int64_t groups = detail::broadcast_groups(a, b, name);
    const int64_t bn = b.numel();
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    {
        auto ov = out.values_mut();
        auto av = a.values();
        auto bv = b.values();
        for (int64_t g = 0; g < groups; ++g)
            for (int64_t i = 0; i < bn; ++i) ov[g * bn + i] = fwd(av[g * bn + i], bv[i]);
    }
    check_finite<T>(out.values(), name);
    if (a.requires_grad() || b.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto bd = b.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, bd, od, groups, bn, bwd_pair]() {
            if (od->grad.empty()) return;
            if (ad->requires_grad) {
                ensure_grad(ad);
                for (int64_t g = 0; g < groups; ++g)
                    for (int64_t i = 0; i < bn; ++i) {
                        const int64_t k = g * bn + i;
                        ad->grad[k] += bwd_pair.first(od->grad[k], ad->value[k], bd->value[i]);
                    }
            }
            if (bd->requires_grad) {
                ensure_grad(bd);
                for (int64_t g = 0; g < groups; ++g)
                    for (int64_t i = 0; i < bn; ++i) {
                        const int64_t k = g * bn + i;
                        bd->grad[i] += bwd_pair.second(od->grad[k], ad->value[k], bd->value[i]);
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_broadcast(
        tape, a, b, "add", [](T x, T y) { return x + y; },
        std::pair{[](T g, T, T) { return g; }, [](T g, T, T) { return g; }});
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_broadcast(
        tape, a, b, "sub", [](T x, T y) { return x - y; },
        std::pair{[](T g, T, T) { return g; }, [](T g, T, T) { return -g; }});
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    return binary_broadcast(
        tape, a, b, "mul", [](T x, T y) { return x * y; },
        std::pair{[](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; }});
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(Tape<T>& tape, const Tensor<T>& a, const char* name, Fwd fwd, Bwd dfdx) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    {
        auto ov = out.values_mut();
        auto av = a.values();
        for (int64_t i = 0; i < a.numel(); ++i) ov[i] = fwd(av[i]);
    }
    check_finite<T>(out.values(), name);
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, dfdx]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (size_t i = 0; i < ad->value.size(); ++i)
                ad->grad[i] += od->grad[i] * dfdx(ad->value[i], od->value[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s) {
    return unary_op(
        tape, a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_const(Tape<T>& tape, const Tensor<T>& a, T c) {
    return unary_op(
        tape, a, "add_const", [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.7071067811865476);
    constexpr T inv_sqrt2pi = T(0.3989422804014327);
    return unary_op(
        tape, a, "gelu",
        [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            return cdf + x * pdf;
        });
}

template <typename T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& a) {
    return unary_op(
        tape, a, "silu",
        [](T x) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return x * s;
        },
        [](T x, T) {
            const T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& a) {
    return unary_op(
        tape, a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sqrt(Tape<T>& tape, const Tensor<T>& a) {
    return unary_op(
        tape, a, "sqrt", [](T x) { return std::sqrt(x); },
        [](T, T y) { return T(0.5) / y; });
}

// Gradient passes only strictly inside (lo, hi); clamped coordinates get 0.
template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& a, T lo, T hi) {
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    return unary_op(
        tape, a, "clamp", [=](T x) { return std::min(std::max(x, lo), hi); },
        [=](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: dimension mismatch " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    {
        detail::MapCM<T> am(a.values().data(), m, k);
        detail::MapCM<T> bm(b.values().data(), k, n);
        detail::MapM<T> om(out.values_mut().data(), m, n);
        om.noalias() = am * bm;
    }
    check_finite<T>(out.values(), "matmul");
    if (a.requires_grad() || b.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto bd = b.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, bd, od, m, k, n]() {
            if (od->grad.empty()) return;
            detail::MapCM<T> g(od->grad.data(), m, n);
            if (ad->requires_grad) {
                ensure_grad(ad);
                detail::MapCM<T> bm(bd->value.data(), k, n);
                detail::MapM<T> ga(ad->grad.data(), m, k);
                ga.noalias() += g * bm.transpose();
            }
            if (bd->requires_grad) {
                ensure_grad(bd);
                detail::MapCM<T> am(ad->value.data(), m, k);
                detail::MapM<T> gb(bd->grad.data(), k, n);
                gb.noalias() += am.transpose() * g;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& a) {
    const int64_t m = a.rows(), n = a.cols();
    Tensor<T> out = Tensor<T>::zeros({n, m});
    {
        auto av = a.values();
        auto ov = out.values_mut();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    }
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, m, n]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ad->grad[i * n + j] += od->grad[j * m + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layernorm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(Tape<T>& tape, const Tensor<T>& a) {
    if (a.rank() < 1 || a.shape().back() < 1)
        throw std::invalid_argument("softmax_lastdim: empty last dim");
    check_finite<T>(a.values(), "softmax input");
    const int64_t d = a.shape().back();
    const int64_t rows = a.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    {
        auto av = a.values();
        auto ov = out.values_mut();
        for (int64_t r = 0; r < rows; ++r) {
            const T* x = av.data() + r * d;
            T* y = ov.data() + r * d;
            T mx = x[0];
            for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
            T sum = T(0);
            for (int64_t i = 0; i < d; ++i) {
                y[i] = std::exp(x[i] - mx);
                sum += y[i];
            }
            const T inv = T(1) / sum;
            for (int64_t i = 0; i < d; ++i) y[i] *= inv;
        }
    }
    check_finite<T>(out.values(), "softmax");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, rows, d]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = od->value.data() + r * d;
                const T* g = od->grad.data() + r * d;
                T* gx = ad->grad.data() + r * d;
                T dot = T(0);
                for (int64_t i = 0; i < d; ++i) dot += g[i] * y[i];
                for (int64_t i = 0; i < d; ++i) gx[i] += y[i] * (g[i] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, T eps) {
    if (eps <= T(0)) throw std::invalid_argument("layernorm: eps must be > 0");
    const int64_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw std::invalid_argument("layernorm: gamma/beta must match last dim");
    const int64_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<T> inv_sigma(rows), mean(rows);
    {
        auto xv = x.values();
        auto gv = gamma.values();
        auto bv = beta.values();
        auto ov = out.values_mut();
        for (int64_t r = 0; r < rows; ++r) {
            const T* xp = xv.data() + r * d;
            T mu = T(0);
            for (int64_t i = 0; i < d; ++i) mu += xp[i];
            mu /= T(d);
            T var = T(0);
            for (int64_t i = 0; i < d; ++i) var += (xp[i] - mu) * (xp[i] - mu);
            var /= T(d);
            const T inv = T(1) / std::sqrt(var + eps);
            mean[r] = mu;
            inv_sigma[r] = inv;
            T* op = ov.data() + r * d;
            for (int64_t i = 0; i < d; ++i) op[i] = (xp[i] - mu) * inv * gv[i] + bv[i];
        }
    }
    check_finite<T>(out.values(), "layernorm");
    if (x.requires_grad() || gamma.requires_grad() || beta.requires_grad()) {
        out.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto gd = gamma.data_ptr();
        auto bd = beta.data_ptr();
        auto od = out.data_ptr();
        tape.record([xd, gd, bd, od, rows, d, mean, inv_sigma]() {
            if (od->grad.empty()) return;
            for (int64_t r = 0; r < rows; ++r) {
                const T* xp = xd->value.data() + r * d;
                const T* g = od->grad.data() + r * d;
                const T mu = mean[r];
                const T inv = inv_sigma[r];
                if (bd->requires_grad) {
                    ensure_grad(bd);
                    for (int64_t i = 0; i < d; ++i) bd->grad[i] += g[i];
                }
                if (gd->requires_grad) {
                    ensure_grad(gd);
                    for (int64_t i = 0; i < d; ++i)
                        gd->grad[i] += g[i] * (xp[i] - mu) * inv;
                }
                if (xd->requires_grad) {
                    ensure_grad(xd);
                    T* gx = xd->grad.data() + r * d;
                    T sum_gh = T(0), sum_ghx = T(0);
                    for (int64_t i = 0; i < d; ++i) {
                        const T gh = g[i] * gd->value[i];
                        const T xh = (xp[i] - mu) * inv;
                        sum_gh += gh;
                        sum_ghx += gh * xh;
                    }
                    const T nf = T(1) / T(d);
                    for (int64_t i = 0; i < d; ++i) {
                        const T gh = g[i] * gd->value[i];
                        const T xh = (xp[i] - mu) * inv;
                        gx[i] += inv * (gh - nf * sum_gh - xh * nf * sum_ghx);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.values()) acc += v;
    Tensor<T> out = Tensor<T>::from({1}, {acc});
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            const T g = od->grad[0];
            for (T& gx : ad->grad) gx += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
    Tensor<T> s = sum(tape, a);
    return scale(tape, s, T(1) / T(a.numel()));
}

// Max over the elements selected by mask (byte per element, nonzero = in).
// Ties resolve to the first flat index, which keeps backward deterministic.
template <typename T>
Tensor<T> masked_max(Tape<T>& tape, const Tensor<T>& a, const std::vector<uint8_t>& mask) {
    if (static_cast<int64_t>(mask.size()) != a.numel())
        throw std::invalid_argument("masked_max: mask size mismatch");
    int64_t arg = -1;
    T best = T(0);
    auto av = a.values();
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (!mask[i]) continue;
        if (arg < 0 || av[i] > best) {
            arg = i;
            best = av[i];
        }
    }
    if (arg < 0) throw std::invalid_argument("masked_max: empty mask");
    Tensor<T> out = Tensor<T>::from({1}, {best});
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, arg]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            ad->grad[arg] += od->grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape),
                                    std::vector<T>(a.values().begin(), a.values().end()));
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += od->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& a, int64_t r0, int64_t n) {
    const int64_t rows = a.rows(), cols = a.cols();
    if (r0 < 0 || n < 0 || r0 + n > rows) throw std::invalid_argument("slice_rows: out of range");
    Tensor<T> out = Tensor<T>::zeros({n, cols});
    std::copy_n(a.values().data() + r0 * cols, n * cols, out.values_mut().data());
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, r0, n, cols]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (int64_t i = 0; i < n * cols; ++i) ad->grad[r0 * cols + i] += od->grad[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& a, int64_t c0, int64_t n) {
    const int64_t rows = a.rows(), cols = a.cols();
    if (c0 < 0 || n < 0 || c0 + n > cols) throw std::invalid_argument("slice_cols: out of range");
    Tensor<T> out = Tensor<T>::zeros({rows, n});
    {
        auto av = a.values();
        auto ov = out.values_mut();
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(av.data() + r * cols + c0, n, ov.data() + r * n);
    }
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, rows, cols, c0, n]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j)
                    ad->grad[r * cols + c0 + j] += od->grad[r * n + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int64_t cols = parts[0].cols();
    int64_t rows = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.rows();
        any_grad |= p.requires_grad();
    }
    Tensor<T> out = Tensor<T>::zeros({rows, cols});
    {
        auto ov = out.values_mut();
        int64_t off = 0;
        for (const auto& p : parts) {
            std::copy_n(p.values().data(), p.numel(), ov.data() + off);
            off += p.numel();
        }
    }
    if (any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<T>>> srcs;
        for (const auto& p : parts) srcs.push_back(p.data_ptr());
        auto od = out.data_ptr();
        tape.record([srcs, od]() {
            if (od->grad.empty()) return;
            int64_t off = 0;
            for (const auto& s : srcs) {
                if (s->requires_grad) {
                    ensure_grad(s);
                    for (size_t i = 0; i < s->value.size(); ++i) s->grad[i] += od->grad[off + i];
                }
                off += static_cast<int64_t>(s->value.size());
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t rows = parts[0].rows();
    int64_t cols = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.cols();
        any_grad |= p.requires_grad();
    }
    Tensor<T> out = Tensor<T>::zeros({rows, cols});
    {
        auto ov = out.values_mut();
        int64_t coff = 0;
        for (const auto& p : parts) {
            auto pv = p.values();
            const int64_t pc = p.cols();
            for (int64_t r = 0; r < rows; ++r)
                std::copy_n(pv.data() + r * pc, pc, ov.data() + r * cols + coff);
            coff += pc;
        }
    }
    if (any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<T>>> srcs;
        for (const auto& p : parts) srcs.push_back(p.data_ptr());
        auto od = out.data_ptr();
        tape.record([srcs, od, rows, cols]() {
            if (od->grad.empty()) return;
            int64_t coff = 0;
            for (const auto& s : srcs) {
                const int64_t pc = static_cast<int64_t>(s->value.size()) / rows;
                if (s->requires_grad) {
                    ensure_grad(s);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t j = 0; j < pc; ++j)
                            s->grad[r * pc + j] += od->grad[r * cols + coff + j];
                }
                coff += pc;
            }
        });
    }
    return out;
}

// out[b*reps + s, :] = m[b, :]
template <typename T>
Tensor<T> repeat_rows(Tape<T>& tape, const Tensor<T>& m, int64_t reps) {
    const int64_t b = m.rows(), d = m.cols();
    Tensor<T> out = Tensor<T>::zeros({b * reps, d});
    {
        auto mv = m.values();
        auto ov = out.values_mut();
        for (int64_t i = 0; i < b; ++i)
            for (int64_t r = 0; r < reps; ++r)
                std::copy_n(mv.data() + i * d, d, ov.data() + (i * reps + r) * d);
    }
    if (m.requires_grad()) {
        out.set_requires_grad(true);
        auto md = m.data_ptr();
        auto od = out.data_ptr();
        tape.record([md, od, b, d, reps]() {
            if (od->grad.empty()) return;
            ensure_grad(md);
            for (int64_t i = 0; i < b; ++i)
                for (int64_t r = 0; r < reps; ++r)
                    for (int64_t j = 0; j < d; ++j)
                        md->grad[i * d + j] += od->grad[(i * reps + r) * d + j];
        });
    }
    return out;
}

// out[b*rows + s, :] = m[s, :] for b in [0, reps)
template <typename T>
Tensor<T> tile_rows(Tape<T>& tape, const Tensor<T>& m, int64_t reps) {
    const int64_t rows = m.rows(), d = m.cols();
    Tensor<T> out = Tensor<T>::zeros({rows * reps, d});
    {
        auto mv = m.values();
        auto ov = out.values_mut();
        for (int64_t b = 0; b < reps; ++b)
            std::copy_n(mv.data(), rows * d, ov.data() + b * rows * d);
    }
    if (m.requires_grad()) {
        out.set_requires_grad(true);
        auto md = m.data_ptr();
        auto od = out.data_ptr();
        tape.record([md, od, rows, d, reps]() {
            if (od->grad.empty()) return;
            ensure_grad(md);
            for (int64_t b = 0; b < reps; ++b)
                for (int64_t i = 0; i < rows * d; ++i)
                    md->grad[i] += od->grad[b * rows * d + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, std::span<const int> ids) {
    const int64_t v = table.rows(), d = table.cols();
    const int64_t n = static_cast<int64_t>(ids.size());
    Tensor<T> out = Tensor<T>::zeros({n, d});
    {
        auto tv = table.values();
        auto ov = out.values_mut();
        for (int64_t i = 0; i < n; ++i) {
            if (ids[i] < 0 || ids[i] >= v) throw std::invalid_argument("embedding: id out of range");
            std::copy_n(tv.data() + ids[i] * d, d, ov.data() + i * d);
        }
    }
    if (table.requires_grad()) {
        out.set_requires_grad(true);
        auto td = table.data_ptr();
        auto od = out.data_ptr();
        std::vector<int> idv(ids.begin(), ids.end());
        tape.record([td, od, idv, d]() {
            if (od->grad.empty()) return;
            ensure_grad(td);
            for (size_t i = 0; i < idv.size(); ++i)
                for (int64_t j = 0; j < d; ++j)
                    td->grad[idv[i] * d + j] += od->grad[i * d + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// fixed-kernel 2-D convolution with replicate padding (Gaussian smoothing)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_replicate(Tape<T>& tape, const Tensor<T>& a, int k,
                           const std::vector<T>& weights) {
    if (a.rank() != 2) throw std::invalid_argument("conv2d_replicate: expected 2-D input");
    if (k < 1 || k % 2 == 0 || static_cast<int>(weights.size()) != k * k)
        throw std::invalid_argument("conv2d_replicate: invalid kernel");
    const int64_t h = a.rows(), w = a.cols();
    const int c = k / 2;
    Tensor<T> out = Tensor<T>::zeros({h, w});
    {
        auto av = a.values();
        auto ov = out.values_mut();
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                T acc = T(0);
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const int64_t sy = std::clamp<int64_t>(y + dy - c, 0, h - 1);
                        const int64_t sx = std::clamp<int64_t>(x + dx - c, 0, w - 1);
                        acc += weights[dy * k + dx] * av[sy * w + sx];
                    }
                ov[y * w + x] = acc;
            }
    }
    check_finite<T>(out.values(), "conv2d_replicate");
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto od = out.data_ptr();
        tape.record([ad, od, h, w, k, c, weights]() {
            if (od->grad.empty()) return;
            ensure_grad(ad);
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const T g = od->grad[y * w + x];
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int64_t sy = std::clamp<int64_t>(y + dy - c, 0, h - 1);
                            const int64_t sx = std::clamp<int64_t>(x + dx - c, 0, w - 1);
                            ad->grad[sy * w + sx] += weights[dy * k + dx] * g;
                        }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// row mixing (masked value injection)
// ---------------------------------------------------------------------------

// Rows where keep[i] != 0 come from `live` (gradients flow); other rows are
// replaced by the constant rows in `cached`.
template <typename T>
Tensor<T> mix_rows(Tape<T>& tape, const Tensor<T>& live, std::span<const T> cached,
                   const std::vector<uint8_t>& keep) {
    const int64_t rows = live.rows(), cols = live.cols();
    if (static_cast<int64_t>(keep.size()) != rows)
        throw std::invalid_argument("mix_rows: keep mask size mismatch");
    if (static_cast<int64_t>(cached.size()) != rows * cols)
        throw std::invalid_argument("mix_rows: cached size mismatch");
    Tensor<T> out = Tensor<T>::zeros({rows, cols});
    {
        auto lv = live.values();
        auto ov = out.values_mut();
        for (int64_t r = 0; r < rows; ++r) {
            const T* src = keep[r] ? lv.data() + r * cols : cached.data() + r * cols;
            std::copy_n(src, cols, ov.data() + r * cols);
        }
    }
    check_finite<T>(out.values(), "mix_rows");
    if (live.requires_grad()) {
        out.set_requires_grad(true);
        auto ld = live.data_ptr();
        auto od = out.data_ptr();
        tape.record([ld, od, rows, cols, keep]() {
            if (od->grad.empty()) return;
            ensure_grad(ld);
            for (int64_t r = 0; r < rows; ++r) {
                if (!keep[r]) continue;
                for (int64_t j = 0; j < cols; ++j)
                    ld->grad[r * cols + j] += od->grad[r * cols + j];
            }
        });
    }
    return out;
}

}  // namespace lore
