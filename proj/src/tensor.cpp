#include "uqcloud/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "uqcloud/error.hpp"

#if UQCLOUD_USE_BLAS
#include <cblas.h>
#endif

namespace uqcloud {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---------------------------------------------------------------- Tensor

template <class S>
Tensor<S> Tensor<S>::leaf(Shape shape, std::vector<S> data, bool requires_grad) {
    require(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
            "tensor: shape " + shape_str(shape) + " does not match data length " +
                std::to_string(data.size()));
    for (auto e : shape)
        require(e > 0, "tensor: non-positive extent in shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor<S>(std::move(n));
}

template <class S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), S(0), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
    std::vector<S> data(static_cast<size_t>(shape_numel(shape)), value);
    return leaf(std::move(shape), std::move(data), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
    return leaf(Shape{}, std::vector<S>{value}, requires_grad);
}

template <class S>
S Tensor<S>::value() const {
    require(n_ && n_->numel() == 1,
            "value(): tensor is not a scalar");
    return n_->data[0];
}

// ------------------------------------------------------------- op helpers

namespace {

template <class S>
using NodePtr = std::shared_ptr<TensorNode<S>>;

template <class S>
Tensor<S> make_result(Shape shape, std::vector<S> data,
                      std::vector<NodePtr<S>> parents,
                      std::function<void(TensorNode<S>&)> backward_fn) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const auto& p : parents)
            if (p->needs_grad()) { track = true; break; }
    }
    if (track) {
        n->is_leaf = false;
        n->requires_grad = false;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<S>(std::move(n));
}

template <class S>
void accumulate(TensorNode<S>& p, std::int64_t idx, S g) {
    p.grad[static_cast<size_t>(idx)] += g;
}

// dispatch GEMM: C[MxN] (+)= alpha * op(A) * op(B), row-major
template <class S>
void gemm(bool ta, bool tb, std::int64_t M, std::int64_t N, std::int64_t K, S alpha,
          const S* A, const S* B, S beta, S* C);

#if UQCLOUD_USE_BLAS
template <>
void gemm<float>(bool ta, bool tb, std::int64_t M, std::int64_t N, std::int64_t K,
                 float alpha, const float* A, const float* B, float beta, float* C) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
                static_cast<int>(ta ? M : K), B, static_cast<int>(tb ? K : N), beta, C,
                static_cast<int>(N));
}
template <>
void gemm<double>(bool ta, bool tb, std::int64_t M, std::int64_t N, std::int64_t K,
                  double alpha, const double* A, const double* B, double beta, double* C) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
                static_cast<int>(ta ? M : K), B, static_cast<int>(tb ? K : N), beta, C,
                static_cast<int>(N));
}
#else
template <class S>
void gemm(bool ta, bool tb, std::int64_t M, std::int64_t N, std::int64_t K, S alpha,
          const S* A, const S* B, S beta, S* C) {
    // reference kernel; A is (ta ? KxM : MxK), B is (tb ? NxK : KxN), row-major
    for (std::int64_t i = 0; i < M; ++i) {
        S* crow = C + i * N;
        if (beta == S(0)) {
            std::fill(crow, crow + N, S(0));
        } else if (beta != S(1)) {
            for (std::int64_t j = 0; j < N; ++j) crow[j] *= beta;
        }
        for (std::int64_t k = 0; k < K; ++k) {
            const S a = alpha * (ta ? A[k * M + i] : A[i * K + k]);
            if (a == S(0)) continue;
            const S* brow = tb ? nullptr : B + k * N;
            if (tb) {
                for (std::int64_t j = 0; j < N; ++j) crow[j] += a * B[j * K + k];
            } else {
                for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
            }
        }
    }
}
#endif

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// binary elementwise with rank-0 broadcast on either side
template <class S, class Fwd, class Bwd>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, Fwd fwd, Bwd bwd) {
    const bool a0 = a.rank() == 0, b0 = b.rank() == 0;
    if (!a0 && !b0) check_same_shape(a, b, name);
    const Shape& shape = a0 ? b.shape() : a.shape();
    const std::int64_t n = a0 ? b.numel() : a.numel();
    std::vector<S> out(static_cast<size_t>(n));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = fwd(ad[a0 ? 0 : static_cast<size_t>(i)],
                                          bd[b0 ? 0 : static_cast<size_t>(i)]);
    return make_result<S>(shape, std::move(out), {a.node(), b.node()},
        [a0, b0, bwd](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const bool wa = pa.needs_grad(), wb = pb.needs_grad();
            if (wa) pa.ensure_grad();
            if (wb) pb.ensure_grad();
            const std::int64_t n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const size_t ia = a0 ? 0 : static_cast<size_t>(i);
                const size_t ib = b0 ? 0 : static_cast<size_t>(i);
                const S g = self.grad[static_cast<size_t>(i)];
                S da, db;
                bwd(pa.data[ia], pb.data[ib], g, da, db);
                if (wa) pa.grad[ia] += da;
                if (wb) pb.grad[ib] += db;
            }
        });
}

// unary elementwise; backward receives (x, out, g) and returns dx
template <class S, class Fwd, class Bwd>
Tensor<S> unary_op(const Tensor<S>& x, Fwd fwd, Bwd bwd) {
    const std::int64_t n = x.numel();
    std::vector<S> out(static_cast<size_t>(n));
    const auto& xd = x.data();
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = fwd(xd[static_cast<size_t>(i)]);
    return make_result<S>(x.shape(), std::move(out), {x.node()},
        [bwd](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            const std::int64_t n = self.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const size_t k = static_cast<size_t>(i);
                p.grad[k] += bwd(p.data[k], self.data[k], self.grad[k]);
            }
        });
}

}  // namespace

// -------------------------------------------------------------- elementwise

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(a, b, "add",
        [](S x, S y) { return x + y; },
        [](S, S, S g, S& da, S& db) { da = g; db = g; });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(a, b, "sub",
        [](S x, S y) { return x - y; },
        [](S, S, S g, S& da, S& db) { da = g; db = -g; });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(a, b, "mul",
        [](S x, S y) { return x * y; },
        [](S x, S y, S g, S& da, S& db) { da = g * y; db = g * x; });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return unary_op<S>(x,
        [c](S v) { return v + c; },
        [](S, S, S g) { return g; });
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return unary_op<S>(x,
        [c](S v) { return c * v; },
        [c](S, S, S g) { return c * g; });
}

template <class S>
Tensor<S> abs_val(const Tensor<S>& x) {
    return unary_op<S>(x,
        [](S v) { return std::abs(v); },
        [](S v, S, S g) { return v > S(0) ? g : (v < S(0) ? -g : S(0)); });
}

template <class S>
Tensor<S> clamp_min(const Tensor<S>& x, S lo) {
    return unary_op<S>(x,
        [lo](S v) { return v < lo ? lo : v; },
        [lo](S v, S, S g) { return v > lo ? g : S(0); });
}

template <class S>
Tensor<S> exp_op(const Tensor<S>& x) {
    return unary_op<S>(x,
        [](S v) { return std::exp(v); },
        [](S, S out, S g) { return g * out; });
}

template <class S>
Tensor<S> log_op(const Tensor<S>& x) {
    return unary_op<S>(x,
        [](S v) { return std::log(v); },
        [](S v, S, S g) { return g / v; });
}

template <class S>
Tensor<S> softplus(const Tensor<S>& x) {
    // log(1+exp(v)); above 30 the identity is exact to double rounding
    return unary_op<S>(x,
        [](S v) {
            return v > S(30) ? v : S(std::log1p(std::exp(static_cast<double>(v))));
        },
        [](S v, S, S g) {
            double s;
            if (v > S(0)) {
                s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
            } else {
                const double e = std::exp(static_cast<double>(v));
                s = e / (1.0 + e);
            }
            return static_cast<S>(g * s);
        });
}

template <class S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
    require(slope >= S(0) && slope < S(1), "leaky_relu: slope must lie in [0,1)");
    return unary_op<S>(x,
        [slope](S v) { return v > S(0) ? v : slope * v; },
        // convention: gradient at exactly 0 uses the slope
        [slope](S v, S, S g) { return v > S(0) ? g : slope * g; });
}

// -------------------------------------------------------------- reductions

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    double acc = 0;
    for (S v : x.data()) acc += static_cast<double>(v);
    std::vector<S> out{static_cast<S>(acc)};
    return make_result<S>(Shape{}, std::move(out), {x.node()},
        [](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            const S g = self.grad[0];
            for (auto& v : p.grad) v += g;
        });
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    const std::int64_t n = x.numel();
    double acc = 0;
    for (S v : x.data()) acc += static_cast<double>(v);
    std::vector<S> out{static_cast<S>(acc / static_cast<double>(n))};
    return make_result<S>(Shape{}, std::move(out), {x.node()},
        [n](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            const S g = self.grad[0] / static_cast<S>(n);
            for (auto& v : p.grad) v += g;
        });
}

// ---------------------------------------------------------- linear algebra

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() >= 2, "matmul: left operand must have rank >= 2, got " +
                               shape_str(a.shape()));
    require(b.rank() == 2, "matmul: right operand must have rank 2, got " +
                               shape_str(b.shape()));
    const std::int64_t k = a.shape().back();
    require(k == b.dim(0), "matmul: inner extents differ: " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
    const std::int64_t c = b.dim(1);
    const std::int64_t r = a.numel() / k;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(c);
    std::vector<S> out(static_cast<size_t>(r * c));
    gemm<S>(false, false, r, c, k, S(1), a.data().data(), b.data().data(), S(0), out.data());
    return make_result<S>(std::move(out_shape), std::move(out), {a.node(), b.node()},
        [r, k, c](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.needs_grad()) {
                pa.ensure_grad();
                // dA += G * B^T
                gemm<S>(false, true, r, k, c, S(1), self.grad.data(), pb.data.data(), S(1),
                        pa.grad.data());
            }
            if (pb.needs_grad()) {
                pb.ensure_grad();
                // dB += A^T * G
                gemm<S>(true, false, k, c, r, S(1), pa.data.data(), self.grad.data(), S(1),
                        pb.grad.data());
            }
        });
}

template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == 3 && b.rank() == 3,
            "bmm: operands must have rank 3, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
            "bmm: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::int64_t bs = a.dim(0), n = a.dim(1), k = a.dim(2), c = b.dim(2);
    std::vector<S> out(static_cast<size_t>(bs * n * c));
    for (std::int64_t i = 0; i < bs; ++i)
        gemm<S>(false, false, n, c, k, S(1), a.data().data() + i * n * k,
                b.data().data() + i * k * c, S(0), out.data() + i * n * c);
    return make_result<S>(Shape{bs, n, c}, std::move(out), {a.node(), b.node()},
        [bs, n, k, c](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.needs_grad()) pa.ensure_grad();
            if (pb.needs_grad()) pb.ensure_grad();
            for (std::int64_t i = 0; i < bs; ++i) {
                const S* g = self.grad.data() + i * n * c;
                if (pa.needs_grad())
                    gemm<S>(false, true, n, k, c, S(1), g, pb.data.data() + i * k * c, S(1),
                            pa.grad.data() + i * n * k);
                if (pb.needs_grad())
                    gemm<S>(true, false, k, c, n, S(1), pa.data.data() + i * n * k, g, S(1),
                            pb.grad.data() + i * k * c);
            }
        });
}

template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
    require(b.rank() == 1, "add_bias: bias must have rank 1, got " + shape_str(b.shape()));
    require(x.rank() >= 1 && x.shape().back() == b.dim(0),
            "add_bias: channel mismatch " + shape_str(x.shape()) + " vs " +
                shape_str(b.shape()));
    const std::int64_t c = b.dim(0);
    const std::int64_t r = x.numel() / c;
    std::vector<S> out(x.data().size());
    const auto& xd = x.data();
    const auto& bd = b.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<size_t>(i * c + j)] =
                xd[static_cast<size_t>(i * c + j)] + bd[static_cast<size_t>(j)];
    return make_result<S>(x.shape(), std::move(out), {x.node(), b.node()},
        [r, c](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pb = *self.parents[1];
            if (px.needs_grad()) {
                px.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
            }
            if (pb.needs_grad()) {
                pb.ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        pb.grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * c + j)];
            }
        });
}

// ------------------------------------------------------------------- shape

template <class S>
Tensor<S> reshape_copy(const Tensor<S>& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<S> out = x.data();
    return make_result<S>(std::move(shape), std::move(out), {x.node()},
        [](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        });
}

template <class S>
Tensor<S> expand_points(const Tensor<S>& g, std::int64_t n) {
    require(g.rank() == 2, "expand_points: input must be rank 2, got " + shape_str(g.shape()));
    require(n >= 1, "expand_points: point count must be positive");
    const std::int64_t b = g.dim(0), c = g.dim(1);
    std::vector<S> out(static_cast<size_t>(b * n * c));
    const auto& gd = g.data();
    for (std::int64_t i = 0; i < b; ++i) {
        const S* row = gd.data() + i * c;
        for (std::int64_t p = 0; p < n; ++p)
            std::copy(row, row + c, out.data() + (i * n + p) * c);
    }
    return make_result<S>(Shape{b, n, c}, std::move(out), {g.node()},
        [b, n, c](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t pt = 0; pt < n; ++pt) {
                    const S* g = self.grad.data() + (i * n + pt) * c;
                    S* dst = p.grad.data() + i * c;
                    for (std::int64_t j = 0; j < c; ++j) dst[j] += g[j];
                }
        });
}

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == b.rank() && a.rank() >= 1,
            "concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (size_t i = 0; i + 1 < a.shape().size(); ++i)
        require(a.shape()[i] == b.shape()[i],
                "concat: leading extents differ: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    const std::int64_t ca = a.shape().back(), cb = b.shape().back();
    const std::int64_t r = a.numel() / ca;
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    std::vector<S> out(static_cast<size_t>(r * (ca + cb)));
    for (std::int64_t i = 0; i < r; ++i) {
        std::copy(a.data().data() + i * ca, a.data().data() + (i + 1) * ca,
                  out.data() + i * (ca + cb));
        std::copy(b.data().data() + i * cb, b.data().data() + (i + 1) * cb,
                  out.data() + i * (ca + cb) + ca);
    }
    return make_result<S>(std::move(out_shape), std::move(out), {a.node(), b.node()},
        [r, ca, cb](TensorNode<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.needs_grad()) pa.ensure_grad();
            if (pb.needs_grad()) pb.ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const S* g = self.grad.data() + i * (ca + cb);
                if (pa.needs_grad())
                    for (std::int64_t j = 0; j < ca; ++j) pa.grad[static_cast<size_t>(i * ca + j)] += g[j];
                if (pb.needs_grad())
                    for (std::int64_t j = 0; j < cb; ++j) pb.grad[static_cast<size_t>(i * cb + j)] += g[ca + j];
            }
        });
}

// -------------------------------------------------------- network-specific

template <class S>
Tensor<S> log_softmax(const Tensor<S>& x) {
    require(x.rank() >= 1 && x.shape().back() >= 2,
            "log_softmax: last extent must be >= 2, got " + shape_str(x.shape()));
    const std::int64_t m = x.shape().back();
    const std::int64_t r = x.numel() / m;
    std::vector<S> out(x.data().size());
    const auto& xd = x.data();
    for (std::int64_t i = 0; i < r; ++i) {
        const S* row = xd.data() + i * m;
        S mx = row[0];
        for (std::int64_t j = 0; j < m; ++j) {
            require(std::isfinite(static_cast<double>(row[j])), "log_softmax: non-finite input");
            mx = std::max(mx, row[j]);
        }
        double lse = 0;
        for (std::int64_t j = 0; j < m; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
        const S shift = mx + static_cast<S>(std::log(lse));
        for (std::int64_t j = 0; j < m; ++j)
            out[static_cast<size_t>(i * m + j)] = row[j] - shift;
    }
    return make_result<S>(x.shape(), std::move(out), {x.node()},
        [r, m](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const S* g = self.grad.data() + i * m;
                const S* o = self.data.data() + i * m;
                double gsum = 0;
                for (std::int64_t j = 0; j < m; ++j) gsum += static_cast<double>(g[j]);
                S* dst = p.grad.data() + i * m;
                for (std::int64_t j = 0; j < m; ++j)
                    dst[j] += g[j] - static_cast<S>(std::exp(static_cast<double>(o[j])) * gsum);
            }
        });
}

template <class S>
Tensor<S> nll_from_log_softmax(const Tensor<S>& logp, const std::vector<std::int32_t>& labels) {
    const std::int64_t m = logp.shape().back();
    const std::int64_t r = logp.numel() / m;
    require(static_cast<std::int64_t>(labels.size()) == r,
            "nll: expected " + std::to_string(r) + " labels, got " +
                std::to_string(labels.size()));
    double acc = 0;
    for (std::int64_t i = 0; i < r; ++i) {
        const std::int32_t lab = labels[static_cast<size_t>(i)];
        require(lab >= 0 && lab < m, "nll: label " + std::to_string(lab) +
                                         " out of range [0," + std::to_string(m) + ")");
        acc -= static_cast<double>(logp.data()[static_cast<size_t>(i * m + lab)]);
    }
    std::vector<S> out{static_cast<S>(acc / static_cast<double>(r))};
    // the labels vector is copied into the closure
    return make_result<S>(Shape{}, std::move(out), {logp.node()},
        [m, r, labels](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            const S g = self.grad[0] / static_cast<S>(r);
            for (std::int64_t i = 0; i < r; ++i)
                p.grad[static_cast<size_t>(i * m + labels[static_cast<size_t>(i)])] -= g;
        });
}

template <class S>
Tensor<S> max_over_points(const Tensor<S>& x) {
    require(x.rank() == 3, "max_over_points: input must be [BxNxC], got " +
                               shape_str(x.shape()));
    const std::int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
    std::vector<S> out(static_cast<size_t>(b * c));
    std::vector<std::int64_t> arg(static_cast<size_t>(b * c), 0);
    const auto& xd = x.data();
    for (std::int64_t i = 0; i < b; ++i) {
        std::copy(xd.data() + i * n * c, xd.data() + i * n * c + c, out.data() + i * c);
        for (std::int64_t p = 1; p < n; ++p) {
            const S* row = xd.data() + (i * n + p) * c;
            for (std::int64_t j = 0; j < c; ++j) {
                // strict > keeps the lowest point index on ties
                if (row[j] > out[static_cast<size_t>(i * c + j)]) {
                    out[static_cast<size_t>(i * c + j)] = row[j];
                    arg[static_cast<size_t>(i * c + j)] = p;
                }
            }
        }
    }
    auto res = make_result<S>(Shape{b, c}, std::move(out), {x.node()},
        [b, n, c](TensorNode<S>& self) {
            auto& p = *self.parents[0];
            if (!p.needs_grad()) return;
            p.ensure_grad();
            for (std::int64_t i = 0; i < b; ++i)
                for (std::int64_t j = 0; j < c; ++j) {
                    const std::int64_t win = self.iaux[static_cast<size_t>(i * c + j)];
                    p.grad[static_cast<size_t>((i * n + win) * c + j)] +=
                        self.grad[static_cast<size_t>(i * c + j)];
                }
        });
    res.node()->iaux = std::move(arg);
    return res;
}

template <class S>
const std::vector<std::int64_t>& pool_argmax(const Tensor<S>& pooled) {
    require(!pooled.node()->iaux.empty(),
            "pool_argmax: tensor does not carry pooling indices");
    return pooled.node()->iaux;
}

template <class S>
Tensor<S> batchnorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                    std::vector<S>* running_mean, std::vector<S>* running_var,
                    bool training, S momentum, S eps) {
    require(x.rank() >= 2, "batchnorm: input must have rank >= 2, got " + shape_str(x.shape()));
    const std::int64_t c = x.shape().back();
    require(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
            "batchnorm: parameter shape mismatch for " + std::to_string(c) + " channels");
    require(running_mean && running_var &&
                static_cast<std::int64_t>(running_mean->size()) == c &&
                static_cast<std::int64_t>(running_var->size()) == c,
            "batchnorm: running buffers must hold one entry per channel");
    const std::int64_t r = x.numel() / c;
    std::vector<S> mu(static_cast<size_t>(c)), inv(static_cast<size_t>(c));
    if (training) {
        require(r >= 2, "batchnorm: training pass needs at least 2 rows, got " +
                            std::to_string(r));
        std::vector<double> acc(static_cast<size_t>(c), 0.0);
        const auto& xd = x.data();
        for (std::int64_t i = 0; i < r; ++i) {
            const S* row = xd.data() + i * c;
            for (std::int64_t j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += row[j];
        }
        for (std::int64_t j = 0; j < c; ++j)
            mu[static_cast<size_t>(j)] = static_cast<S>(acc[static_cast<size_t>(j)] / r);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t i = 0; i < r; ++i) {
            const S* row = xd.data() + i * c;
            for (std::int64_t j = 0; j < c; ++j) {
                const double d = row[j] - mu[static_cast<size_t>(j)];
                acc[static_cast<size_t>(j)] += d * d;
            }
        }
        for (std::int64_t j = 0; j < c; ++j) {
            const double var = acc[static_cast<size_t>(j)] / r;
            inv[static_cast<size_t>(j)] =
                static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            // running stats keep the unbiased variance
            (*running_mean)[static_cast<size_t>(j)] =
                (S(1) - momentum) * (*running_mean)[static_cast<size_t>(j)] +
                momentum * mu[static_cast<size_t>(j)];
            (*running_var)[static_cast<size_t>(j)] =
                (S(1) - momentum) * (*running_var)[static_cast<size_t>(j)] +
                momentum * static_cast<S>(var * r / (r - 1));
        }
    } else {
        for (std::int64_t j = 0; j < c; ++j) {
            mu[static_cast<size_t>(j)] = (*running_mean)[static_cast<size_t>(j)];
            inv[static_cast<size_t>(j)] = static_cast<S>(
                1.0 / std::sqrt(static_cast<double>((*running_var)[static_cast<size_t>(j)]) +
                                static_cast<double>(eps)));
        }
    }
    std::vector<S> out(x.data().size());
    {
        const auto& xd = x.data();
        const auto& gd = gamma.data();
        const auto& bd = beta.data();
        for (std::int64_t i = 0; i < r; ++i) {
            const S* row = xd.data() + i * c;
            S* dst = out.data() + i * c;
            for (std::int64_t j = 0; j < c; ++j) {
                const size_t sj = static_cast<size_t>(j);
                dst[j] = gd[sj] * (row[j] - mu[sj]) * inv[sj] + bd[sj];
            }
        }
    }
    auto res = make_result<S>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
        [r, c, training](TensorNode<S>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const S* mu = self.aux.data();
            const S* inv = self.aux.data() + c;
            // per-channel sums of g and g*xhat
            std::vector<double> sg(static_cast<size_t>(c), 0.0), sgx(static_cast<size_t>(c), 0.0);
            for (std::int64_t i = 0; i < r; ++i) {
                const S* g = self.grad.data() + i * c;
                const S* xr = px.data.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    const size_t sj = static_cast<size_t>(j);
                    sg[sj] += g[j];
                    sgx[sj] += static_cast<double>(g[j]) * (xr[j] - mu[sj]) * inv[sj];
                }
            }
            if (pb.needs_grad()) {
                pb.ensure_grad();
                for (std::int64_t j = 0; j < c; ++j)
                    pb.grad[static_cast<size_t>(j)] += static_cast<S>(sg[static_cast<size_t>(j)]);
            }
            if (pg.needs_grad()) {
                pg.ensure_grad();
                for (std::int64_t j = 0; j < c; ++j)
                    pg.grad[static_cast<size_t>(j)] += static_cast<S>(sgx[static_cast<size_t>(j)]);
            }
            if (px.needs_grad()) {
                px.ensure_grad();
                const auto& gd = pg.data;
                for (std::int64_t i = 0; i < r; ++i) {
                    const S* g = self.grad.data() + i * c;
                    const S* xr = px.data.data() + i * c;
                    S* dst = px.grad.data() + i * c;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const size_t sj = static_cast<size_t>(j);
                        const S k = gd[sj] * inv[sj];
                        if (training) {
                            const S xhat = (xr[j] - mu[sj]) * inv[sj];
                            dst[j] += k * (g[j] -
                                           static_cast<S>(sg[sj] / static_cast<double>(r)) -
                                           xhat * static_cast<S>(sgx[sj] / static_cast<double>(r)));
                        } else {
                            dst[j] += k * g[j];
                        }
                    }
                }
            }
        });
    auto& aux = res.node()->aux;
    aux.reserve(mu.size() + inv.size());
    aux.insert(aux.end(), mu.begin(), mu.end());
    aux.insert(aux.end(), inv.begin(), inv.end());
    return res;
}

// ---------------------------------------------------------------- backward

template <class S>
void backward(Tensor<S>& loss, bool free_graph) {
    require(loss.defined() && loss.numel() == 1,
            "backward: loss must be a scalar, got shape " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    auto root = loss.node();
    if (!root->needs_grad()) return;  // disconnected from parameters

    // children-first topological order over nodes that can route gradient
    std::vector<NodePtr<S>> order;
    std::unordered_set<TensorNode<S>*> seen;
    struct Frame {
        NodePtr<S> node;
        size_t next = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({root});
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            NodePtr<S> p = f.node->parents[f.next++];
            if (p->needs_grad() && seen.insert(p.get()).second)
                stack.push_back({std::move(p)});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>& n = **it;
        if (n.backward_fn) {
            n.ensure_grad();
            n.backward_fn(n);
        }
        if (free_graph && !n.is_leaf) {
            std::vector<S>().swap(n.data);
            std::vector<S>().swap(n.grad);
            std::vector<S>().swap(n.aux);
            std::vector<std::int64_t>().swap(n.iaux);
            n.backward_fn = nullptr;
            n.parents.clear();
        }
    }
}

// ------------------------------------------------------------------ update

template <class S>
void SgdMomentum<S>::add_param(const Tensor<S>& p) {
    require(p.defined() && p.requires_grad(), "optimizer: parameter must require grad");
    Slot s;
    s.param = p;
    s.velocity.assign(p.data().size(), S(0));
    slots_.push_back(std::move(s));
}

template <class S>
void SgdMomentum<S>::step(S lr) {
    require(lr > S(0), "optimizer: learning rate must be positive");
    for (auto& s : slots_) {
        auto& data = s.param.data();
        const auto& grad = s.param.grad();
        for (size_t i = 0; i < data.size(); ++i) {
            const S g = grad.empty() ? S(0) : grad[i];
            s.velocity[i] = momentum_ * s.velocity[i] + g;
            data[i] -= lr * s.velocity[i];
        }
    }
}

template <class S>
void SgdMomentum<S>::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

// ------------------------------------------------------------ leaf fillers

template <class S>
void fill_normal(Tensor<S>& t, RngStream& rng, double mean, double stddev) {
    for (auto& v : t.data()) v = static_cast<S>(rng.normal(mean, stddev));
}

template <class S>
void fill_uniform(Tensor<S>& t, RngStream& rng, double lo, double hi) {
    for (auto& v : t.data()) v = static_cast<S>(rng.uniform(lo, hi));
}

// ------------------------------------------------------- instantiations

#define UQCLOUD_INSTANTIATE(S)                                                            \
    template class Tensor<S>;                                                             \
    template class SgdMomentum<S>;                                                        \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> add_scalar<S>(const Tensor<S>&, S);                                \
    template Tensor<S> scale<S>(const Tensor<S>&, S);                                     \
    template Tensor<S> abs_val<S>(const Tensor<S>&);                                      \
    template Tensor<S> clamp_min<S>(const Tensor<S>&, S);                                 \
    template Tensor<S> exp_op<S>(const Tensor<S>&);                                      \
    template Tensor<S> log_op<S>(const Tensor<S>&);                                      \
    template Tensor<S> softplus<S>(const Tensor<S>&);                                     \
    template Tensor<S> leaky_relu<S>(const Tensor<S>&, S);                                \
    template Tensor<S> sum<S>(const Tensor<S>&);                                          \
    template Tensor<S> mean<S>(const Tensor<S>&);                                         \
    template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                     \
    template Tensor<S> bmm<S>(const Tensor<S>&, const Tensor<S>&);                        \
    template Tensor<S> add_bias<S>(const Tensor<S>&, const Tensor<S>&);                   \
    template Tensor<S> reshape_copy<S>(const Tensor<S>&, Shape);                          \
    template Tensor<S> expand_points<S>(const Tensor<S>&, std::int64_t);                  \
    template Tensor<S> concat_channels<S>(const Tensor<S>&, const Tensor<S>&);            \
    template Tensor<S> log_softmax<S>(const Tensor<S>&);                                  \
    template Tensor<S> nll_from_log_softmax<S>(const Tensor<S>&,                          \
                                               const std::vector<std::int32_t>&);         \
    template Tensor<S> max_over_points<S>(const Tensor<S>&);                              \
    template const std::vector<std::int64_t>& pool_argmax<S>(const Tensor<S>&);           \
    template Tensor<S> batchnorm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                    std::vector<S>*, std::vector<S>*, bool, S, S);        \
    template void backward<S>(Tensor<S>&, bool);                                          \
    template void fill_normal<S>(Tensor<S>&, RngStream&, double, double);                 \
    template void fill_uniform<S>(Tensor<S>&, RngStream&, double, double);

UQCLOUD_INSTANTIATE(float)
UQCLOUD_INSTANTIATE(double)

#undef UQCLOUD_INSTANTIATE

}  // namespace uqcloud
