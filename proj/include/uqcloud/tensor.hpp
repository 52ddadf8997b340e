#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uqcloud/rng.hpp"

namespace uqcloud {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local autodiff switch. Ops record backward closures only while
// enabled; NoGradGuard turns it off for a scope (inference paths).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward_fn;
    std::vector<S> aux;           // op scratch kept for backward (bn stats, ...)
    std::vector<std::int64_t> iaux;  // op scratch (argmax indices, ...)

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool needs_grad() const { return requires_grad || static_cast<bool>(backward_fn); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), S(0));
    }
};

// Dense row-major n-d array with an optional backward record. Copying a
// Tensor copies the handle, not the storage.
template <class S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<S>> n) : n_(std::move(n)) {}

    static Tensor leaf(Shape shape, std::vector<S> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, S value, bool requires_grad = false);
    static Tensor scalar(S value, bool requires_grad = false);  // rank 0

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::int64_t dim(size_t i) const { return n_->shape[i]; }
    std::int64_t rank() const { return static_cast<std::int64_t>(n_->shape.size()); }
    std::int64_t numel() const { return n_->numel(); }

    std::vector<S>& data() { return n_->data; }
    const std::vector<S>& data() const { return n_->data; }
    std::vector<S>& grad() { return n_->grad; }
    const std::vector<S>& grad() const { return n_->grad; }
    void ensure_grad() { n_->ensure_grad(); }
    void zero_grad() {
        if (!n_->grad.empty()) n_->grad.assign(n_->data.size(), S(0));
    }
    bool requires_grad() const { return n_->requires_grad; }

    S value() const;  // scalar tensors only

    std::shared_ptr<TensorNode<S>> node() const { return n_; }

private:
    std::shared_ptr<TensorNode<S>> n_;
};

// ---- elementwise / broadcast ----
// add/sub/mul accept equal shapes, or a rank-0 tensor on either side which
// broadcasts against the other operand.
template <class S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> add_scalar(const Tensor<S>& x, S c);
template <class S> Tensor<S> scale(const Tensor<S>& x, S c);
template <class S> Tensor<S> abs_val(const Tensor<S>& x);
template <class S> Tensor<S> clamp_min(const Tensor<S>& x, S lo);
template <class S> Tensor<S> exp_op(const Tensor<S>& x);
template <class S> Tensor<S> log_op(const Tensor<S>& x);
template <class S> Tensor<S> softplus(const Tensor<S>& x);
template <class S> Tensor<S> leaky_relu(const Tensor<S>& x, S slope);

// ---- reductions ----
template <class S> Tensor<S> sum(const Tensor<S>& x);   // -> rank 0
template <class S> Tensor<S> mean(const Tensor<S>& x);  // -> rank 0

// ---- linear algebra ----
// a: [...xK] (rank >= 2, leading dims flattened), b: [KxC] -> [...xC]
template <class S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
// a: [BxNxK], b: [BxKxC] -> [BxNxC]
template <class S> Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b);
// b: rank 1 [C], broadcast over leading dims of x [...xC]
template <class S> Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b);

// ---- shape ----
template <class S> Tensor<S> reshape_copy(const Tensor<S>& x, Shape shape);
// g: [BxC] -> [BxNxC] (repeat across the point axis)
template <class S> Tensor<S> expand_points(const Tensor<S>& g, std::int64_t n);
// concat on the last (channel) axis; leading dims must match
template <class S> Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b);

// ---- network-specific ----
template <class S> Tensor<S> log_softmax(const Tensor<S>& x);  // over last dim
// mean negative log-likelihood; logp rows are [...xm], labels has one entry
// per row in row-major order
template <class S> Tensor<S> nll_from_log_softmax(const Tensor<S>& logp,
                                                  const std::vector<std::int32_t>& labels);
// x: [BxNxC] -> [BxC]; ties to the lowest point index
template <class S> Tensor<S> max_over_points(const Tensor<S>& x);
// per-(batch,channel) winning point index of a max_over_points result
template <class S> const std::vector<std::int64_t>& pool_argmax(const Tensor<S>& pooled);

// Batch normalization over all leading dims (channels = last dim), fused
// into one node to keep the graph small. training=true uses batch stats and
// updates the running buffers in place (unbiased variance, rate `momentum`);
// training=false normalizes with the running buffers.
template <class S>
Tensor<S> batchnorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                    std::vector<S>* running_mean, std::vector<S>* running_var,
                    bool training, S momentum = S(0.1), S eps = S(1e-5));

// Reverse pass from a scalar loss. Visits each reachable node once in
// reverse topological order and accumulates into leaf grads. With
// free_graph=true (default) intermediate data/grad buffers are released as
// soon as their node has run, which caps peak memory during training.
template <class S> void backward(Tensor<S>& loss, bool free_graph = true);

// ---- parameter update ----
// v <- momentum*v + g; w <- w - lr*v
template <class S>
class SgdMomentum {
public:
    explicit SgdMomentum(S momentum) : momentum_(momentum) {}
    void add_param(const Tensor<S>& p);
    void step(S lr);
    void zero_grad();
    size_t num_params() const { return slots_.size(); }

private:
    struct Slot {
        Tensor<S> param;
        std::vector<S> velocity;
    };
    std::vector<Slot> slots_;
    S momentum_;
};

// ---- leaf fillers (no graph involvement) ----
template <class S> void fill_normal(Tensor<S>& t, RngStream& rng, double mean, double stddev);
template <class S> void fill_uniform(Tensor<S>& t, RngStream& rng, double lo, double hi);

}  // namespace uqcloud
