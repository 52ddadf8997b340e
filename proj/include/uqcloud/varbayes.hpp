#pragma once

#include "uqcloud/rng.hpp"
#include "uqcloud/tensor.hpp"

namespace uqcloud {

// Inverse of softplus: the x with log(1 + exp(x)) == y. Needs y > 0.
double inv_softplus(double y);

inline constexpr double kSpreadInit = 0.05;        // initial relative spread
inline constexpr double kPriorSigmaWeight = 4.0;   // prior stddev for weights
inline constexpr double kPriorSigmaBias = 8.0;     // prior stddev for biases
inline constexpr double kSigmaFloor = 1e-8;        // keeps the KL finite at mu == 0

// Mean-field family with a multiplicative spread: a parameter tensor is
// sampled as mu * (1 + tau * eps) with a single shared tau = softplus(delta)
// per tensor, so each element's stddev is tau * |mu|.
template <typename S>
struct VariationalParam {
    Tensor<S> mu;
    Tensor<S> delta;  // rank 0

    static VariationalParam make(Shape shape, double init_tau = kSpreadInit);
};

// tau = softplus(delta), as a rank-0 node on the graph.
template <typename S>
Tensor<S> spread(const VariationalParam<S>& p);

// Reparameterized draw: eps is a fresh N(0,1) constant, so gradients reach
// mu and delta only.
template <typename S>
Tensor<S> sample_variational(const VariationalParam<S>& p, RngStream& rng);

// KL(q || N(0, prior_sigma^2)) summed over all elements, with the per-element
// stddev floored at kSigmaFloor. Scalar node; differentiable in mu and delta.
template <typename S>
Tensor<S> kl_to_prior(const VariationalParam<S>& p, double prior_sigma);

// Scalar training loss: nll + kl_weight * kl_sum.
template <typename S>
Tensor<S> elbo_loss(const Tensor<S>& nll, const Tensor<S>& kl_sum, double kl_weight);

}  // namespace uqcloud
