#include "uqcloud/varbayes.hpp"

#include <cmath>

#include "uqcloud/error.hpp"

namespace uqcloud {

double inv_softplus(double y) {
    require(y > 0, "inv_softplus: argument must be positive");
    if (y > 30) return y;  // softplus is the identity out here
    return std::log(std::expm1(y));
}

template <typename S>
VariationalParam<S> VariationalParam<S>::make(Shape shape, double init_tau) {
    VariationalParam<S> p;
    p.mu = Tensor<S>::zeros(std::move(shape), /*requires_grad=*/true);
    p.delta = Tensor<S>::scalar(static_cast<S>(inv_softplus(init_tau)), /*requires_grad=*/true);
    return p;
}

template <typename S>
Tensor<S> spread(const VariationalParam<S>& p) {
    return softplus(p.delta);
}

template <typename S>
Tensor<S> sample_variational(const VariationalParam<S>& p, RngStream& rng) {
    std::vector<S> eps(static_cast<size_t>(p.mu.numel()));
    for (auto& e : eps) e = static_cast<S>(rng.normal());
    auto noise = Tensor<S>::leaf(p.mu.shape(), std::move(eps));
    // mu * (1 + tau * eps)
    return mul(p.mu, add_scalar(mul(noise, spread(p)), static_cast<S>(1)));
}

template <typename S>
Tensor<S> kl_to_prior(const VariationalParam<S>& p, double prior_sigma) {
    require(prior_sigma > 0, "kl_to_prior: prior stddev must be positive");
    // sig_q = max(tau * |mu|, floor), elementwise
    auto sig_q = clamp_min(mul(abs_val(p.mu), spread(p)), static_cast<S>(kSigmaFloor));
    // per element: log(sig_p / sig_q) + (sig_q^2 + mu^2) / (2 sig_p^2) - 1/2
    const double inv_two_var = 1.0 / (2.0 * prior_sigma * prior_sigma);
    auto quad = scale(add(mul(sig_q, sig_q), mul(p.mu, p.mu)), static_cast<S>(inv_two_var));
    auto per_elem = add_scalar(sub(quad, log_op(sig_q)),
                               static_cast<S>(std::log(prior_sigma) - 0.5));
    return sum(per_elem);
}

template <typename S>
Tensor<S> elbo_loss(const Tensor<S>& nll, const Tensor<S>& kl_sum, double kl_weight) {
    require(nll.rank() == 0 && kl_sum.rank() == 0, "elbo_loss: both terms must be scalars");
    require(kl_weight >= 0, "elbo_loss: kl_weight must be non-negative");
    return add(nll, scale(kl_sum, static_cast<S>(kl_weight)));
}

template struct VariationalParam<float>;
template struct VariationalParam<double>;
template Tensor<float> spread(const VariationalParam<float>&);
template Tensor<double> spread(const VariationalParam<double>&);
template Tensor<float> sample_variational(const VariationalParam<float>&, RngStream&);
template Tensor<double> sample_variational(const VariationalParam<double>&, RngStream&);
template Tensor<float> kl_to_prior(const VariationalParam<float>&, double);
template Tensor<double> kl_to_prior(const VariationalParam<double>&, double);
template Tensor<float> elbo_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> elbo_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace uqcloud
