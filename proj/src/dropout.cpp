#include "uqcloud/dropout.hpp"

#include <algorithm>

#include "uqcloud/error.hpp"

namespace uqcloud {

DropoutSpec DropoutSpec::preset(const std::string& name, double drop_prob) {
    DropoutSpec spec;
    spec.drop_prob = drop_prob;
    if (name == "last_three")
        spec.sites = {DropSite::head1, DropSite::head2, DropSite::head3};
    else if (name == "last_one")
        spec.sites = {DropSite::head3};
    else
        fail("dropout: unknown preset '" + name + "' (expected last_three or last_one)");
    return spec;
}

DropoutSpec DropoutSpec::none() { return DropoutSpec{0.0, {}}; }

bool DropoutSpec::active_at(DropSite site) const {
    return std::find(sites.begin(), sites.end(), site) != sites.end();
}

template <typename S>
Tensor<S> dropout_mask(const Shape& shape, double drop_prob, RngStream& rng) {
    require(drop_prob >= 0 && drop_prob < 1, "dropout: drop probability must lie in [0, 1)");
    const S keep_scale = static_cast<S>(1.0 / (1.0 - drop_prob));
    std::vector<S> mask(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : mask) v = rng.bernoulli(drop_prob) ? static_cast<S>(0) : keep_scale;
    return Tensor<S>::leaf(shape, std::move(mask));
}

template <typename S>
Tensor<S> apply_dropout(const Tensor<S>& x, double drop_prob, RngStream& rng) {
    return mul(x, dropout_mask<S>(x.shape(), drop_prob, rng));
}

template <typename S>
Tensor<S> l2_penalty(const std::vector<Tensor<S>>& params, double weight_decay) {
    require(!params.empty(), "l2_penalty: no parameter tensors given");
    require(weight_decay >= 0, "l2_penalty: weight decay must be non-negative");
    Tensor<S> total = sum(mul(params[0], params[0]));
    for (size_t i = 1; i < params.size(); ++i)
        total = add(total, sum(mul(params[i], params[i])));
    return scale(total, static_cast<S>(weight_decay));
}

template Tensor<float> dropout_mask(const Shape&, double, RngStream&);
template Tensor<double> dropout_mask(const Shape&, double, RngStream&);
template Tensor<float> apply_dropout(const Tensor<float>&, double, RngStream&);
template Tensor<double> apply_dropout(const Tensor<double>&, double, RngStream&);
template Tensor<float> l2_penalty(const std::vector<Tensor<float>>&, double);
template Tensor<double> l2_penalty(const std::vector<Tensor<double>>&, double);

}  // namespace uqcloud
