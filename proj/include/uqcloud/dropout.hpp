#pragma once

#include <string>
#include <vector>

#include "uqcloud/rng.hpp"
#include "uqcloud/tensor.hpp"

namespace uqcloud {

// Mask insertion points, named after the head layer whose input they hit.
enum class DropSite { head1, head2, head3 };

struct DropoutSpec {
    double drop_prob = 0.1;
    std::vector<DropSite> sites;  // empty means no dropout anywhere

    // "last_three" masks the inputs of all three hidden head layers,
    // "last_one" only the input of the last hidden head layer.
    static DropoutSpec preset(const std::string& name, double drop_prob = 0.1);
    static DropoutSpec none();

    bool active_at(DropSite site) const;
};

// Inverted-scaling multiplicative mask: each element is 0 with probability
// drop_prob and 1/(1 - drop_prob) otherwise, so the expectation is identity.
// Returned as a constant leaf; needs drop_prob in [0, 1).
template <typename S>
Tensor<S> dropout_mask(const Shape& shape, double drop_prob, RngStream& rng);

// x * dropout_mask(x.shape()). Fresh mask per call.
template <typename S>
Tensor<S> apply_dropout(const Tensor<S>& x, double drop_prob, RngStream& rng);

// weight_decay * sum of squared entries over the given parameter tensors,
// as a scalar node. Callers pass dense weights and biases only; batch-norm
// scale/shift parameters stay unpenalized.
template <typename S>
Tensor<S> l2_penalty(const std::vector<Tensor<S>>& params, double weight_decay);

}  // namespace uqcloud
