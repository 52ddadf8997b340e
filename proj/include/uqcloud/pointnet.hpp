#pragma once

#include <map>
#include <string>
#include <vector>

#include "uqcloud/dropout.hpp"
#include "uqcloud/rng.hpp"
#include "uqcloud/tensor.hpp"
#include "uqcloud/varbayes.hpp"

namespace uqcloud {

enum class Regime { frequentist, dropout, bayes };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct NetConfig {
    int classes = 6;
    Regime regime = Regime::frequentist;
    DropoutSpec drop;  // consulted in the dropout regime only
    double prior_sigma_w = kPriorSigmaWeight;
    double prior_sigma_b = kPriorSigmaBias;
};

// One linear layer. Frequentist and dropout regimes hold point weights,
// the Bayes regime holds a variational posterior per tensor instead.
template <typename S>
struct Dense {
    int in = 0, out = 0;
    bool variational = false;
    Tensor<S> w, b;                // [in, out], [out]
    VariationalParam<S> vw, vb;

    // Weight/bias for one forward pass. A variational layer draws a fresh
    // reparameterized sample from rng, or falls back to the posterior mean
    // when rng is null.
    Tensor<S> weight(RngStream* rng) const;
    Tensor<S> bias(RngStream* rng) const;
};

template <typename S>
struct BatchNormParams {
    Tensor<S> gamma, beta;          // trainable, [C]
    std::vector<S> running_mean, running_var;  // eval-time buffers
};

// Segmentation network over per-point features: a 6x6 input transform, a
// pointwise 64-channel embedding, a 64x64 feature transform, the widening
// pointwise stack to 1024 channels, a max-pool to one global descriptor,
// and a per-point head over [local(64) | global(1024)] = 1088 channels.
template <typename S>
struct SegNet {
    NetConfig cfg;
    std::map<std::string, Dense<S>> dense;          // keyed by layer name
    std::map<std::string, BatchNormParams<S>> bn;   // subset of the above keys
};

// Fresh network with Kaiming-normal weights, zero biases, identity-map
// initialization for both transform regressors, and unit/zero batch-norm
// parameters. In the Bayes regime every posterior spread starts at
// kSpreadInit. Draw order is fixed, so one seed gives one network.
template <typename S>
SegNet<S> make_seg_net(const NetConfig& cfg, RngStream& rng);

struct ForwardOpts {
    bool training = false;        // batch-norm mode
    bool sample_dropout = false;  // draw masks (training or MC inference)
    RngStream* rng = nullptr;     // noise source for masks and weight draws
};

template <typename S>
struct SegOutput {
    Tensor<S> log_probs;    // [B, N, classes]
    Tensor<S> input_tf;     // [B, 6, 6]
    Tensor<S> feature_tf;   // [B, 64, 64]
    Tensor<S> global_feat;  // [B, C] pooled block descriptor
};

// x: [B, N, 6] (centered coordinates and normalized colors). Any N >= 1 is
// accepted here; fixed-size blocks are the callers' concern.
template <typename S>
SegOutput<S> seg_forward(SegNet<S>& net, const Tensor<S>& x, const ForwardOpts& opts);

// All trainable tensors by checkpoint name (excludes running statistics).
template <typename S>
std::map<std::string, Tensor<S>> trainable_params(SegNet<S>& net);

// Dense weights and biases only — the tensors subject to weight decay.
template <typename S>
std::vector<Tensor<S>> decay_params(SegNet<S>& net);

// Bayes regime: total KL of all layer posteriors against their priors.
template <typename S>
Tensor<S> net_kl(SegNet<S>& net);

}  // namespace uqcloud
