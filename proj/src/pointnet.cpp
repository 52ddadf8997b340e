#include "uqcloud/pointnet.hpp"

#include <cmath>

#include "uqcloud/error.hpp"

namespace uqcloud {

namespace {

constexpr double kLeakySlope = 0.01;

struct LayerDef {
    const char* name;
    int in;
    int out;   // -1 marks the class-count output layer
    bool has_bn;
    bool identity_init;  // transform regressor output layers
};

// The fixed layer list. Array order is the weight-draw order at init time;
// map order (lexicographic) governs checkpoints and optimizer registration.
constexpr LayerDef kLayers[] = {
    {"tin.conv1", 6, 64, true, false},
    {"tin.conv2", 64, 128, true, false},
    {"tin.conv3", 128, 1024, true, false},
    {"tin.fc1", 1024, 512, true, false},
    {"tin.fc2", 512, 256, true, false},
    {"tin.fc3", 256, 36, false, true},
    {"conv1", 6, 64, true, false},
    {"tf.conv1", 64, 64, true, false},
    {"tf.conv2", 64, 128, true, false},
    {"tf.conv3", 128, 1024, true, false},
    {"tf.fc1", 1024, 512, true, false},
    {"tf.fc2", 512, 256, true, false},
    {"tf.fc3", 256, 4096, false, true},
    {"conv2", 64, 128, true, false},
    {"conv3", 128, 1024, true, false},
    {"head1", 1088, 512, true, false},
    {"head2", 512, 256, true, false},
    {"head3", 256, 128, true, false},
    {"head4", 128, -1, false, false},
};

template <typename S>
std::vector<S> flat_identity(int k) {
    std::vector<S> m(static_cast<size_t>(k) * static_cast<size_t>(k), S(0));
    for (int i = 0; i < k; ++i) m[static_cast<size_t>(i * k + i)] = S(1);
    return m;
}

}  // namespace

std::string regime_name(Regime r) {
    switch (r) {
        case Regime::frequentist: return "frequentist";
        case Regime::dropout: return "dropout";
        case Regime::bayes: return "bayes";
    }
    fail("regime_name: bad enum value");
}

Regime regime_from_name(const std::string& name) {
    if (name == "frequentist") return Regime::frequentist;
    if (name == "dropout") return Regime::dropout;
    if (name == "bayes") return Regime::bayes;
    fail("unknown regime '" + name + "' (expected frequentist, dropout, or bayes)");
}

template <typename S>
Tensor<S> Dense<S>::weight(RngStream* rng) const {
    if (!variational) return w;
    return rng ? sample_variational(vw, *rng) : vw.mu;
}

template <typename S>
Tensor<S> Dense<S>::bias(RngStream* rng) const {
    if (!variational) return b;
    return rng ? sample_variational(vb, *rng) : vb.mu;
}

template <typename S>
SegNet<S> make_seg_net(const NetConfig& cfg, RngStream& rng) {
    require(cfg.classes >= 2, "make_seg_net: need at least two classes");
    SegNet<S> net;
    net.cfg = cfg;
    const bool bayes = cfg.regime == Regime::bayes;
    for (const auto& def : kLayers) {
        const int out = def.out < 0 ? cfg.classes : def.out;
        Dense<S> d;
        d.in = def.in;
        d.out = out;
        d.variational = bayes;
        const Shape wshape{def.in, out};
        const Shape bshape{out};
        // He-style init for the leaky-relu stack; transform regressors start
        // as the identity map so both transforms begin as no-ops
        const S stddev =
            static_cast<S>(std::sqrt(2.0 / (def.in * (1.0 + kLeakySlope * kLeakySlope))));
        if (bayes) {
            d.vw = VariationalParam<S>::make(wshape);
            d.vb = VariationalParam<S>::make(bshape);
            if (def.identity_init) {
                int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(out))));
                d.vb.mu = Tensor<S>::leaf(bshape, flat_identity<S>(k), true);
            } else {
                fill_normal(d.vw.mu, rng, S(0), stddev);
            }
        } else {
            d.w = Tensor<S>::zeros(wshape, true);
            d.b = Tensor<S>::zeros(bshape, true);
            if (def.identity_init) {
                int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(out))));
                d.b = Tensor<S>::leaf(bshape, flat_identity<S>(k), true);
            } else {
                fill_normal(d.w, rng, S(0), stddev);
            }
        }
        net.dense.emplace(def.name, std::move(d));
        if (def.has_bn) {
            BatchNormParams<S> p;
            p.gamma = Tensor<S>::full(bshape, S(1), true);
            p.beta = Tensor<S>::zeros(bshape, true);
            p.running_mean.assign(static_cast<size_t>(out), S(0));
            p.running_var.assign(static_cast<size_t>(out), S(1));
            net.bn.emplace(def.name, std::move(p));
        }
    }
    return net;
}

namespace {

// linear (+ batch norm when the layer has one); activation is the caller's
template <typename S>
Tensor<S> dense_apply(SegNet<S>& net, const std::string& name, const Tensor<S>& x,
                      const ForwardOpts& opts) {
    auto& d = net.dense.at(name);
    auto y = add_bias(matmul(x, d.weight(opts.rng)), d.bias(opts.rng));
    if (auto it = net.bn.find(name); it != net.bn.end()) {
        auto& p = it->second;
        y = batchnorm(y, p.gamma, p.beta, &p.running_mean, &p.running_var, opts.training);
    }
    return y;
}

template <typename S>
Tensor<S> block(SegNet<S>& net, const std::string& name, const Tensor<S>& x,
                const ForwardOpts& opts) {
    return leaky_relu(dense_apply(net, name, x, opts), static_cast<S>(kLeakySlope));
}

// Shared transform-regressor shape: pointwise stack, pool, FC stack down to
// a flattened k*k matrix.
template <typename S>
Tensor<S> tnet_forward(SegNet<S>& net, const Tensor<S>& x, const std::string& prefix, int k,
                       const ForwardOpts& opts) {
    auto h = block(net, prefix + "conv1", x, opts);
    h = block(net, prefix + "conv2", h, opts);
    h = block(net, prefix + "conv3", h, opts);
    auto g = max_over_points(h);
    g = block(net, prefix + "fc1", g, opts);
    g = block(net, prefix + "fc2", g, opts);
    auto t = dense_apply(net, prefix + "fc3", g, opts);
    return reshape_copy(t, {x.dim(0), k, k});
}

template <typename S>
Tensor<S> maybe_drop(SegNet<S>& net, const Tensor<S>& x, DropSite site,
                     const ForwardOpts& opts) {
    if (net.cfg.regime != Regime::dropout || !opts.sample_dropout) return x;
    if (!net.cfg.drop.active_at(site)) return x;
    require(opts.rng != nullptr, "seg_forward: dropout sampling needs an rng");
    return apply_dropout(x, net.cfg.drop.drop_prob, *opts.rng);
}

}  // namespace

template <typename S>
SegOutput<S> seg_forward(SegNet<S>& net, const Tensor<S>& x, const ForwardOpts& opts) {
    require(x.rank() == 3, "seg_forward: input must be [batch, points, channels]");
    require(x.dim(2) == 6, "seg_forward: expected 6 input channels, got " +
                               std::to_string(x.dim(2)));
    if (net.cfg.regime == Regime::bayes)
        require(opts.rng != nullptr || !opts.training,
                "seg_forward: training a bayes net needs an rng for weight draws");

    const std::int64_t n = x.dim(1);
    SegOutput<S> out;

    out.input_tf = tnet_forward(net, x, "tin.", 6, opts);
    auto aligned = bmm(x, out.input_tf);

    auto local = block(net, "conv1", aligned, opts);
    out.feature_tf = tnet_forward(net, local, "tf.", 64, opts);
    local = bmm(local, out.feature_tf);

    auto h = block(net, "conv2", local, opts);
    h = block(net, "conv3", h, opts);
    auto global = max_over_points(h);
    out.global_feat = global;

    auto per_point = concat_channels(local, expand_points(global, n));

    auto a = block(net, "head1", maybe_drop(net, per_point, DropSite::head1, opts), opts);
    a = block(net, "head2", maybe_drop(net, a, DropSite::head2, opts), opts);
    a = block(net, "head3", maybe_drop(net, a, DropSite::head3, opts), opts);
    auto logits = dense_apply(net, "head4", a, opts);
    out.log_probs = log_softmax(logits);
    return out;
}

template <typename S>
std::map<std::string, Tensor<S>> trainable_params(SegNet<S>& net) {
    std::map<std::string, Tensor<S>> out;
    for (auto& [name, d] : net.dense) {
        if (d.variational) {
            out.emplace(name + ".mu_w", d.vw.mu);
            out.emplace(name + ".delta_w", d.vw.delta);
            out.emplace(name + ".mu_b", d.vb.mu);
            out.emplace(name + ".delta_b", d.vb.delta);
        } else {
            out.emplace(name + ".w", d.w);
            out.emplace(name + ".b", d.b);
        }
    }
    for (auto& [name, p] : net.bn) {
        out.emplace(name + ".bn.gamma", p.gamma);
        out.emplace(name + ".bn.beta", p.beta);
    }
    return out;
}

template <typename S>
std::vector<Tensor<S>> decay_params(SegNet<S>& net) {
    require(net.cfg.regime != Regime::bayes,
            "decay_params: weight decay does not apply to the bayes regime");
    std::vector<Tensor<S>> out;
    for (auto& [name, d] : net.dense) {
        out.push_back(d.w);
        out.push_back(d.b);
    }
    return out;
}

template <typename S>
Tensor<S> net_kl(SegNet<S>& net) {
    require(net.cfg.regime == Regime::bayes, "net_kl: only the bayes regime has a posterior");
    Tensor<S> total;
    bool first = true;
    for (auto& [name, d] : net.dense) {
        auto term = add(kl_to_prior(d.vw, net.cfg.prior_sigma_w),
                        kl_to_prior(d.vb, net.cfg.prior_sigma_b));
        total = first ? term : add(total, term);
        first = false;
    }
    return total;
}

template struct Dense<float>;
template struct Dense<double>;
template SegNet<float> make_seg_net(const NetConfig&, RngStream&);
template SegNet<double> make_seg_net(const NetConfig&, RngStream&);
template SegOutput<float> seg_forward(SegNet<float>&, const Tensor<float>&, const ForwardOpts&);
template SegOutput<double> seg_forward(SegNet<double>&, const Tensor<double>&,
                                       const ForwardOpts&);
template std::map<std::string, Tensor<float>> trainable_params(SegNet<float>&);
template std::map<std::string, Tensor<double>> trainable_params(SegNet<double>&);
template std::vector<Tensor<float>> decay_params(SegNet<float>&);
template std::vector<Tensor<double>> decay_params(SegNet<double>&);
template Tensor<float> net_kl(SegNet<float>&);
template Tensor<double> net_kl(SegNet<double>&);

}  // namespace uqcloud
