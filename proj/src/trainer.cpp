#include "uqcloud/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "uqcloud/dropout.hpp"
#include "uqcloud/error.hpp"
#include "uqcloud/inference.hpp"
#include "uqcloud/metrics.hpp"
#include "uqcloud/varbayes.hpp"

namespace uqcloud {

TrainConfig TrainConfig::defaults_for(Regime regime) {
    TrainConfig cfg;
    cfg.regime = regime;
    if (regime == Regime::bayes) {
        cfg.lr0 = 0.01;
        cfg.decay_factor = 0.9;
    }
    return cfg;
}

double lr_at(const TrainConfig& cfg, int epoch) {
    require(epoch >= 0, "epoch must be nonnegative, got " + std::to_string(epoch));
    require(cfg.lr0 > 0.0 && cfg.decay_factor > 0.0 && cfg.decay_period > 0,
            "learning-rate schedule fields must be positive");
    return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_period);
}

std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t n, std::int64_t batch,
                                                     RngStream& rng) {
    require(n >= 1, "need at least one block to batch");
    require(batch >= 1, "batch size must be positive");
    std::vector<std::int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::uint64_t i = static_cast<std::uint64_t>(n); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    std::vector<std::vector<std::int64_t>> batches;
    for (std::int64_t at = 0; at < n; at += batch) {
        const std::int64_t end = std::min(n, at + batch);
        batches.emplace_back(perm.begin() + at, perm.begin() + end);
    }
    // A lone trailing block joins the previous batch: batch statistics over
    // the pooled per-block features need at least two rows.
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

double kl_batch_weight(std::int64_t total_points) {
    require(total_points >= 1, "kl weight needs a positive point count");
    return 1.0 / static_cast<double>(total_points);
}

namespace {

void check_train_config(const TrainConfig& cfg) {
    require(cfg.classes >= 2, "training needs at least 2 classes");
    require(cfg.epochs >= 1, "epochs must be positive");
    require(cfg.batch_size >= 2,
            "batch size must be at least 2: the transform regressors normalize pooled "
            "per-block features with batch statistics");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "momentum must lie in [0, 1)");
    require(cfg.weight_decay >= 0.0, "weight decay must be nonnegative");
    require(cfg.lr0 > 0.0 && cfg.decay_factor > 0.0 && cfg.decay_period > 0,
            "learning-rate schedule fields must be positive");
}

}  // namespace

Checkpoint train_model(const std::vector<Block>& blocks, const TrainConfig& cfg,
                       const LogFn& log, const std::string& checkpoint_out) {
    using S = float;
    check_train_config(cfg);
    require(blocks.size() >= 2,
            "training needs at least two blocks to form a batch with usable statistics");
    for (const Block& b : blocks) {
        require(static_cast<std::int64_t>(b.labels.size()) == kBlockPoints,
                "training blocks must carry one label per point");
        for (std::int32_t lab : b.labels)
            require(lab >= 0 && lab < cfg.classes,
                    "training label " + std::to_string(lab) + " outside [0, " +
                        std::to_string(cfg.classes) + ")");
    }

    NetConfig ncfg;
    ncfg.classes = cfg.classes;
    ncfg.regime = cfg.regime;
    ncfg.drop = DropoutSpec::preset(cfg.drop_sites, cfg.drop_prob);
    ncfg.prior_sigma_w = cfg.prior_sigma_w;
    ncfg.prior_sigma_b = cfg.prior_sigma_b;

    RngStream root(cfg.seed);
    RngStream init_rng = root.split(0);
    RngStream shuffle_rng = root.split(1);
    RngStream noise_root = root.split(2);
    SegNet<S> net = make_seg_net<S>(ncfg, init_rng);

    auto params = trainable_params(net);
    std::map<std::string, std::vector<S>> velocity;
    for (auto& [name, t] : params) velocity[name].assign(static_cast<size_t>(t.numel()), 0);

    const bool bayes = cfg.regime == Regime::bayes;
    const double klw = kl_batch_weight(static_cast<std::int64_t>(blocks.size()) * kBlockPoints);
    std::vector<Tensor<S>> decay;
    if (!bayes && cfg.weight_decay > 0.0) decay = decay_params(net);

    char line[160];
    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        const auto batches = epoch_batches(static_cast<std::int64_t>(blocks.size()),
                                           cfg.batch_size, shuffle_rng);
        double loss_sum = 0.0;
        for (size_t step = 0; step < batches.size(); ++step) {
            std::vector<Block> batch;
            std::vector<std::int32_t> labels;
            batch.reserve(batches[step].size());
            labels.reserve(batches[step].size() * static_cast<size_t>(kBlockPoints));
            for (std::int64_t idx : batches[step]) {
                const Block& b = blocks[static_cast<size_t>(idx)];
                batch.push_back(b);
                labels.insert(labels.end(), b.labels.begin(), b.labels.end());
            }
            const Tensor<S> input = blocks_input<S>(batch);

            RngStream step_rng = noise_root.split(global_step);
            ForwardOpts opts;
            opts.training = true;
            opts.sample_dropout = cfg.regime == Regime::dropout;
            opts.rng = cfg.regime == Regime::frequentist ? nullptr : &step_rng;

            double val = 0.0;
            try {
                SegOutput<S> out = seg_forward(net, input, opts);
                Tensor<S> loss = nll_from_log_softmax(out.log_probs, labels);
                if (bayes) {
                    Tensor<S> kl = net_kl(net);
                    loss = elbo_loss(loss, kl, klw);
                } else if (cfg.weight_decay > 0.0) {
                    loss = add(loss, l2_penalty(decay, cfg.weight_decay));
                }
                val = loss.value();
                require(std::isfinite(val), "loss became " + std::to_string(val));
                backward(loss);
            } catch (const Error& e) {
                // inputs and shapes were validated up front, so a failing
                // step means the optimization blew up numerically
                fail("training diverged at epoch " + std::to_string(epoch) + ", step " +
                     std::to_string(step) + ": " + e.what());
            }

            for (auto& [name, t] : params) {
                auto& v = velocity[name];
                auto& data = t.data();
                const auto& grad = t.grad();
                if (grad.empty()) continue;
                for (size_t i = 0; i < v.size(); ++i) {
                    v[i] = static_cast<S>(cfg.momentum) * v[i] + grad[i];
                    data[i] -= static_cast<S>(lr) * v[i];
                }
                t.zero_grad();
            }

            loss_sum += val;
            if (log) {
                std::snprintf(line, sizeof(line), "%d,%zu,%.6g,%.6g", epoch, step, val, lr);
                log(line);
            }
            ++global_step;
        }
        if (log) {
            std::snprintf(line, sizeof(line), "%d,-1,%.6g,%.6g", epoch,
                          loss_sum / static_cast<double>(batches.size()), lr);
            log(line);
        }
        if (!checkpoint_out.empty() && cfg.checkpoint_period > 0 &&
            (epoch + 1) % cfg.checkpoint_period == 0 && epoch + 1 < cfg.epochs) {
            Checkpoint snap = checkpoint_from_net(net);
            save_checkpoint(snap, checkpoint_out + ".epoch" + std::to_string(epoch + 1));
        }
    }

    Checkpoint ck = checkpoint_from_net(net);
    if (!checkpoint_out.empty()) save_checkpoint(ck, checkpoint_out);
    return ck;
}

template <typename S>
static SampleStack mean_pass_stack(SegNet<S>& net, const Tensor<S>& chunk) {
    NoGradGuard guard;
    SampleStack stack;
    stack.k = 1;
    stack.p = chunk.dim(1);
    stack.m = net.cfg.classes;
    stack.probs.resize(static_cast<size_t>(stack.p * stack.m));
    auto out = seg_forward(net, chunk, ForwardOpts{});
    const auto& logp = out.log_probs.data();
    for (size_t i = 0; i < stack.probs.size(); ++i)
        stack.probs[i] = static_cast<float>(std::exp(static_cast<double>(logp[i])));
    return stack;
}

template <typename S>
SampleStack room_stack(SegNet<S>& net, const PointCloud& cloud, int samples,
                       double block_size, std::uint64_t seed, bool mean_pass) {
    require(samples >= 1, "sample count must be positive");
    require(block_size > 0.0, "block size must be positive");

    RngStream root(seed);
    RngStream chunk_rng = root.split(0);
    RngStream noise_root = root.split(1);

    std::vector<SampleStack> stacks;
    std::vector<std::vector<std::int64_t>> chunk_indices;
    std::uint64_t counter = 0;
    for (const auto& cell : split_blocks(cloud, block_size, block_size)) {
        for (auto& chunk : eval_chunks(cell, chunk_rng)) {
            const Block b = featurize(cloud, chunk);
            const Tensor<S> input = blocks_input<S>({b});
            if (mean_pass) {
                stacks.push_back(mean_pass_stack(net, input));
            } else {
                RngStream noise = noise_root.split(counter++);
                stacks.push_back(mc_forward(net, input, samples, noise));
            }
            chunk_indices.push_back(std::move(chunk));
        }
    }
    return assemble_room_stack(stacks, chunk_indices, cloud.size());
}

template <typename S>
RoomEval evaluate_room(SegNet<S>& net, const PointCloud& cloud, const EvalConfig& cfg) {
    require(cloud.has_labels(), "evaluation needs a labeled cloud");

    RoomEval ev;
    ev.room = cloud.source_id.empty() ? "room" : cloud.source_id;
    ev.stack = room_stack(net, cloud, cfg.samples, cfg.block_size, cfg.seed);
    ev.pred = predict(ev.stack);

    ConfusionMatrix cm(net.cfg.classes);
    for (std::int64_t i = 0; i < cloud.size(); ++i)
        cm.add(cloud.labels[static_cast<size_t>(i)], ev.pred[static_cast<size_t>(i)]);
    ev.accuracy = cm.accuracy();
    ev.miou = cm.mean_iou();

    for (Measure m : cfg.measures) {
        MeasureOutcome out;
        out.report = measure_report(ev.stack, m, cfg.sigmas);
        const FilteredMetrics fm = filtered_metrics(cloud.labels, ev.pred, out.report.certain);
        out.filtered_accuracy = fm.filtered_accuracy;
        out.drop_rate = fm.drop_rate;
        ev.measures.emplace_back(m, std::move(out));
    }
    return ev;
}

std::string evaluate_csv(const std::vector<RoomEval>& rooms, const std::string& model) {
    std::string out = metrics_csv_header() + "\n";
    for (const RoomEval& r : rooms) {
        if (r.measures.empty()) {
            out += metrics_csv_row(r.room, model, "none", r.accuracy, r.accuracy, 0.0, r.miou) +
                   "\n";
        }
        for (const auto& [m, mo] : r.measures) {
            out += metrics_csv_row(r.room, model, measure_name(m), r.accuracy,
                                   mo.filtered_accuracy, mo.drop_rate, r.miou) +
                   "\n";
        }
    }
    return out;
}

template SampleStack room_stack<float>(SegNet<float>&, const PointCloud&, int, double,
                                       std::uint64_t, bool);
template SampleStack room_stack<double>(SegNet<double>&, const PointCloud&, int, double,
                                        std::uint64_t, bool);
template RoomEval evaluate_room<float>(SegNet<float>&, const PointCloud&, const EvalConfig&);
template RoomEval evaluate_room<double>(SegNet<double>&, const PointCloud&, const EvalConfig&);

}  // namespace uqcloud
