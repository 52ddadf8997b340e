#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uqcloud/checkpoint.hpp"
#include "uqcloud/pointcloud.hpp"
#include "uqcloud/pointnet.hpp"
#include "uqcloud/uncertainty.hpp"

namespace uqcloud {

// Training protocol knobs. defaults_for() applies the per-regime learning
// schedule (frequentist/dropout start at 1e-3 and decay by 0.7, the
// variational net starts at 1e-2 and decays by 0.9, both every 10 epochs).
struct TrainConfig {
    Regime regime = Regime::frequentist;
    int classes = 6;
    int epochs = 100;
    int batch_size = 16;
    double lr0 = 0.001;
    double decay_factor = 0.7;
    int decay_period = 10;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double prior_sigma_w = 4.0;
    double prior_sigma_b = 8.0;
    double drop_prob = 0.1;
    std::string drop_sites = "last_three";
    int checkpoint_period = 10;
    std::uint64_t seed = 0;

    static TrainConfig defaults_for(Regime regime);
};

// lr0 * factor^floor(epoch / period); non-increasing in epoch.
double lr_at(const TrainConfig& cfg, int epoch);

// One epoch's shuffled mini-batches: a fresh permutation of 0..n-1 cut into
// ceil(n / batch) slices (the last one may be short, and a lone trailing
// index joins the previous slice — batch statistics over pooled per-block
// features need two rows). Every index appears exactly once per epoch.
std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t n, std::int64_t batch,
                                                     RngStream& rng);

// Per-batch weight on the KL term of the variational objective. The batch
// loss is the mean per-point NLL, so the dataset-level objective splits the
// single KL term as KL / (points seen per epoch); summed over an epoch the
// applied weight times the batch point count is exactly 1.
double kl_batch_weight(std::int64_t total_points);

using LogFn = std::function<void(const std::string& line)>;

// SGD training with momentum over featurized blocks. Logs one
// `epoch,step,loss,lr` line per optimizer step plus a summary line with
// step -1 carrying the epoch's mean loss. When checkpoint_out is non-empty,
// writes `<path>.epoch<E>` snapshots every checkpoint_period epochs and the
// final checkpoint to `<path>`. A non-finite loss aborts with the epoch and
// step in the message. Returns the final checkpoint.
Checkpoint train_model(const std::vector<Block>& blocks, const TrainConfig& cfg,
                       const LogFn& log = {}, const std::string& checkpoint_out = "");

// Evaluation protocol knobs.
struct EvalConfig {
    int samples = 50;
    std::vector<Measure> measures;
    double sigmas = 2.0;
    double block_size = 1.0;  // xy window used to chunk the room
    std::uint64_t seed = 0;
};

struct MeasureOutcome {
    UncertaintyReport report;
    double filtered_accuracy = 0.0;  // NaN when everything was dropped
    double drop_rate = 0.0;
};

// Chunk a room into block-sized xy windows, run the network on each chunk,
// and assemble one sample stack covering every point. mean_pass swaps the
// Monte-Carlo draws for a single deterministic pass (dropout off, the
// variational net at its mean weights); labels are not required.
template <typename S>
SampleStack room_stack(SegNet<S>& net, const PointCloud& cloud, int samples,
                       double block_size, std::uint64_t seed, bool mean_pass = false);

struct RoomEval {
    std::string room;
    double accuracy = 0.0;
    double miou = 0.0;
    std::vector<std::int32_t> pred;
    SampleStack stack;
    std::vector<std::pair<Measure, MeasureOutcome>> measures;
};

// Chunked whole-room evaluation: K stochastic passes per chunk, assembled
// into one stack covering every point, scored against the cloud's labels,
// then filtered once per requested measure. The cloud must be labeled.
template <typename S>
RoomEval evaluate_room(SegNet<S>& net, const PointCloud& cloud, const EvalConfig& cfg);

// One `room,model,measure,...` CSV row per evaluated measure (a plain row
// with measure "none" when no measures were requested), under the shared
// metrics header.
std::string evaluate_csv(const std::vector<RoomEval>& rooms, const std::string& model);

}  // namespace uqcloud
