#pragma once

#include <string>
#include <vector>

#include "uqcloud/pointcloud.hpp"
#include "uqcloud/pointnet.hpp"
#include "uqcloud/rng.hpp"

namespace uqcloud {

// K stochastic class-probability fields over P points: probs[k][point][cls].
// Every row is a distribution (sums to one within kRowSumTol).
struct SampleStack {
    std::int64_t k = 0, p = 0, m = 0;
    std::vector<float> probs;

    float at(std::int64_t sample, std::int64_t point, std::int64_t cls) const {
        return probs[static_cast<size_t>((sample * p + point) * m + cls)];
    }
};

inline constexpr double kRowSumTol = 1e-5;

// Shape consistency plus the row-sum invariant.
void validate_stack(const SampleStack& stack);

// Builds the [batch, points, 6] network input (centered coordinates and
// normalized colors) from featurized blocks.
template <typename S>
Tensor<S> blocks_input(const std::vector<Block>& blocks);

// `samples` stochastic eval passes over one chunk [1, N, 6]; sample k draws
// its noise from rng.split(k), so the stack is reproducible and insensitive
// to evaluation order. A frequentist net is deterministic and always yields
// a single sample, whatever was requested.
template <typename S>
SampleStack mc_forward(SegNet<S>& net, const Tensor<S>& chunk, int samples, RngStream& rng);

// Mean class distribution of one point across samples.
std::vector<double> predictive_mean(const SampleStack& stack, std::int64_t point);

// Per-point argmax of the predictive mean; ties go to the lowest class.
std::vector<std::int32_t> predict(const SampleStack& stack);

// Folds per-chunk stacks back onto the cloud the chunks were drawn from:
// for each sample, a point's distribution is the average over every chunk
// slot holding that point, renormalized. Every point must be covered.
SampleStack assemble_room_stack(const std::vector<SampleStack>& chunk_stacks,
                                const std::vector<std::vector<std::int64_t>>& chunk_indices,
                                std::int64_t total_points);

// Raw stack dump: u32 K, P, m then the float32 payload, all little-endian.
void save_stack(const SampleStack& stack, const std::string& path);
SampleStack load_stack(const std::string& path);

}  // namespace uqcloud
