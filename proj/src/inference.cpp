#include "uqcloud/inference.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "uqcloud/error.hpp"

namespace uqcloud {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void validate_stack(const SampleStack& stack) {
    require(stack.k >= 1 && stack.p >= 1 && stack.m >= 2,
            "sample stack: need k >= 1, p >= 1, m >= 2");
    require(static_cast<std::int64_t>(stack.probs.size()) == stack.k * stack.p * stack.m,
            "sample stack: payload size does not match its shape");
    for (std::int64_t row = 0; row < stack.k * stack.p; ++row) {
        double total = 0;
        for (std::int64_t c = 0; c < stack.m; ++c) {
            float v = stack.probs[static_cast<size_t>(row * stack.m + c)];
            require(v >= 0.0f && v <= 1.0f + static_cast<float>(kRowSumTol),
                    "sample stack: probability out of range");
            total += v;
        }
        require(std::abs(total - 1.0) <= kRowSumTol,
                "sample stack: row " + std::to_string(row) + " sums to " + std::to_string(total));
    }
}

template <typename S>
Tensor<S> blocks_input(const std::vector<Block>& blocks) {
    require(!blocks.empty(), "blocks_input: no blocks given");
    const std::int64_t b = static_cast<std::int64_t>(blocks.size());
    std::vector<S> data(static_cast<size_t>(b) * kBlockPoints * kNetInputDim);
    size_t at = 0;
    for (const auto& block : blocks) {
        require(static_cast<std::int64_t>(block.features.size()) == kBlockPoints * kFeatureDim,
                "blocks_input: block is not featurized");
        for (std::int64_t i = 0; i < kBlockPoints; ++i)
            for (int c = 0; c < kNetInputDim; ++c)
                data[at++] = static_cast<S>(block.features[static_cast<size_t>(
                    i * kFeatureDim + c)]);
    }
    return Tensor<S>::leaf({b, kBlockPoints, kNetInputDim}, std::move(data));
}

template <typename S>
SampleStack mc_forward(SegNet<S>& net, const Tensor<S>& chunk, int samples, RngStream& rng) {
    require(chunk.rank() == 3 && chunk.dim(0) == 1,
            "mc_forward: expected a single [1, points, channels] chunk");
    require(samples >= 1, "mc_forward: need at least one sample");
    NoGradGuard guard;

    SampleStack stack;
    stack.k = net.cfg.regime == Regime::frequentist ? 1 : samples;
    stack.p = chunk.dim(1);
    stack.m = net.cfg.classes;
    stack.probs.resize(static_cast<size_t>(stack.k * stack.p * stack.m));

    for (std::int64_t s = 0; s < stack.k; ++s) {
        RngStream noise = rng.split(static_cast<std::uint64_t>(s));
        ForwardOpts opts;
        opts.training = false;
        if (net.cfg.regime == Regime::dropout) {
            opts.sample_dropout = true;
            opts.rng = &noise;
        } else if (net.cfg.regime == Regime::bayes) {
            opts.rng = &noise;
        }
        auto out = seg_forward(net, chunk, opts);
        const auto& logp = out.log_probs.data();
        for (std::int64_t i = 0; i < stack.p * stack.m; ++i)
            stack.probs[static_cast<size_t>(s * stack.p * stack.m + i)] =
                static_cast<float>(std::exp(static_cast<double>(logp[static_cast<size_t>(i)])));
    }
    return stack;
}

std::vector<double> predictive_mean(const SampleStack& stack, std::int64_t point) {
    require(point >= 0 && point < stack.p, "predictive_mean: point index out of range");
    std::vector<double> mean(static_cast<size_t>(stack.m), 0.0);
    for (std::int64_t s = 0; s < stack.k; ++s)
        for (std::int64_t c = 0; c < stack.m; ++c)
            mean[static_cast<size_t>(c)] += stack.at(s, point, c);
    for (auto& v : mean) v /= static_cast<double>(stack.k);
    return mean;
}

std::vector<std::int32_t> predict(const SampleStack& stack) {
    std::vector<std::int32_t> labels(static_cast<size_t>(stack.p));
    for (std::int64_t i = 0; i < stack.p; ++i) {
        auto mean = predictive_mean(stack, i);
        std::int32_t best = 0;
        for (std::int64_t c = 1; c < stack.m; ++c)
            if (mean[static_cast<size_t>(c)] > mean[static_cast<size_t>(best)])
                best = static_cast<std::int32_t>(c);
        labels[static_cast<size_t>(i)] = best;
    }
    return labels;
}

SampleStack assemble_room_stack(const std::vector<SampleStack>& chunk_stacks,
                                const std::vector<std::vector<std::int64_t>>& chunk_indices,
                                std::int64_t total_points) {
    require(!chunk_stacks.empty(), "assemble: no chunks");
    require(chunk_stacks.size() == chunk_indices.size(),
            "assemble: got " + std::to_string(chunk_stacks.size()) + " stacks for " +
                std::to_string(chunk_indices.size()) + " index lists");
    require(total_points >= 1, "assemble: need at least one point");
    const std::int64_t k = chunk_stacks[0].k, m = chunk_stacks[0].m;

    SampleStack room;
    room.k = k;
    room.p = total_points;
    room.m = m;
    room.probs.assign(static_cast<size_t>(k * total_points * m), 0.0f);
    std::vector<std::int64_t> hits(static_cast<size_t>(total_points), 0);

    std::vector<double> acc(static_cast<size_t>(k * total_points * m), 0.0);
    for (size_t c = 0; c < chunk_stacks.size(); ++c) {
        const auto& stack = chunk_stacks[c];
        const auto& idx = chunk_indices[c];
        require(stack.k == k && stack.m == m, "assemble: chunk stacks disagree on k or m");
        require(stack.p == static_cast<std::int64_t>(idx.size()),
                "assemble: chunk stack size does not match its index list");
        for (std::int64_t slot = 0; slot < stack.p; ++slot) {
            const std::int64_t point = idx[static_cast<size_t>(slot)];
            require(point >= 0 && point < total_points, "assemble: point index out of range");
            hits[static_cast<size_t>(point)]++;
            for (std::int64_t s = 0; s < k; ++s)
                for (std::int64_t cls = 0; cls < m; ++cls)
                    acc[static_cast<size_t>((s * total_points + point) * m + cls)] +=
                        stack.at(s, slot, cls);
        }
    }

    for (std::int64_t point = 0; point < total_points; ++point)
        require(hits[static_cast<size_t>(point)] > 0,
                "assemble: point " + std::to_string(point) + " is not covered by any chunk");

    for (std::int64_t s = 0; s < k; ++s)
        for (std::int64_t point = 0; point < total_points; ++point) {
            double total = 0;
            for (std::int64_t cls = 0; cls < m; ++cls)
                total += acc[static_cast<size_t>((s * total_points + point) * m + cls)];
            require(total > 0, "assemble: zero-mass row");
            for (std::int64_t cls = 0; cls < m; ++cls)
                room.probs[static_cast<size_t>((s * total_points + point) * m + cls)] =
                    static_cast<float>(
                        acc[static_cast<size_t>((s * total_points + point) * m + cls)] / total);
        }
    return room;
}

void save_stack(const SampleStack& stack, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "stack dump: cannot open '" + path + "' for writing");
    put_u32(out, static_cast<std::uint32_t>(stack.k));
    put_u32(out, static_cast<std::uint32_t>(stack.p));
    put_u32(out, static_cast<std::uint32_t>(stack.m));
    for (float v : stack.probs) put_u32(out, std::bit_cast<std::uint32_t>(v));
    require(out.good(), "stack dump: write to '" + path + "' failed");
}

SampleStack load_stack(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "stack dump: cannot open '" + path + "'");
    std::ostringstream slurp;
    slurp << in.rdbuf();
    const std::string buf = slurp.str();
    require(buf.size() >= 12, "stack dump: truncated header");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    SampleStack stack;
    stack.k = get_u32(p);
    stack.p = get_u32(p + 4);
    stack.m = get_u32(p + 8);
    require(stack.k >= 1 && stack.p >= 1 && stack.m >= 2, "stack dump: implausible shape");
    const std::int64_t numel = stack.k * stack.p * stack.m;
    require(static_cast<std::int64_t>(buf.size()) == 12 + numel * 4,
            "stack dump: payload size does not match the header");
    stack.probs.resize(static_cast<size_t>(numel));
    for (std::int64_t i = 0; i < numel; ++i)
        stack.probs[static_cast<size_t>(i)] = std::bit_cast<float>(get_u32(p + 12 + i * 4));
    return stack;
}

template Tensor<float> blocks_input(const std::vector<Block>&);
template Tensor<double> blocks_input(const std::vector<Block>&);
template SampleStack mc_forward(SegNet<float>&, const Tensor<float>&, int, RngStream&);
template SampleStack mc_forward(SegNet<double>&, const Tensor<double>&, int, RngStream&);

}  // namespace uqcloud
