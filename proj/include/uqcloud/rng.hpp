#pragma once

#include <cstdint>

namespace uqcloud {

// Counter-based pseudo-random stream. Each draw applies a splitmix64-style
// finalizer to (key, counter) and increments the counter, so a stream is
// fully described by its (key, counter) state and replays bit-exactly.
// Independent streams are derived with split(lane), which mixes the lane
// into a fresh key; child streams start at counter 0.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    // uniform on [0,1) with 53 random bits
    double uniform();
    // uniform on [lo,hi)
    double uniform(double lo, double hi);
    // uniform integer in [0,n), n >= 1
    std::uint64_t uniform_int(std::uint64_t n);
    // true with probability p (exact to 2^-64 resolution)
    bool bernoulli(double p);
    // standard normal via Box-Muller; consumes exactly two draws
    double normal();
    double normal(double mean, double stddev);

    // derived independent stream; deterministic in (this->key, lane)
    RngStream split(std::uint64_t lane) const;

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

private:
    RngStream() = default;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace uqcloud
