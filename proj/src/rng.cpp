#include "uqcloud/rng.hpp"

#include <cmath>

#include "uqcloud/error.hpp"

namespace uqcloud {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) {
    key_ = mix(seed + kGolden) ^ mix(stream * 0xD6E8FEB86659FD93ull + kGolden);
    counter_ = 0;
}

std::uint64_t RngStream::next_u64() {
    return mix(key_ + (++counter_) * kGolden);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
    require(n >= 1, "uniform_int: n must be >= 1");
    // multiply-shift map of a full 64-bit draw onto [0,n)
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

bool RngStream::bernoulli(double p) {
    if (p <= 0.0) { next_u64(); return false; }
    if (p >= 1.0) { next_u64(); return true; }
    const double scaled = p * 0x1.0p64;
    const std::uint64_t threshold =
        scaled >= 0x1.0p64 ? ~0ull : static_cast<std::uint64_t>(scaled);
    return next_u64() < threshold;
}

double RngStream::normal() {
    // u1 in (0,1] so the log is finite; the sine partner is discarded to
    // keep one draw <-> fixed counter advance
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * M_PI * u2);
}

double RngStream::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

RngStream RngStream::split(std::uint64_t lane) const {
    RngStream child;
    child.key_ = mix(key_ ^ mix(lane * 0xD6E8FEB86659FD93ull + kGolden));
    child.counter_ = 0;
    return child;
}

}  // namespace uqcloud
