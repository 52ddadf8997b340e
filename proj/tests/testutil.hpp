#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uqcloud/rng.hpp"
#include "uqcloud/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline uqcloud::Tensor<double> random_tensor(uqcloud::Shape shape, uqcloud::RngStream& rng,
                                             double lo = -1.0, double hi = 1.0,
                                             bool requires_grad = true) {
    auto t = uqcloud::Tensor<double>::zeros(std::move(shape), requires_grad);
    uqcloud::fill_uniform(t, rng, lo, hi);
    return t;
}

// Central-difference gradient check. `f` must rebuild the graph from the
// given leaves on every call (deterministic in the leaf values). Probes up
// to `probes_per_leaf` random coordinates of each leaf and returns the
// maximum relative error against the analytic gradient.
inline double max_fd_rel_err(const std::function<uqcloud::Tensor<double>()>& f,
                             std::vector<uqcloud::Tensor<double>> leaves,
                             uqcloud::RngStream& rng, int probes_per_leaf = 8,
                             double h = 1e-5) {
    using uqcloud::Tensor;
    for (auto& l : leaves) l.zero_grad();
    auto loss = f();
    uqcloud::backward(loss, /*free_graph=*/true);
    double worst = 0.0;
    for (auto& leaf : leaves) {
        auto& data = leaf.data();
        const auto& grad = leaf.grad();
        const std::int64_t n = leaf.numel();
        const std::int64_t probes = std::min<std::int64_t>(n, probes_per_leaf);
        for (std::int64_t p = 0; p < probes; ++p) {
            const size_t idx = n <= probes_per_leaf
                                   ? static_cast<size_t>(p)
                                   : static_cast<size_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
            const double saved = data[idx];
            data[idx] = saved + h;
            const double fp = f().value();
            data[idx] = saved - h;
            const double fm = f().value();
            data[idx] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grad.empty() ? 0.0 : grad[idx];
            worst = std::max(worst, rel_err(fd, an));
        }
    }
    return worst;
}

// Scratch directory helper for file-format tests.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        namespace fs = std::filesystem;
        path_ = (fs::temp_directory_path() / ("uqcloud_" + tag + "_" +
                                              std::to_string(::getpid()))).string();
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

}  // namespace testutil
