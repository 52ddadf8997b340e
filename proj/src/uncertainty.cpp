#include "uqcloud/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "uqcloud/error.hpp"

namespace uqcloud {

namespace {

// Cheap shape check for the pure measures; the full row-sum validation is
// the stack assembler's job.
void check_shape(const SampleStack& stack) {
    require(stack.k >= 1 && stack.p >= 1 && stack.m >= 2, "sample stack has degenerate shape");
    require(static_cast<std::int64_t>(stack.probs.size()) == stack.k * stack.p * stack.m,
            "sample stack payload does not match its shape");
}

double row_entropy(const SampleStack& stack, std::int64_t sample, std::int64_t point) {
    double h = 0.0;
    for (std::int64_t c = 0; c < stack.m; ++c) {
        const double q = stack.at(sample, point, c);
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

}  // namespace

const char* measure_name(Measure m) {
    switch (m) {
        case Measure::predictive: return "predictive";
        case Measure::aleatoric: return "aleatoric";
        case Measure::epistemic: return "epistemic";
        case Measure::variance: return "variance";
        case Measure::credible: return "credible";
    }
    fail("unknown uncertainty measure");
}

Measure measure_from_name(const std::string& name) {
    if (name == "predictive") return Measure::predictive;
    if (name == "aleatoric") return Measure::aleatoric;
    if (name == "epistemic") return Measure::epistemic;
    if (name == "variance") return Measure::variance;
    if (name == "credible") return Measure::credible;
    fail("unknown uncertainty measure '" + name +
         "' (expected predictive, aleatoric, epistemic, variance, or credible)");
}

double entropy_nats(const std::vector<double>& dist) {
    double h = 0.0;
    for (double q : dist) {
        require(q >= 0.0, "entropy input has a negative probability");
        if (q > 0.0) h -= q * std::log(q);
    }
    return h;
}

std::vector<double> u_pred(const SampleStack& stack) {
    check_shape(stack);
    std::vector<double> out(static_cast<size_t>(stack.p));
    for (std::int64_t i = 0; i < stack.p; ++i) {
        out[static_cast<size_t>(i)] = entropy_nats(predictive_mean(stack, i));
    }
    return out;
}

std::vector<double> u_alea(const SampleStack& stack) {
    check_shape(stack);
    std::vector<double> out(static_cast<size_t>(stack.p));
    for (std::int64_t i = 0; i < stack.p; ++i) {
        double acc = 0.0;
        for (std::int64_t s = 0; s < stack.k; ++s) acc += row_entropy(stack, s, i);
        out[static_cast<size_t>(i)] = acc / static_cast<double>(stack.k);
    }
    return out;
}

std::vector<double> u_epi(const SampleStack& stack) {
    const std::vector<double> pred = u_pred(stack);
    const std::vector<double> alea = u_alea(stack);
    std::vector<double> out(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - alea[i];
        if (d < -1e-9) {
            fail("epistemic uncertainty came out " + std::to_string(d) + " at point " +
                 std::to_string(i) + "; mean entropy fell below the average sample entropy");
        }
        out[i] = d < 0.0 ? 0.0 : d;
    }
    return out;
}

std::vector<double> u_var(const SampleStack& stack) {
    check_shape(stack);
    require(stack.k >= 2, "predictive variance needs at least 2 samples, got " +
                              std::to_string(stack.k));
    const std::vector<std::int32_t> pred = predict(stack);
    std::vector<double> out(static_cast<size_t>(stack.p));
    for (std::int64_t i = 0; i < stack.p; ++i) {
        // Welford update keeps the pass single and numerically stable.
        const std::int64_t cls = pred[static_cast<size_t>(i)];
        double mean = 0.0, m2 = 0.0;
        for (std::int64_t s = 0; s < stack.k; ++s) {
            const double x = stack.at(s, i, cls);
            const double d = x - mean;
            mean += d / static_cast<double>(s + 1);
            m2 += d * (x - mean);
        }
        out[static_cast<size_t>(i)] = m2 / static_cast<double>(stack.k - 1);
    }
    return out;
}

double percentile_linear(std::vector<double> samples, double p) {
    require(!samples.empty(), "percentile of an empty sample set");
    require(p >= 0.0 && p <= 1.0, "percentile fraction must lie in [0, 1]");
    std::sort(samples.begin(), samples.end());
    const double h = p * static_cast<double>(samples.size() - 1);
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= samples.size()) return samples.back();
    const double frac = h - static_cast<double>(lo);
    return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
}

std::vector<char> credible_overlap(const SampleStack& stack, double level) {
    check_shape(stack);
    require(stack.k >= 20, "credible-interval overlap needs K >= 20 samples, got " +
                               std::to_string(stack.k));
    require(level > 0.0 && level < 1.0, "credible level must lie strictly between 0 and 1");
    const double alpha = (1.0 - level) / 2.0;
    const std::vector<std::int32_t> pred = predict(stack);
    std::vector<char> certain(static_cast<size_t>(stack.p));
    std::vector<double> draws(static_cast<size_t>(stack.k));
    for (std::int64_t i = 0; i < stack.p; ++i) {
        const std::int64_t cls = pred[static_cast<size_t>(i)];
        for (std::int64_t s = 0; s < stack.k; ++s)
            draws[static_cast<size_t>(s)] = stack.at(s, i, cls);
        const double lo_pred = percentile_linear(draws, alpha);
        bool ok = true;
        for (std::int64_t c = 0; c < stack.m && ok; ++c) {
            if (c == cls) continue;
            for (std::int64_t s = 0; s < stack.k; ++s)
                draws[static_cast<size_t>(s)] = stack.at(s, i, c);
            ok = lo_pred > percentile_linear(draws, 1.0 - alpha);
        }
        certain[static_cast<size_t>(i)] = ok ? 1 : 0;
    }
    return certain;
}

std::vector<char> threshold_filter(const std::vector<double>& values, double sigmas,
                                   double* threshold_out) {
    const size_t n = values.size();
    require(n >= 2, "threshold filter needs at least 2 values to form statistics");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    // sd == 0 with sigmas == inf would otherwise poison the cut with inf * 0.
    const double cut = sd == 0.0 ? mean : mean + sigmas * sd;
    if (threshold_out != nullptr) *threshold_out = cut;
    std::vector<char> certain(n);
    for (size_t i = 0; i < n; ++i) certain[i] = values[i] <= cut ? 1 : 0;
    return certain;
}

UncertaintyReport measure_report(const SampleStack& stack, Measure measure, double sigmas) {
    UncertaintyReport rep;
    rep.measure = measure;
    if (measure == Measure::credible) {
        rep.certain = credible_overlap(stack);
        rep.value.resize(rep.certain.size());
        for (size_t i = 0; i < rep.certain.size(); ++i) rep.value[i] = rep.certain[i] ? 1.0 : 0.0;
        rep.threshold = std::numeric_limits<double>::quiet_NaN();
        return rep;
    }
    switch (measure) {
        case Measure::predictive: rep.value = u_pred(stack); break;
        case Measure::aleatoric: rep.value = u_alea(stack); break;
        case Measure::epistemic: rep.value = u_epi(stack); break;
        case Measure::variance: rep.value = u_var(stack); break;
        case Measure::credible: break;
    }
    rep.certain = threshold_filter(rep.value, sigmas, &rep.threshold);
    return rep;
}

void write_uncertainty_ply(const PointCloud& cloud, const std::vector<std::int32_t>& pred,
                           const std::vector<char>& certain, const std::string& path) {
    const size_t n = static_cast<size_t>(cloud.size());
    require(pred.size() == n, "prediction count does not match the cloud");
    require(certain.size() == n, "certainty mask does not match the cloud");
    PointCloud map;
    map.xyz = cloud.xyz;
    map.labels = pred;
    map.rgb.assign(3 * n, 0);
    for (size_t i = 0; i < n; ++i) {
        if (!certain[i]) map.rgb[3 * i] = 255;
    }
    write_cloud_ply(map, path);
}

void write_uncertainty_csv(const PointCloud& cloud, const std::vector<std::int32_t>& pred,
                           const UncertaintyReport& report, const std::string& path) {
    const size_t n = static_cast<size_t>(cloud.size());
    require(pred.size() == n, "prediction count does not match the cloud");
    require(report.value.size() == n && report.certain.size() == n,
            "uncertainty report does not match the cloud");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) fail("cannot open '" + path + "' for writing");
    std::fputs("x,y,z,label,pred,measure,value,certain\n", f);
    const char* name = measure_name(report.measure);
    for (size_t i = 0; i < n; ++i) {
        const int label = cloud.has_labels() ? cloud.labels[i] : -1;
        std::fprintf(f, "%.9g,%.9g,%.9g,%d,%d,%s,%.9g,%d\n", cloud.xyz[3 * i],
                     cloud.xyz[3 * i + 1], cloud.xyz[3 * i + 2], label, pred[i], name,
                     report.value[i], report.certain[i] ? 1 : 0);
    }
    if (std::fclose(f) != 0) fail("failed writing '" + path + "'");
}

std::string quantile_table(const SampleStack& stack, std::int64_t point) {
    check_shape(stack);
    require(point >= 0 && point < stack.p, "point index " + std::to_string(point) +
                                               " outside the stack (P=" + std::to_string(stack.p) +
                                               ")");
    std::string out = "class,min,q25,median,q75,max\n";
    std::vector<double> draws(static_cast<size_t>(stack.k));
    char buf[160];
    for (std::int64_t c = 0; c < stack.m; ++c) {
        for (std::int64_t s = 0; s < stack.k; ++s)
            draws[static_cast<size_t>(s)] = stack.at(s, point, c);
        std::sort(draws.begin(), draws.end());
        const double q25 = percentile_linear(draws, 0.25);
        const double q50 = percentile_linear(draws, 0.50);
        const double q75 = percentile_linear(draws, 0.75);
        std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<long long>(c), draws.front(), q25, q50, q75, draws.back());
        out += buf;
    }
    return out;
}

}  // namespace uqcloud
