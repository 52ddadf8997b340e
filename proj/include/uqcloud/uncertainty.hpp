#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqcloud/inference.hpp"
#include "uqcloud/pointcloud.hpp"

namespace uqcloud {

enum class Measure { predictive, aleatoric, epistemic, variance, credible };

const char* measure_name(Measure m);
Measure measure_from_name(const std::string& name);

// Per-point uncertainty values plus the certain/uncertain decision for one
// measure. Entropies are in nats, variance in probability squared; the
// credible measure is decision-only, so its values mirror the mask as 0/1
// and no threshold applies (NaN).
struct UncertaintyReport {
    Measure measure = Measure::predictive;
    std::vector<double> value;
    std::vector<char> certain;
    double threshold = 0.0;
};

// Shannon entropy in nats with the 0 log 0 := 0 convention.
double entropy_nats(const std::vector<double>& dist);

// Entropy of each point's mean class distribution.
std::vector<double> u_pred(const SampleStack& stack);

// Mean over the samples of each point's per-sample entropy.
std::vector<double> u_alea(const SampleStack& stack);

// Pointwise u_pred - u_alea. The difference is nonnegative up to rounding;
// residue in [-1e-9, 0) is clamped to zero and anything below that range is
// an internal-consistency failure.
std::vector<double> u_epi(const SampleStack& stack);

// Unbiased sample variance (divide by K-1) across the samples of the
// predicted class's probability. Needs K >= 2.
std::vector<double> u_var(const SampleStack& stack);

// Linear-interpolation percentile: rank h = p * (n - 1) interpolated
// between sorted order statistics. p is a fraction in [0, 1].
double percentile_linear(std::vector<double> samples, double p);

// A point is certain iff the predicted class's central credible interval
// lies strictly above every other class's interval. Intervals are empirical
// [(1-level)/2, 1-(1-level)/2] percentile ranges over the K sample
// probabilities; needs K >= 20.
std::vector<char> credible_overlap(const SampleStack& stack, double level = 0.95);

// A value is certain iff it is <= mean + sigmas * sample standard deviation,
// with the statistics taken over the whole evaluated point set (at least two
// points). The applied cut is reported through threshold_out when given.
std::vector<char> threshold_filter(const std::vector<double>& values, double sigmas = 2.0,
                                   double* threshold_out = nullptr);

// Values + decision for one measure. sigmas feeds the threshold filter; the
// credible measure decides by interval overlap instead.
UncertaintyReport measure_report(const SampleStack& stack, Measure measure, double sigmas = 2.0);

// Certainty map: the cloud re-colored black where certain and red where
// uncertain, labels replaced by the predictions.
void write_uncertainty_ply(const PointCloud& cloud, const std::vector<std::int32_t>& pred,
                           const std::vector<char>& certain, const std::string& path);

// Per-point CSV with header x,y,z,label,pred,measure,value,certain
// (label -1 for unlabeled clouds, certain as 0/1).
void write_uncertainty_csv(const PointCloud& cloud, const std::vector<std::int32_t>& pred,
                           const UncertaintyReport& report, const std::string& path);

// Five-number summary (min, q25, median, q75, max) of each class's K sample
// probabilities at one point, as CSV text.
std::string quantile_table(const SampleStack& stack, std::int64_t point);

}  // namespace uqcloud
