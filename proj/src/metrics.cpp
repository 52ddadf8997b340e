#include "uqcloud/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "uqcloud/error.hpp"

namespace uqcloud {

ConfusionMatrix::ConfusionMatrix(int m) : m_(m) {
    require(m >= 2, "confusion matrix: need at least 2 classes");
    counts_.assign(static_cast<size_t>(m) * static_cast<size_t>(m), 0);
}

void ConfusionMatrix::add(int truth, int pred) {
    require(truth >= 0 && truth < m_, "confusion matrix: truth label " +
                                          std::to_string(truth) + " out of range");
    require(pred >= 0 && pred < m_, "confusion matrix: prediction " +
                                        std::to_string(pred) + " out of range");
    ++counts_[static_cast<size_t>(truth) * m_ + pred];
    ++total_;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    require(other.m_ == m_, "confusion matrix: class count mismatch in merge");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    total_ += other.total_;
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
    return counts_[static_cast<size_t>(truth) * m_ + pred];
}

double ConfusionMatrix::accuracy() const {
    require(total_ > 0, "accuracy: empty confusion matrix");
    std::int64_t trace = 0;
    for (int i = 0; i < m_; ++i) trace += at(i, i);
    return static_cast<double>(trace) / static_cast<double>(total_);
}

std::optional<double> ConfusionMatrix::class_iou(int i) const {
    require(i >= 0 && i < m_, "class_iou: class index out of range");
    std::int64_t gt = 0, pred = 0;
    for (int j = 0; j < m_; ++j) {
        gt += at(i, j);
        pred += at(j, i);
    }
    const std::int64_t tp = at(i, i);
    const std::int64_t uni = gt + pred - tp;
    if (uni == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(uni);
}

double ConfusionMatrix::mean_iou() const {
    double acc = 0;
    int defined = 0;
    for (int i = 0; i < m_; ++i)
        if (auto iou = class_iou(i)) {
            acc += *iou;
            ++defined;
        }
    require(defined > 0, "mean_iou: no class has a defined IoU");
    return acc / defined;
}

FilteredMetrics filtered_metrics(const std::vector<std::int32_t>& labels,
                                 const std::vector<std::int32_t>& preds,
                                 const std::vector<char>& certain) {
    require(labels.size() == preds.size() && labels.size() == certain.size(),
            "filtered_metrics: length mismatch");
    require(!labels.empty(), "filtered_metrics: empty input");
    std::int64_t kept = 0, correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (!certain[i]) continue;
        ++kept;
        if (labels[i] == preds[i]) ++correct;
    }
    FilteredMetrics out;
    out.drop_rate = 1.0 - static_cast<double>(kept) / static_cast<double>(labels.size());
    out.filtered_accuracy = kept == 0 ? std::nan("")
                                      : static_cast<double>(correct) / static_cast<double>(kept);
    return out;
}

namespace {
std::string frac(double v) {
    if (std::isnan(v)) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}
}  // namespace

std::string metrics_csv_header() {
    return "room,model,measure,accuracy,filtered_accuracy,drop_rate,miou";
}

std::string metrics_csv_row(const std::string& room, const std::string& model,
                            const std::string& measure, double accuracy,
                            double filtered_accuracy, double drop_rate, double miou) {
    return room + "," + model + "," + measure + "," + frac(accuracy) + "," +
           frac(filtered_accuracy) + "," + frac(drop_rate) + "," + frac(miou);
}

}  // namespace uqcloud
