#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uqcloud {

// m x m count matrix; rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int m);

    void add(int truth, int pred);
    void merge(const ConfusionMatrix& other);

    int classes() const { return m_; }
    std::int64_t total() const { return total_; }
    std::int64_t at(int truth, int pred) const;

    // trace / total; errors on an empty matrix
    double accuracy() const;
    // TP / (P_i + G_i - TP); empty when the class appears in neither truth
    // nor prediction
    std::optional<double> class_iou(int i) const;
    // mean over classes with a defined IoU; errors when none is defined
    double mean_iou() const;

private:
    int m_;
    std::int64_t total_ = 0;
    std::vector<std::int64_t> counts_;
};

struct FilteredMetrics {
    double filtered_accuracy;  // NaN when every point was dropped
    double drop_rate;
};

FilteredMetrics filtered_metrics(const std::vector<std::int32_t>& labels,
                                 const std::vector<std::int32_t>& preds,
                                 const std::vector<char>& certain);

// CSV row `room,model,measure,accuracy,filtered_accuracy,drop_rate,miou`
// with fractional values at 4 decimals; NaN renders as "undefined".
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& room, const std::string& model,
                            const std::string& measure, double accuracy,
                            double filtered_accuracy, double drop_rate, double miou);

}  // namespace uqcloud
