#ifndef NEARMISS_METRICS_HPP
#define NEARMISS_METRICS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nearmiss/clipstore.hpp"

namespace nearmiss::metrics {

// near_miss is the positive class throughout
struct ConfusionMatrix {
    std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;

    std::int64_t total() const { return tp + fn + fp + tn; }
};

struct MetricsReport {
    // percentages at full precision; rounding happens at render time only
    double accuracy = 0.0, recall = 0.0, precision = 0.0, f1 = 0.0;
    bool undefined_precision = false, undefined_recall = false, undefined_f1 = false;
};

ConfusionMatrix confusion(const std::vector<clips::Label>& predictions,
                          const std::vector<clips::Label>& labels);

MetricsReport compute_metrics(const ConfusionMatrix& cm);

// display rounding: two decimals, half up
double round2(double v);
std::string format2(double v);

struct BaselineReport {
    std::string name;
    std::optional<double> precision, recall, f1, accuracy;  // absent cells render as "-"
    std::string footnote;  // e.g. "V" for video-only, "VSO" for video+sensor+objects
};

struct ComparisonCell {
    std::optional<double> value;
    std::optional<double> delta;  // ours - reference, only on the "ours" row
};

struct ComparisonRow {
    std::string name;
    std::string footnote;
    ComparisonCell precision, recall, f1, accuracy;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // baselines first, ours last
    std::string reference_name;
};

ComparisonTable improvement_table(const MetricsReport& ours,
                                  const std::vector<BaselineReport>& baselines,
                                  const std::string& reference_name);

std::string render_table(const ComparisonTable& table);

std::string report_to_json(const ConfusionMatrix& cm, const MetricsReport& report);

std::vector<BaselineReport> load_baselines(const std::string& path);

}  // namespace nearmiss::metrics

#endif
