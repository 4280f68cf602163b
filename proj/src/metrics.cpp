#include "nearmiss/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nearmiss::metrics {

using nlohmann::json;

ConfusionMatrix confusion(const std::vector<clips::Label>& predictions,
                          const std::vector<clips::Label>& labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) +
                                    " predictions vs " + std::to_string(labels.size()) +
                                    " labels");
    if (predictions.empty()) throw std::invalid_argument("confusion: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        bool pred_pos = predictions[i] == clips::Label::near_miss;
        bool true_pos = labels[i] == clips::Label::near_miss;
        if (pred_pos && true_pos) ++cm.tp;
        else if (!pred_pos && true_pos) ++cm.fn;
        else if (pred_pos && !true_pos) ++cm.fp;
        else ++cm.tn;
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    if (cm.tp < 0 || cm.fn < 0 || cm.fp < 0 || cm.tn < 0)
        throw std::invalid_argument("compute_metrics: negative count");
    if (cm.total() <= 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
    MetricsReport r;
    r.accuracy = 100.0 * double(cm.tp + cm.tn) / double(cm.total());
    if (cm.tp + cm.fn > 0) {
        r.recall = 100.0 * double(cm.tp) / double(cm.tp + cm.fn);
    } else {
        r.undefined_recall = true;
    }
    if (cm.tp + cm.fp > 0) {
        r.precision = 100.0 * double(cm.tp) / double(cm.tp + cm.fp);
    } else {
        r.undefined_precision = true;
    }
    if (r.undefined_precision || r.undefined_recall || r.precision + r.recall <= 0.0) {
        r.undefined_f1 = true;
    } else {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    }
    return r;
}

double round2(double v) {
    double scaled = v * 100.0;
    double rounded = (scaled >= 0) ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
    return rounded / 100.0;
}

std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", round2(v));
    return buf;
}

ComparisonTable improvement_table(const MetricsReport& ours,
                                  const std::vector<BaselineReport>& baselines,
                                  const std::string& reference_name) {
    const BaselineReport* ref = nullptr;
    for (const auto& b : baselines)
        if (b.name == reference_name) ref = &b;
    if (!ref)
        throw std::invalid_argument("improvement_table: unknown reference baseline '" +
                                    reference_name + "'");
    ComparisonTable table;
    table.reference_name = reference_name;
    for (const auto& b : baselines) {
        ComparisonRow row;
        row.name = b.name;
        row.footnote = b.footnote;
        row.precision.value = b.precision;
        row.recall.value = b.recall;
        row.f1.value = b.f1;
        row.accuracy.value = b.accuracy;
        table.rows.push_back(std::move(row));
    }
    ComparisonRow mine;
    mine.name = "ours (V)";
    mine.footnote = "V";
    auto fill = [](ComparisonCell& cell, double value, const std::optional<double>& refv) {
        cell.value = value;
        if (refv) cell.delta = value - *refv;
    };
    fill(mine.precision, ours.precision, ref->precision);
    fill(mine.recall, ours.recall, ref->recall);
    fill(mine.f1, ours.f1, ref->f1);
    fill(mine.accuracy, ours.accuracy, ref->accuracy);
    table.rows.push_back(std::move(mine));
    return table;
}

std::string render_table(const ComparisonTable& table) {
    auto cell = [](const ComparisonCell& c) {
        if (!c.value) return std::string("-");
        std::string s = format2(*c.value);
        if (c.delta) {
            double d = round2(*c.delta);
            s += " (" + format2(std::abs(d)) + (d >= 0 ? "↑" : "↓") + ")";
        }
        return s;
    };
    std::ostringstream os;
    os << "method            precision (%)    recall (%)       f1 (%)           accuracy (%)\n";
    for (const auto& r : table.rows) {
        os << r.name;
        for (std::size_t i = r.name.size(); i < 18; ++i) os << ' ';
        for (const ComparisonCell* c : {&r.precision, &r.recall, &r.f1, &r.accuracy}) {
            std::string s = cell(*c);
            os << s;
            // unicode arrows are 3 bytes; pad on display width
            std::size_t width = s.size();
            if (s.find("↑") != std::string::npos || s.find("↓") != std::string::npos)
                width -= 2;
            for (std::size_t i = width; i < 17; ++i) os << ' ';
        }
        os << '\n';
    }
    os << "deltas relative to " << table.reference_name << '\n';
    return os.str();
}

std::string report_to_json(const ConfusionMatrix& cm, const MetricsReport& r) {
    json j;
    j["confusion"] = {{"tp", cm.tp}, {"fn", cm.fn}, {"fp", cm.fp}, {"tn", cm.tn}};
    j["accuracy"] = r.accuracy;
    j["recall"] = r.recall;
    j["precision"] = r.precision;
    j["f1"] = r.f1;
    j["rounded"] = {{"accuracy", round2(r.accuracy)},
                    {"recall", round2(r.recall)},
                    {"precision", round2(r.precision)},
                    {"f1", round2(r.f1)}};
    std::vector<std::string> flags;
    if (r.undefined_precision) flags.push_back("undefined_precision");
    if (r.undefined_recall) flags.push_back("undefined_recall");
    if (r.undefined_f1) flags.push_back("undefined_f1");
    j["flags"] = flags;
    return j.dump(2);
}

std::vector<BaselineReport> load_baselines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("baselines: cannot open " + path);
    json j = json::parse(in);
    std::vector<BaselineReport> out;
    for (const auto& row : j.at("baselines")) {
        BaselineReport b;
        b.name = row.at("name").get<std::string>();
        b.footnote = row.value("footnote", "");
        auto get = [&](const char* key) -> std::optional<double> {
            if (!row.contains(key) || row.at(key).is_null()) return std::nullopt;
            return row.at(key).get<double>();
        };
        b.precision = get("precision");
        b.recall = get("recall");
        b.f1 = get("f1");
        b.accuracy = get("accuracy");
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace nearmiss::metrics
