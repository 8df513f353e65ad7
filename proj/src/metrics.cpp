#include "maa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <utility>

#include "maa/common.hpp"
#include "maa/ops.hpp"

namespace maa {

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
    if (scores.size() != positives.size()) throw ShapeError("average_precision: length mismatch");
    const std::size_t n = scores.size();
    std::size_t total_pos = 0;
    for (auto p : positives) total_pos += p ? 1 : 0;
    if (total_pos == 0) throw ConfigError("average_precision: no positive items");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (positives[order[k]]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return ap / static_cast<double>(total_pos);
}

template <typename T>
MetricsReport map_from_logits(const Matrix<T>& logits, std::span<const std::int32_t> labels) {
    const int n = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != n) throw ShapeError("map_from_logits: label count mismatch");
    if (n < 1) throw ConfigError("map_from_logits: empty evaluation set");

    const Matrix<T> probs = softmax_rows(logits);

    MetricsReport report;
    report.n_samples = n;
    report.per_class_ap.assign(static_cast<std::size_t>(c),
                               std::numeric_limits<double>::quiet_NaN());

    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const T* row = logits.row(i);
        int argmax = 0;
        for (int j = 1; j < c; ++j) {
            if (row[j] > row[argmax]) argmax = j;  // ties keep the lowest index
        }
        if (argmax == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    report.accuracy = static_cast<double>(correct) / n;

    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> positives(static_cast<std::size_t>(n));
    double ap_sum = 0.0;
    int ap_classes = 0;
    for (int cls = 0; cls < c; ++cls) {
        bool any = false;
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] = static_cast<double>(probs(i, cls));
            const bool pos = labels[static_cast<std::size_t>(i)] == cls;
            positives[static_cast<std::size_t>(i)] = pos ? 1 : 0;
            any = any || pos;
        }
        if (!any) {
            report.excluded_classes.push_back(cls);
            std::cerr << "warning: class " << cls
                      << " has no positives in this split; excluded from mAP\n";
            continue;
        }
        const double ap = average_precision(scores, positives);
        report.per_class_ap[static_cast<std::size_t>(cls)] = ap;
        ap_sum += ap;
        ++ap_classes;
    }
    report.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
    return report;
}

template MetricsReport map_from_logits<float>(const Matrix<float>&, std::span<const std::int32_t>);
template MetricsReport map_from_logits<double>(const Matrix<double>&, std::span<const std::int32_t>);

namespace {
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

std::string MetricsReport::to_text(
    const std::vector<std::pair<std::string, std::string>>& extra) const {
    std::vector<std::pair<std::string, std::string>> kv = extra;
    kv.emplace_back("accuracy", fmt(accuracy));
    kv.emplace_back("map", fmt(map));
    kv.emplace_back("mean_loss", fmt(mean_loss));
    kv.emplace_back("n_samples", std::to_string(n_samples));
    std::string aps;
    for (std::size_t i = 0; i < per_class_ap.size(); ++i) {
        if (i) aps.push_back(',');
        aps += std::isnan(per_class_ap[i]) ? "excluded" : fmt(per_class_ap[i]);
    }
    kv.emplace_back("per_class_ap", aps);
    std::sort(kv.begin(), kv.end());
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out.push_back('=');
        out += v;
        out.push_back('\n');
    }
    return out;
}

void append_metrics_csv(const std::string& path, int epoch, const std::string& split,
                        double loss, double accuracy, double map) {
    const bool exists = static_cast<bool>(std::ifstream(path));
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("metrics: cannot open csv '" + path + "'");
    if (!exists) out << "epoch,split,loss,accuracy,map\n";
    out << epoch << ',' << split << ',' << fmt(loss) << ',' << fmt(accuracy) << ',' << fmt(map)
        << '\n';
}

}  // namespace maa
