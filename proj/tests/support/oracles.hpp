#pragma once

// Test-only oracles, kept independent of the library implementations
// they check.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "maa/batch.hpp"
#include "maa/dataio.hpp"
#include "maa/matrix.hpp"
#include "maa/rng.hpp"

namespace maa::oracle {

// AP by explicit rank enumeration, no sorting: the rank of item i is
// 1 + |{j : s_j > s_i}| + |{j < i : s_j == s_i}| (stable tie-break).
inline double brute_force_ap(std::span<const double> scores,
                             std::span<const std::uint8_t> positives) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (scores[j] > scores[i]) ++r;
            else if (scores[j] == scores[i] && j < i) ++r;
        }
        rank[i] = r;
    }
    // Accumulate prefix precisions in ascending rank order (ranks are
    // unique under the stable tie-break) so the sum is term-for-term
    // identical to a rank-sorted evaluation.
    double ap = 0.0;
    std::size_t total_pos = 0;
    for (std::size_t r = 1; r <= n; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            if (rank[i] != r || !positives[i]) continue;
            ++total_pos;
            std::size_t hits = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (positives[j] && rank[j] <= r) ++hits;
            }
            ap += static_cast<double>(hits) / static_cast<double>(r);
        }
    }
    return ap / static_cast<double>(total_pos);
}

// Plain Adam (no weight decay), one scalar, coded directly from the
// update equations.
struct ScalarAdamTrace {
    std::vector<double> thetas;
};

inline ScalarAdamTrace reference_scalar_adam(double theta0, double lr, double beta1, double beta2,
                                             double eps, int steps,
                                             double (*grad_fn)(double)) {
    ScalarAdamTrace trace;
    double theta = theta0, m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        const double g = grad_fn(theta);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(beta1, t));
        const double vhat = v / (1.0 - std::pow(beta2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
        trace.thetas.push_back(theta);
    }
    return trace;
}

// Mean over all real tokens of a record, zero-padded to `width`.
inline std::vector<double> pooled_raw_tokens(const EmbeddingRecord& rec, int width) {
    std::vector<double> mean(static_cast<std::size_t>(width), 0.0);
    int count = 0;
    for (const auto& mat : rec.tokens) {
        for (int t = 0; t < mat.rows(); ++t) {
            for (int j = 0; j < mat.cols(); ++j) mean[static_cast<std::size_t>(j)] += mat(t, j);
            ++count;
        }
    }
    for (auto& v : mean) v /= count;
    return mean;
}

// Nearest class-centroid classifier on the tokens of one modality.
// Returns held-out accuracy.
inline double nearest_centroid_accuracy(const std::vector<EmbeddingRecord>& train,
                                        const std::vector<EmbeddingRecord>& test,
                                        std::size_t modality_index, int classes) {
    const int dim = train.front().tokens[modality_index].cols();
    std::vector<std::vector<double>> centroid(static_cast<std::size_t>(classes),
                                              std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (const auto& rec : train) {
        const auto& mat = rec.tokens[modality_index];
        for (int t = 0; t < mat.rows(); ++t) {
            for (int j = 0; j < dim; ++j) centroid[rec.label][static_cast<std::size_t>(j)] += mat(t, j);
            ++counts[rec.label];
        }
    }
    for (int c = 0; c < classes; ++c) {
        for (auto& v : centroid[static_cast<std::size_t>(c)]) v /= std::max(1, counts[static_cast<std::size_t>(c)]);
    }
    int correct = 0, total = 0;
    for (const auto& rec : test) {
        const auto& mat = rec.tokens[modality_index];
        if (mat.rows() == 0) continue;
        std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
        for (int t = 0; t < mat.rows(); ++t) {
            for (int j = 0; j < dim; ++j) mean[static_cast<std::size_t>(j)] += mat(t, j);
        }
        for (auto& v : mean) v /= mat.rows();
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < classes; ++c) {
            double d = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double diff = mean[static_cast<std::size_t>(j)] - centroid[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best == static_cast<int>(rec.label)) ++correct;
        ++total;
    }
    return static_cast<double>(correct) / total;
}

// Softmax regression on pooled raw tokens, full-batch gradient descent.
// Returns held-out accuracy; used to show chance-level datasets are
// chance-level.
inline double linear_probe_accuracy(const std::vector<EmbeddingRecord>& train,
                                    const std::vector<EmbeddingRecord>& test, int classes,
                                    int width, int iters = 300, double lr = 0.5) {
    const std::size_t n = train.size();
    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = pooled_raw_tokens(train[i], width);
    std::vector<std::vector<double>> w(static_cast<std::size_t>(classes),
                                       std::vector<double>(static_cast<std::size_t>(width) + 1, 0.0));
    std::vector<double> logits(static_cast<std::size_t>(classes));
    std::vector<std::vector<double>> gw(static_cast<std::size_t>(classes),
                                        std::vector<double>(static_cast<std::size_t>(width) + 1, 0.0));
    for (int it = 0; it < iters; ++it) {
        for (auto& row : gw) std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int c = 0; c < classes; ++c) {
                double z = w[static_cast<std::size_t>(c)].back();
                for (int j = 0; j < width; ++j) z += w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] * x[i][static_cast<std::size_t>(j)];
                logits[static_cast<std::size_t>(c)] = z;
                mx = std::max(mx, z);
            }
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) denom += std::exp(logits[static_cast<std::size_t>(c)] - mx);
            for (int c = 0; c < classes; ++c) {
                const double p = std::exp(logits[static_cast<std::size_t>(c)] - mx) / denom;
                const double err = p - (train[i].label == static_cast<std::uint32_t>(c) ? 1.0 : 0.0);
                for (int j = 0; j < width; ++j) gw[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += err * x[i][static_cast<std::size_t>(j)];
                gw[static_cast<std::size_t>(c)].back() += err;
            }
        }
        for (int c = 0; c < classes; ++c) {
            for (std::size_t j = 0; j < w[static_cast<std::size_t>(c)].size(); ++j) {
                w[static_cast<std::size_t>(c)][j] -= lr * gw[static_cast<std::size_t>(c)][j] / static_cast<double>(n);
            }
        }
    }
    int correct = 0;
    for (const auto& rec : test) {
        const auto feat = pooled_raw_tokens(rec, width);
        int best = 0;
        double best_z = -1e300;
        for (int c = 0; c < classes; ++c) {
            double z = w[static_cast<std::size_t>(c)].back();
            for (int j = 0; j < width; ++j) z += w[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] * feat[static_cast<std::size_t>(j)];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        if (best == static_cast<int>(rec.label)) ++correct;
    }
    return static_cast<double>(correct) / test.size();
}

}  // namespace maa::oracle
