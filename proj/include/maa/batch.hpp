#pragma once

#include <cstdint>
#include <iostream>
#include <span>
#include <vector>

#include "maa/dataio.hpp"
#include "maa/matrix.hpp"
#include "maa/rng.hpp"

namespace maa {

// Padded token batch. Row r = b * seq_len + s holds sample b's s-th token
// slot, zero-filled where mask is 0. Modalities with different raw dims
// share the widest slot; each token uses its modality's first `dim` columns.
template <typename T>
struct Batch {
    int batch_size = 0;
    int seq_len = 0;
    int token_dim = 0;
    Matrix<T> tokens;                        // (batch_size*seq_len) x token_dim
    std::vector<std::uint8_t> modality_ids;  // per slot; 0 where masked
    std::vector<std::uint8_t> mask;          // 1 = real token
    std::vector<std::int32_t> labels;        // per sample

    int rows() const { return batch_size * seq_len; }
    int row(int b, int s) const { return b * seq_len + s; }
    std::span<const std::uint8_t> sample_mask(int b) const {
        return {mask.data() + static_cast<std::size_t>(b) * seq_len,
                static_cast<std::size_t>(seq_len)};
    }
};

struct CollateOptions {
    int max_seq_len = 64;
    // 0 keeps the canonical modality-table order; any other value shuffles
    // each sample's real tokens (used by order-invariance tests).
    std::uint64_t permute_seed = 0;
    // Modality ids to keep; empty = all modalities in the header.
    std::vector<std::uint8_t> enabled_ids;
    bool quiet = false;
};

namespace detail {
inline void collate_warn(const CollateOptions& opts, const std::string& msg) {
    if (!opts.quiet) std::cerr << "warning: " << msg << "\n";
}
}  // namespace detail

// Pads records into a batch. Text tokens are truncated tail-first when a
// record exceeds max_seq_len; records left without any enabled token are
// excluded. Throws if non-truncatable tokens alone exceed the limit or if
// nothing survives exclusion.
template <typename T>
Batch<T> collate(std::span<const EmbeddingRecord> records, const DatasetHeader& header,
                 const CollateOptions& opts = {}) {
    if (records.empty()) throw ConfigError("collate: no records");
    std::vector<bool> enabled(header.modalities.size(), opts.enabled_ids.empty());
    for (std::uint8_t id : opts.enabled_ids) {
        const int idx = header.modality_index(id);
        if (idx < 0) throw ConfigError("collate: enabled modality id " + std::to_string(id) +
                                       " not present in dataset header");
        enabled[static_cast<std::size_t>(idx)] = true;
    }

    // Per record: number of tokens taken from each modality after
    // filtering and text truncation.
    struct Plan {
        const EmbeddingRecord* rec;
        std::vector<int> take;
        int total = 0;
    };
    std::vector<Plan> plans;
    plans.reserve(records.size());
    int s_max = 0;
    for (const auto& rec : records) {
        if (rec.tokens.size() != header.modalities.size()) {
            throw ConfigError("collate: record '" + rec.id + "' has " +
                              std::to_string(rec.tokens.size()) +
                              " modalities, header declares " +
                              std::to_string(header.modalities.size()));
        }
        Plan plan{&rec, std::vector<int>(header.modalities.size(), 0), 0};
        int fixed = 0;
        int text_idx = -1;
        for (std::size_t m = 0; m < header.modalities.size(); ++m) {
            if (!enabled[m]) continue;
            plan.take[m] = rec.tokens[m].rows();
            if (header.modalities[m].id == kModalityText) {
                text_idx = static_cast<int>(m);
            } else {
                fixed += plan.take[m];
            }
        }
        plan.total = fixed + (text_idx >= 0 ? plan.take[static_cast<std::size_t>(text_idx)] : 0);
        if (plan.total > opts.max_seq_len) {
            if (text_idx < 0 || fixed > opts.max_seq_len) {
                throw ConfigError("collate: record '" + rec.id + "' has " + std::to_string(plan.total) +
                                  " tokens, exceeding max sequence length " +
                                  std::to_string(opts.max_seq_len));
            }
            const int keep = opts.max_seq_len - fixed;
            detail::collate_warn(opts, "collate: truncating text tokens of record '" + rec.id +
                                           "' from " +
                                           std::to_string(plan.take[static_cast<std::size_t>(text_idx)]) +
                                           " to " + std::to_string(keep));
            plan.take[static_cast<std::size_t>(text_idx)] = keep;
            plan.total = opts.max_seq_len;
        }
        if (plan.total == 0) {
            detail::collate_warn(opts, "collate: record '" + rec.id +
                                           "' has no tokens in the enabled modalities; excluded");
            continue;
        }
        s_max = std::max(s_max, plan.total);
        plans.push_back(std::move(plan));
    }
    if (plans.empty()) throw ConfigError("collate: no record has tokens in the enabled modalities");

    int token_dim = 0;
    for (std::size_t m = 0; m < header.modalities.size(); ++m) {
        if (enabled[m]) token_dim = std::max(token_dim, static_cast<int>(header.modalities[m].dim));
    }

    Batch<T> batch;
    batch.batch_size = static_cast<int>(plans.size());
    batch.seq_len = s_max;
    batch.token_dim = token_dim;
    batch.tokens = Matrix<T>(batch.rows(), token_dim);
    batch.modality_ids.assign(static_cast<std::size_t>(batch.rows()), 0);
    batch.mask.assign(static_cast<std::size_t>(batch.rows()), 0);
    batch.labels.resize(plans.size());

    for (int b = 0; b < batch.batch_size; ++b) {
        const Plan& plan = plans[static_cast<std::size_t>(b)];
        batch.labels[static_cast<std::size_t>(b)] = static_cast<std::int32_t>(plan.rec->label);
        int slot = 0;
        for (std::size_t m = 0; m < header.modalities.size(); ++m) {
            const int take = plan.take[m];
            const auto& mat = plan.rec->tokens[m];
            for (int t = 0; t < take; ++t, ++slot) {
                const int r = batch.row(b, slot);
                batch.mask[static_cast<std::size_t>(r)] = 1;
                batch.modality_ids[static_cast<std::size_t>(r)] = header.modalities[m].id;
                for (int j = 0; j < mat.cols(); ++j) {
                    batch.tokens(r, j) = static_cast<T>(mat(t, j));
                }
            }
        }
        if (opts.permute_seed != 0) {
            // Shuffle the real token slots of this sample in place.
            Rng rng(derive_seed(opts.permute_seed, "collate", static_cast<std::uint64_t>(b)));
            for (int i = slot; i > 1; --i) {
                const int j = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(i)));
                const int ri = batch.row(b, i - 1);
                const int rj = batch.row(b, j);
                for (int c = 0; c < token_dim; ++c) std::swap(batch.tokens(ri, c), batch.tokens(rj, c));
                std::swap(batch.modality_ids[static_cast<std::size_t>(ri)],
                          batch.modality_ids[static_cast<std::size_t>(rj)]);
            }
        }
    }
    return batch;
}

}  // namespace maa
