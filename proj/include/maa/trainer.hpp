#pragma once

#include <string>
#include <vector>

#include "maa/checkpoint.hpp"
#include "maa/config.hpp"
#include "maa/dataio.hpp"
#include "maa/metrics.hpp"
#include "maa/model.hpp"

namespace maa {

// Resolves the enabled-modality schema of `cfg` against a dataset header
// and validates compatibility. Throws ConfigError on mismatch.
DataSchema resolve_schema(const TrainConfig& cfg, const DatasetHeader& header);

// Checks a dataset header against the schema stored in a checkpoint config.
void check_schema_compatible(const DataSchema& schema, const DatasetHeader& header);

// Deterministic evaluation (no dropout). Batches may be sharded over
// num_threads; results are merged in batch order so the report is
// identical for any thread count.
MetricsReport evaluate_records(const MaaModel<float>& model,
                               const std::vector<EmbeddingRecord>& records,
                               const DatasetHeader& header, const TrainConfig& cfg,
                               int num_threads = 1);

struct TrainOutcome {
    double best_val_map = -1.0;
    int epochs_run = 0;
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::vector<double> train_loss_per_epoch;
    std::vector<double> val_map_per_epoch;
};

// Full training loop: seeded shuffling, gradient clipping, AdamW with
// warmup + cosine warm restarts, per-epoch eval, CSV logging, last/best
// checkpoints. Resuming from out_dir/last.ckpt reproduces the
// uninterrupted run bit-exactly because all per-epoch randomness is
// derived from (seed, epoch) counters.
TrainOutcome train_model(TrainConfig cfg, const DatasetHeader& header,
                         const std::vector<EmbeddingRecord>& train_records,
                         const std::vector<EmbeddingRecord>& val_records,
                         const std::string& out_dir, bool resume = false, bool quiet = false);

// Worker thread cap for eval sharding: min(4, hardware_concurrency) by
// default; the MAA_NUM_THREADS env var replaces the cap when set.
int resolve_num_threads();

}  // namespace maa
