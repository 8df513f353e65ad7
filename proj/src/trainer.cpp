#include "maa/trainer.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "maa/batch.hpp"
#include "maa/optim.hpp"

namespace maa {

namespace fs = std::filesystem;

DataSchema resolve_schema(const TrainConfig& cfg, const DatasetHeader& header) {
    header.validate();
    DataSchema schema;
    schema.classes = header.num_classes;
    schema.class_names = header.class_names;
    if (cfg.modalities.empty()) {
        schema.modalities = header.modalities;
    } else {
        for (const auto& m : header.modalities) {
            if (std::find(cfg.modalities.begin(), cfg.modalities.end(), m.name) !=
                cfg.modalities.end()) {
                schema.modalities.push_back(m);
            }
        }
        if (schema.modalities.size() != cfg.modalities.size()) {
            std::string have;
            for (const auto& m : header.modalities) have += m.name + " ";
            throw ConfigError("config: enabled modalities are not all present in the dataset (has: " +
                              have + ")");
        }
    }
    // Names are embedded in the flat config text; keep them round-trippable.
    for (const auto& m : schema.modalities) {
        if (m.name.find_first_of(":;,=\n") != std::string::npos) {
            throw ConfigError("config: modality name '" + m.name +
                              "' contains characters not representable in the config text");
        }
    }
    for (const auto& name : schema.class_names) {
        if (name.find_first_of(",=\n") != std::string::npos) {
            throw ConfigError("config: class name '" + name +
                              "' contains characters not representable in the config text");
        }
    }
    return schema;
}

void check_schema_compatible(const DataSchema& schema, const DatasetHeader& header) {
    if (schema.classes != header.num_classes) {
        throw ConfigError("eval: checkpoint expects " + std::to_string(schema.classes) +
                          " classes, dataset has " + std::to_string(header.num_classes));
    }
    for (const auto& m : schema.modalities) {
        const int idx = header.modality_index(m.id);
        if (idx < 0) {
            throw ConfigError("eval: dataset lacks modality '" + m.name + "' (id " +
                              std::to_string(m.id) + ") required by the checkpoint");
        }
        if (header.modalities[static_cast<std::size_t>(idx)].dim != m.dim) {
            throw ConfigError("eval: modality '" + m.name + "' has dim " +
                              std::to_string(header.modalities[static_cast<std::size_t>(idx)].dim) +
                              ", checkpoint expects " + std::to_string(m.dim));
        }
    }
}

int resolve_num_threads() {
    int cap = static_cast<int>(std::min(4u, std::max(1u, std::thread::hardware_concurrency())));
    if (const char* env = std::getenv("MAA_NUM_THREADS")) {
        try {
            cap = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw ConfigError("MAA_NUM_THREADS: not an integer");
        }
    }
    return cap;
}

namespace {

std::vector<std::uint8_t> enabled_ids(const DataSchema& schema) {
    std::vector<std::uint8_t> ids;
    for (const auto& m : schema.modalities) ids.push_back(m.id);
    return ids;
}

struct EvalShard {
    Matrix<float> logits;
    std::vector<std::int32_t> labels;
    double loss_sum = 0.0;
    int samples = 0;
};

}  // namespace

MetricsReport evaluate_records(const MaaModel<float>& model,
                               const std::vector<EmbeddingRecord>& records,
                               const DatasetHeader& header, const TrainConfig& cfg,
                               int num_threads) {
    if (records.empty()) throw ConfigError("eval: empty dataset");
    DataSchema schema;
    schema.classes = static_cast<std::uint32_t>(model.config().classes);
    schema.modalities.assign(model.modalities().begin(), model.modalities().end());
    check_schema_compatible(schema, header);

    CollateOptions copts;
    copts.max_seq_len = cfg.max_seq_len;
    copts.enabled_ids = enabled_ids(schema);
    copts.quiet = true;

    const int n_batches =
        static_cast<int>((records.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
    std::vector<EvalShard> shards(static_cast<std::size_t>(n_batches));

    const auto run_range = [&](int lo, int hi) {
        for (int bi = lo; bi < hi; ++bi) {
            const std::size_t start = static_cast<std::size_t>(bi) * cfg.batch_size;
            const std::size_t end = std::min(records.size(), start + cfg.batch_size);
            const Batch<float> batch = collate<float>(
                std::span<const EmbeddingRecord>(records.data() + start, end - start), header, copts);
            ForwardTrace<float> trace;
            model.forward(batch, trace, /*train=*/false);
            const auto loss = ce_loss<float>(trace.logits, batch.labels);
            EvalShard& shard = shards[static_cast<std::size_t>(bi)];
            shard.logits = trace.logits;
            shard.labels = batch.labels;
            shard.loss_sum = loss.loss * batch.batch_size;
            shard.samples = batch.batch_size;
        }
    };

    const int threads = std::max(1, std::min(num_threads, n_batches));
    if (threads == 1) {
        run_range(0, n_batches);
    } else {
        std::vector<std::thread> pool;
        const int per = (n_batches + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int lo = t * per;
            const int hi = std::min(n_batches, lo + per);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    int total = 0;
    for (const auto& s : shards) total += s.samples;
    Matrix<float> logits(total, model.config().classes);
    std::vector<std::int32_t> labels;
    labels.reserve(static_cast<std::size_t>(total));
    double loss_sum = 0.0;
    int row = 0;
    for (const auto& s : shards) {
        for (int i = 0; i < s.logits.rows(); ++i, ++row) {
            std::copy(s.logits.row(i), s.logits.row(i) + s.logits.cols(), logits.row(row));
        }
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        loss_sum += s.loss_sum;
    }
    MetricsReport report = map_from_logits(logits, labels);
    report.mean_loss = loss_sum / total;
    return report;
}

namespace {

// Advisory single-writer lock on the output directory.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (fs::exists(path_)) {
            throw ConfigError("train: output directory '" + dir.string() +
                              "' is locked by another run (remove " + path_.string() +
                              " if that run is dead)");
        }
        std::ofstream out(path_);
        out << "pid unknown\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

std::string strip_resumable_keys(const std::string& config_text) {
    std::istringstream in(config_text);
    std::string line, out;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos && TrainConfig::is_resumable_key(line.substr(0, eq))) continue;
        out += line;
        out.push_back('\n');
    }
    return out;
}

}  // namespace

TrainOutcome train_model(TrainConfig cfg, const DatasetHeader& header,
                         const std::vector<EmbeddingRecord>& train_records,
                         const std::vector<EmbeddingRecord>& val_records,
                         const std::string& out_dir, bool resume, bool quiet) {
    cfg.validate();
    if (cfg.precision != 32) {
        throw ConfigError("train: only precision=32 is supported for training "
                          "(checkpoints store float32 tensors); use gradcheck for 64-bit runs");
    }
    if (train_records.empty()) throw ConfigError("train: empty training set");
    if (val_records.empty()) throw ConfigError("train: empty validation set");
    cfg.data = resolve_schema(cfg, header);

    const fs::path dir(out_dir);
    DirLock lock(dir);
    const std::string config_text = cfg.canonical_text();
    {
        std::ofstream cf(dir / "config.txt");
        cf << config_text;
    }
    const std::string csv_path = (dir / "metrics.csv").string();
    const std::string last_path = (dir / "last.ckpt").string();
    const std::string best_path = (dir / "best.ckpt").string();

    MaaModel<float> model(ModelConfig::from_train_config(cfg), cfg.seed);
    AdamW<float> optimizer(model.params(),
                           AdamWConfig{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});

    const int steps_per_epoch =
        static_cast<int>((train_records.size() + cfg.batch_size - 1) /
                         static_cast<std::size_t>(cfg.batch_size));
    ScheduleConfig schedule;
    schedule.base_lr = cfg.lr;
    schedule.warmup_steps = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
    schedule.t0 = std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.t0_epochs) * steps_per_epoch);
    schedule.t_mult = cfg.t_mult;
    schedule.eta_min = cfg.eta_min;

    TrainState state;
    if (resume) {
        if (!fs::exists(last_path)) {
            throw ConfigError("train: --resume requested but '" + last_path + "' does not exist");
        }
        const Checkpoint ckpt = load_checkpoint(last_path);
        if (strip_resumable_keys(ckpt.config_text) != strip_resumable_keys(config_text)) {
            throw ConfigError("train: resume config does not match the checkpoint config "
                              "(only 'epochs' may change)");
        }
        apply_to_model(ckpt, model);
        apply_to_optimizer(ckpt, model.params(), optimizer);
        state = ckpt.state;
    }

    CollateOptions copts;
    copts.max_seq_len = cfg.max_seq_len;
    copts.enabled_ids = enabled_ids(cfg.data);
    copts.quiet = true;

    const int eval_threads = resolve_num_threads();

    TrainOutcome outcome;
    outcome.best_val_map = state.best_val_map;
    outcome.best_checkpoint = best_path;
    outcome.last_checkpoint = last_path;

    std::vector<std::size_t> order(train_records.size());
    for (int epoch = static_cast<int>(state.epochs_done); epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int sample_count = 0;
        Matrix<float> train_logits(static_cast<int>(train_records.size()),
                                   static_cast<int>(cfg.data.classes));
        std::vector<std::int32_t> train_labels;
        train_labels.reserve(train_records.size());
        int logit_row = 0;

        std::vector<EmbeddingRecord> chunk;
        for (int bi = 0; bi < steps_per_epoch; ++bi) {
            const std::size_t start = static_cast<std::size_t>(bi) * cfg.batch_size;
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            chunk.clear();
            for (std::size_t i = start; i < end; ++i) chunk.push_back(train_records[order[i]]);

            const Batch<float> batch = collate<float>(chunk, header, copts);
            ForwardTrace<float> trace;
            Rng dropout_rng(derive_seed(cfg.seed, "dropout", static_cast<std::uint64_t>(epoch),
                                        static_cast<std::uint64_t>(bi)));
            model.zero_grads();
            const double loss = model.forward_backward(batch, trace, /*train=*/true, &dropout_rng);
            clip_global_norm(model.params(), cfg.clip_norm);
            const double lr = lr_at(state.global_step, schedule);
            optimizer.step(model.params(), lr);
            ++state.global_step;

            loss_sum += loss * batch.batch_size;
            sample_count += batch.batch_size;
            for (int i = 0; i < trace.logits.rows(); ++i, ++logit_row) {
                std::copy(trace.logits.row(i), trace.logits.row(i) + trace.logits.cols(),
                          train_logits.row(logit_row));
            }
            train_labels.insert(train_labels.end(), batch.labels.begin(), batch.labels.end());
        }

        const double train_loss = loss_sum / sample_count;
        Matrix<float> seen_logits = rows_slice(train_logits, 0, logit_row);
        MetricsReport train_report = map_from_logits(seen_logits, train_labels);
        append_metrics_csv(csv_path, epoch, "train", train_loss, train_report.accuracy,
                           train_report.map);
        outcome.train_loss_per_epoch.push_back(train_loss);

        MetricsReport val_report = evaluate_records(model, val_records, header, cfg, eval_threads);
        append_metrics_csv(csv_path, epoch, "val", val_report.mean_loss, val_report.accuracy,
                           val_report.map);
        outcome.val_map_per_epoch.push_back(val_report.map);

        state.epochs_done = epoch + 1;
        state.adamw_t = optimizer.step_count();
        if (val_report.map > state.best_val_map) {
            state.best_val_map = val_report.map;
            save_checkpoint(best_path, config_text, model, nullptr, state);
        }
        save_checkpoint(last_path, config_text, model, &optimizer, state);

        if (!quiet) {
            std::cout << "epoch " << epoch << ": train loss " << train_loss << ", val mAP "
                      << val_report.map << ", val acc " << val_report.accuracy << "\n";
        }
    }

    outcome.best_val_map = state.best_val_map;
    outcome.epochs_run = static_cast<int>(state.epochs_done);
    return outcome;
}

}  // namespace maa
