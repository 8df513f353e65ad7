#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maa/checkpoint.hpp"
#include "maa/commands.hpp"
#include "maa/synthetic.hpp"
#include "maa/trainer.hpp"

using namespace maa;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("maa_train_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

SyntheticSpec tiny_data_spec(std::uint64_t seed, std::uint32_t per_class) {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.per_class = per_class;
    spec.seed = seed;
    spec.modalities = {
        {kModalityGlobal, "G", 8, 1, 1, 1.0, 0.2, 0.0, 1.0},
        {kModalityLocal, "L", 8, 2, 2, 1.0, 0.2, 0.0, 1.0},
        {kModalityText, "T", 8, 1, 3, 1.0, 0.2, 0.1, 1.0},
    };
    return spec;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.dim = 16;
    cfg.ffn_dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.dropout = 0.1;
    cfg.lr = 1e-3;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.warmup_epochs = 1;
    cfg.t0_epochs = 2;
    cfg.seed = 5;
    return cfg;
}

struct TinyData {
    DatasetHeader header;
    std::vector<EmbeddingRecord> train;
    std::vector<EmbeddingRecord> val;
};

TinyData make_tiny_data(std::uint64_t seed = 100) {
    auto spec = tiny_data_spec(seed, 12);
    spec.split = "train";
    auto [header, train] = gen_synthetic(spec);
    spec.split = "val";
    spec.per_class = 6;
    auto val = gen_synthetic(spec).second;
    return {header, train, val};
}

}  // namespace

TEST_CASE("checkpoint save/load/apply is bit-exact") {
    TrainConfig cfg = tiny_train_config();
    const auto data = make_tiny_data();
    cfg.data = resolve_schema(cfg, data.header);
    MaaModel<float> model(ModelConfig::from_train_config(cfg), 9);
    AdamW<float> opt(model.params(), AdamWConfig{});

    // Give the optimizer some non-trivial state.
    for (auto* p : model.params()) p->grad.fill(0.01f);
    opt.step(model.params(), 1e-3);

    TrainState state;
    state.epochs_done = 3;
    state.global_step = 17;
    state.adamw_t = opt.step_count();
    state.best_val_map = 0.625;

    const auto path = (fresh_dir("ckpt") / "m.ckpt").string();
    save_checkpoint(path, cfg.canonical_text(), model, &opt, state);

    const Checkpoint ckpt = load_checkpoint(path);
    CHECK(ckpt.config_text == cfg.canonical_text());
    CHECK(ckpt.state.epochs_done == 3);
    CHECK(ckpt.state.global_step == 17);
    CHECK(ckpt.state.adamw_t == 1);
    CHECK(ckpt.state.best_val_map == 0.625);
    CHECK(ckpt.has_optimizer_state());

    MaaModel<float> model2(ModelConfig::from_train_config(cfg), 1234);  // different init
    AdamW<float> opt2(model2.params(), AdamWConfig{});
    apply_to_model(ckpt, model2);
    apply_to_optimizer(ckpt, model2.params(), opt2);
    const auto pa = model.params();
    const auto pb = model2.params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->value.raw() == pb[i]->value.raw());  // bitwise
        CHECK(opt.first_moment(i).raw() == opt2.first_moment(i).raw());
        CHECK(opt.second_moment(i).raw() == opt2.second_moment(i).raw());
    }
    CHECK(opt2.step_count() == 1);

    // Save the reloaded state again: identical bytes.
    const auto path2 = (fresh_dir("ckpt2") / "m.ckpt").string();
    save_checkpoint(path2, ckpt.config_text, model2, &opt2, ckpt.state);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("tiny training run writes checkpoints, config echo and csv rows") {
    const auto data = make_tiny_data();
    const auto dir = fresh_dir("run");
    const auto outcome =
        train_model(tiny_train_config(), data.header, data.train, data.val, dir.string(),
                    false, true);
    CHECK(outcome.epochs_run == 2);
    CHECK(outcome.best_val_map >= 0.0);
    CHECK(fs::exists(dir / "last.ckpt"));
    CHECK(fs::exists(dir / "best.ckpt"));
    CHECK(fs::exists(dir / "config.txt"));
    CHECK_FALSE(fs::exists(dir / ".lock"));  // released

    std::ifstream csv(dir / "metrics.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(csv, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5);  // header + (train,val) x 2 epochs
    CHECK(lines[1].rfind("0,train,", 0) == 0);
    CHECK(lines[2].rfind("0,val,", 0) == 0);
    CHECK(lines[4].rfind("1,val,", 0) == 0);
}

TEST_CASE("identical config and data give identical csv logs") {
    const auto data = make_tiny_data();
    const auto dir_a = fresh_dir("det_a");
    const auto dir_b = fresh_dir("det_b");
    train_model(tiny_train_config(), data.header, data.train, data.val, dir_a.string(), false, true);
    train_model(tiny_train_config(), data.header, data.train, data.val, dir_b.string(), false, true);
    CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
    CHECK(slurp(dir_a / "last.ckpt") == slurp(dir_b / "last.ckpt"));
}

TEST_CASE("resume reproduces the uninterrupted loss trace bit-exactly") {
    const auto data = make_tiny_data();
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 4;

    const auto full_dir = fresh_dir("full");
    train_model(cfg, data.header, data.train, data.val, full_dir.string(), false, true);

    const auto resumed_dir = fresh_dir("resumed");
    TrainConfig first_half = cfg;
    first_half.epochs = 2;
    train_model(first_half, data.header, data.train, data.val, resumed_dir.string(), false, true);
    train_model(cfg, data.header, data.train, data.val, resumed_dir.string(), /*resume=*/true, true);

    CHECK(slurp(full_dir / "metrics.csv") == slurp(resumed_dir / "metrics.csv"));
    CHECK(slurp(full_dir / "last.ckpt") == slurp(resumed_dir / "last.ckpt"));

    // best.ckpt may have been written before the interruption, so its
    // config snapshot records that run's (smaller) epochs value; params,
    // state and everything else must still match.
    const Checkpoint best_full = load_checkpoint((full_dir / "best.ckpt").string());
    const Checkpoint best_resumed = load_checkpoint((resumed_dir / "best.ckpt").string());
    const auto strip_epochs = [](const std::string& text) {
        std::string out;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("epochs=", 0) == 0) continue;
            out += line + "\n";
        }
        return out;
    };
    CHECK(strip_epochs(best_full.config_text) == strip_epochs(best_resumed.config_text));
    CHECK(best_full.state.epochs_done == best_resumed.state.epochs_done);
    CHECK(best_full.state.global_step == best_resumed.state.global_step);
    CHECK(best_full.state.best_val_map == best_resumed.state.best_val_map);
    REQUIRE(best_full.tensors.size() == best_resumed.tensors.size());
    for (std::size_t i = 0; i < best_full.tensors.size(); ++i) {
        CHECK(best_full.tensors[i].first == best_resumed.tensors[i].first);
        CHECK(best_full.tensors[i].second.raw() == best_resumed.tensors[i].second.raw());
    }
}

TEST_CASE("resume rejects changed configs and missing checkpoints") {
    const auto data = make_tiny_data();
    const auto dir = fresh_dir("resume_bad");
    TrainConfig cfg = tiny_train_config();
    CHECK_THROWS_AS(
        train_model(cfg, data.header, data.train, data.val, dir.string(), /*resume=*/true, true),
        ConfigError);

    train_model(cfg, data.header, data.train, data.val, dir.string(), false, true);
    TrainConfig changed = cfg;
    changed.lr = 2e-3;
    changed.epochs = 4;
    CHECK_THROWS_AS(train_model(changed, data.header, data.train, data.val, dir.string(),
                                /*resume=*/true, true),
                    ConfigError);
}

TEST_CASE("output directory lock blocks concurrent runs") {
    const auto data = make_tiny_data();
    const auto dir = fresh_dir("locked");
    {
        std::ofstream lock(dir / ".lock");
        lock << "held\n";
    }
    CHECK_THROWS_AS(train_model(tiny_train_config(), data.header, data.train, data.val,
                                dir.string(), false, true),
                    ConfigError);
}

TEST_CASE("training only a modality subset works") {
    const auto data = make_tiny_data();
    TrainConfig cfg = tiny_train_config();
    cfg.modalities = {"G"};
    const auto dir = fresh_dir("subset");
    const auto outcome =
        train_model(cfg, data.header, data.train, data.val, dir.string(), false, true);
    CHECK(outcome.epochs_run == 2);

    TrainConfig missing = tiny_train_config();
    missing.modalities = {"G", "X"};
    const auto dir2 = fresh_dir("subset_bad");
    CHECK_THROWS_AS(
        train_model(missing, data.header, data.train, data.val, dir2.string(), false, true),
        ConfigError);
}

TEST_CASE("training rejects 64-bit precision (checkpoints are float32)") {
    const auto data = make_tiny_data();
    TrainConfig cfg = tiny_train_config();
    cfg.precision = 64;
    const auto dir = fresh_dir("prec64");
    CHECK_THROWS_AS(
        train_model(cfg, data.header, data.train, data.val, dir.string(), false, true),
        ConfigError);
}

TEST_CASE("eval runs from a checkpoint alone and validates the dataset") {
    // A longer easy run so the model actually converges.
    const auto data = make_tiny_data(4242);
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 8;
    const auto dir = fresh_dir("eval");
    const auto outcome =
        train_model(cfg, data.header, data.train, data.val, dir.string(), false, true);

    const auto train_path = (dir / "train.maae").string();
    const auto val_path = (dir / "val.maae").string();
    DatasetHeader header = data.header;
    header.record_count = data.train.size();
    write_dataset(train_path, header, data.train);
    header.record_count = data.val.size();
    write_dataset(val_path, header, data.val);

    EvalOptions opts;
    opts.checkpoint = outcome.best_checkpoint;
    opts.data_path = val_path;
    opts.quiet = true;
    const auto val_report = run_eval(opts);
    CHECK(val_report.map == doctest::Approx(outcome.best_val_map).epsilon(1e-12));

    // Deterministic: two evals agree exactly.
    const auto val_report2 = run_eval(opts);
    CHECK(val_report.map == val_report2.map);
    CHECK(val_report.accuracy == val_report2.accuracy);
    CHECK(val_report.mean_loss == val_report2.mean_loss);

    // A converged tiny run fits its training split at least as well as val.
    opts.data_path = train_path;
    const auto train_report = run_eval(opts);
    CHECK(train_report.accuracy >= val_report.accuracy - 1e-12);

    // Class-count mismatch is a validation error.
    SyntheticSpec other = tiny_data_spec(9, 4);
    other.classes = 4;
    const auto [other_header, other_records] = gen_synthetic(other);
    const auto other_path = (dir / "other.maae").string();
    write_dataset(other_path, other_header, other_records);
    opts.data_path = other_path;
    CHECK_THROWS_AS(run_eval(opts), ConfigError);
}

TEST_CASE("eval output is independent of the worker thread count") {
    const auto data = make_tiny_data(777);
    TrainConfig cfg = tiny_train_config();
    cfg.data = resolve_schema(cfg, data.header);
    MaaModel<float> model(ModelConfig::from_train_config(cfg), 3);
    const auto r1 = evaluate_records(model, data.val, data.header, cfg, 1);
    const auto r4 = evaluate_records(model, data.val, data.header, cfg, 4);
    CHECK(r1.map == r4.map);
    CHECK(r1.accuracy == r4.accuracy);
    CHECK(r1.mean_loss == r4.mean_loss);
}

TEST_CASE("MAA_NUM_THREADS bounds the worker cap") {
    const char* saved = std::getenv("MAA_NUM_THREADS");
    const std::string saved_value = saved ? saved : "";
    setenv("MAA_NUM_THREADS", "2", 1);
    CHECK(resolve_num_threads() == 2);
    setenv("MAA_NUM_THREADS", "1", 1);
    CHECK(resolve_num_threads() == 1);
    setenv("MAA_NUM_THREADS", "junk", 1);
    CHECK_THROWS_AS(resolve_num_threads(), ConfigError);
    if (saved) {
        setenv("MAA_NUM_THREADS", saved_value.c_str(), 1);
    } else {
        unsetenv("MAA_NUM_THREADS");
    }
}

TEST_CASE("checkpoint loader survives truncation at every byte offset") {
    TrainConfig cfg = tiny_train_config();
    const auto data = make_tiny_data(31);
    cfg.data = resolve_schema(cfg, data.header);
    MaaModel<float> model(ModelConfig::from_train_config(cfg), 2);
    const auto dir = fresh_dir("ckpt_fuzz");
    const auto path = (dir / "m.ckpt").string();
    save_checkpoint(path, cfg.canonical_text(), model, nullptr, TrainState{});
    const std::string bytes = slurp(path);
    const auto cut_path = (dir / "cut.ckpt").string();

    // Sample offsets (the blob is ~100 KB); always include the header region.
    std::vector<std::size_t> lengths;
    for (std::size_t len = 0; len < std::min<std::size_t>(bytes.size(), 2048); ++len) {
        lengths.push_back(len);
    }
    for (std::size_t len = 2048; len < bytes.size(); len += 997) lengths.push_back(len);
    for (const std::size_t len : lengths) {
        {
            std::ofstream out(cut_path, std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(len));
        }
        CHECK_THROWS_AS(load_checkpoint(cut_path), FormatError);
    }
}
