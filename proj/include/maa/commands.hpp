#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maa/gradcheck.hpp"
#include "maa/metrics.hpp"
#include "maa/synthetic.hpp"

namespace maa {

// "NAME:key=val,..." with keys dim, tokens (N or A..B), info, sigma,
// drop, scale, id. Well-known names G/L/T imply ids 0/1/2.
SyntheticModalitySpec parse_modality_spec(const std::string& text);

struct GenOptions {
    std::string out;
    std::uint32_t classes = 8;
    std::uint32_t per_class = 125;
    std::uint64_t seed = 1;
    std::string split;
    std::string mode = "prototype";  // or "agreement"
    std::uint32_t symbols = 4;
    double prototype_scale = 1.0;
    std::vector<std::string> modality_specs;  // empty = defaults
    bool quiet = false;
};

// Generates a synthetic dataset file; returns the header actually written.
DatasetHeader run_gen(const GenOptions& options);

struct TrainOptions {
    std::string train_path;
    std::string val_path;
    std::string out_dir;
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    bool resume = false;
    bool quiet = false;
};

struct TrainSummary {
    double best_val_map = -1.0;
    int epochs_run = 0;
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::vector<double> train_loss_per_epoch;
    std::vector<double> val_map_per_epoch;
};

TrainSummary run_train(const TrainOptions& options);

struct EvalOptions {
    std::string checkpoint;
    std::string data_path;
    std::string report_path;  // optional
    int threads = 0;          // 0 = MAA_NUM_THREADS / default cap
    bool quiet = false;
};

MetricsReport run_eval(const EvalOptions& options);

struct GradcheckOptions {
    int dim = 16;
    int ffn_dim = 32;
    int heads = 2;
    int layers = 1;
    int classes = 3;
    std::string adapter_mode = "independent";
    std::string activation = "gelu";
    std::string encoder_norm = "post";
    double eps = 1e-4;
    double tol = 1e-4;
    std::uint64_t seed = 7;
    bool break_layer_norm = false;
    bool quiet = false;
};

// Builds a tiny 64-bit model on a synthetic batch, runs the analytic
// backward pass and the central-difference oracle over every parameter.
GradCheckReport run_gradcheck(const GradcheckOptions& options);

struct AblateOptions {
    std::string axis;  // "modalities" | "adapter" | "layers"
    std::vector<std::string> values;
    std::string train_path;
    std::string val_path;
    std::string out_dir;
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    bool quiet = false;
};

struct AblateCell {
    std::string value;
    double map = 0.0;
    double accuracy = 0.0;
};

// Trains one run per axis value with identical seed and budget; returns
// cells in the given order and writes ablation.csv plus a text table.
std::vector<AblateCell> run_ablate(const AblateOptions& options);

}  // namespace maa
