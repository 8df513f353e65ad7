#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maa/dataio.hpp"
#include "maa/ops.hpp"

namespace maa {

enum class AdapterMode { independent, shared, none };
enum class EncoderNorm { post, pre };

AdapterMode adapter_mode_from_string(const std::string& s);
const char* to_string(AdapterMode m);
EncoderNorm encoder_norm_from_string(const std::string& s);
const char* to_string(EncoderNorm n);

// Enabled slice of a dataset header, resolved at train time and carried
// inside every checkpoint so eval needs nothing but the checkpoint and a
// dataset.
struct DataSchema {
    std::uint32_t classes = 0;
    std::vector<std::string> class_names;
    std::vector<ModalityInfo> modalities;

    bool resolved() const { return classes >= 2 && !modalities.empty(); }
};

// Every knob of the training recipe. Defaults follow the reference recipe
// (dim 768, FFN 2048, 8 heads, 2 layers, AdamW at 3e-5 with linear warmup
// and cosine warm restarts, 50 epochs, batch 8).
struct TrainConfig {
    // model
    int dim = 768;
    int ffn_dim = 2048;
    int heads = 8;
    int layers = 2;
    AdapterMode adapter_mode = AdapterMode::independent;
    Activation activation = Activation::gelu;
    EncoderNorm encoder_norm = EncoderNorm::post;
    double dropout = 0.1;
    double ln_eps = 1e-5;

    // data
    std::vector<std::string> modalities;  // enabled modality names; empty = all
    int max_seq_len = 64;

    // optimizer
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;  // 0 disables clipping

    // schedule (epoch-denominated; converted to steps once the dataset size is known)
    int warmup_epochs = 1;
    int t0_epochs = 10;
    int t_mult = 2;
    double eta_min = 0.0;

    // loop
    int epochs = 50;
    int batch_size = 8;
    std::uint64_t seed = 42;
    int precision = 32;

    DataSchema data;

    void set(const std::string& key, const std::string& value);
    std::string canonical_text() const;
    static TrainConfig from_text(const std::string& text);
    static TrainConfig load_file(const std::string& path);
    void validate() const;

    // Keys that may differ between a checkpoint and a resuming run.
    static bool is_resumable_key(const std::string& key);
};

}  // namespace maa
