#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maa/matrix.hpp"
#include "maa/model.hpp"
#include "maa/optim.hpp"

namespace maa {

struct TrainState {
    std::int64_t epochs_done = 0;
    std::int64_t global_step = 0;
    std::int64_t adamw_t = 0;
    double best_val_map = -1.0;
};

// Parsed checkpoint: config snapshot, loop state, and named float32
// tensors (model parameters plus optional "adamw.m.*" / "adamw.v.*"
// optimizer moments) in manifest order.
struct Checkpoint {
    std::string config_text;
    TrainState state;
    std::vector<std::pair<std::string, Matrix<float>>> tensors;

    const Matrix<float>* find(const std::string& name) const;
    bool has_optimizer_state() const;
};

// Container layout, little-endian, reload bit-exact:
//   magic "MAAC" | version u16
//   | config length u32, config text (canonical key-sorted)
//   | state length u32, state text (canonical key-sorted)
//   | manifest count u32, per tensor: u16-len name, rows u32, cols u32, offset u64
//   | blob size u64, raw float32 values in manifest order.
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const MaaModel<float>& model, const AdamW<float>* optimizer,
                     const TrainState& state);

Checkpoint load_checkpoint(const std::string& path);

// Copies parameter tensors into the model; every model parameter must be
// present with its exact shape.
void apply_to_model(const Checkpoint& ckpt, MaaModel<float>& model);

void apply_to_optimizer(const Checkpoint& ckpt, std::span<ParamTensor<float>* const> params,
                        AdamW<float>& optimizer);

}  // namespace maa
