#pragma once

#include <string>
#include <utility>

#include "maa/matrix.hpp"

namespace maa {

// A trainable tensor with its gradient slot. `decay` marks parameters
// subject to decoupled weight decay (weight matrices only; LayerNorm
// scales, biases and modality embeddings are exempt).
template <typename T>
struct ParamTensor {
    Matrix<T> value;
    Matrix<T> grad;
    std::string name;
    bool decay = false;

    ParamTensor() = default;
    ParamTensor(int rows, int cols, std::string param_name, bool weight_decay)
        : value(rows, cols), grad(rows, cols),
          name(std::move(param_name)), decay(weight_decay) {}

    void zero_grad() { grad.zero(); }
};

}  // namespace maa
