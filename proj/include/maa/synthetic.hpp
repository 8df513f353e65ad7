#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maa/dataio.hpp"

namespace maa {

struct SyntheticModalitySpec {
    std::uint8_t id = 0;
    std::string name;
    std::uint32_t dim = 0;
    int min_tokens = 1;
    int max_tokens = 1;
    // Fraction of dims carrying the class prototype; the rest are pure noise.
    double informativeness = 1.0;
    double sigma = 0.1;        // gaussian noise stddev on every dim
    double dropout = 0.0;      // probability the modality is absent (N=0)
    double scale = 1.0;        // multiplier on the final token values
};

struct SyntheticSpec {
    std::uint32_t classes = 0;
    std::uint32_t per_class = 0;
    std::uint64_t seed = 0;
    // Distinguishes train/val/test files drawn from the same prototypes.
    std::string split;
    double prototype_scale = 1.0;
    std::vector<SyntheticModalitySpec> modalities;
};

// Class-prototype dataset: per (class, modality) a fixed seeded prototype
// occupies the informative dims; every token is prototype + noise. A
// modality with informativeness 0 carries no label signal. Deterministic
// for a fixed spec.
std::pair<DatasetHeader, std::vector<EmbeddingRecord>> gen_synthetic(const SyntheticSpec& spec);

// Cross-modality interaction dataset: the first two modalities carry one
// of `symbols` seeded prototypes each; the label (2 classes) is whether
// the two symbols agree. No single modality carries label signal, so the
// task is only solvable by fusing them.
struct InteractionSpec {
    std::uint32_t symbols = 4;
    std::uint32_t per_class = 0;
    std::uint64_t seed = 0;
    std::string split;
    double prototype_scale = 1.0;
    std::vector<SyntheticModalitySpec> modalities;  // first two interact
};

std::pair<DatasetHeader, std::vector<EmbeddingRecord>> gen_interaction(const InteractionSpec& spec);

// The canonical three-modality spec used by the CLI defaults: one global
// token, five local-crop tokens, a variable number of text tokens.
std::vector<SyntheticModalitySpec> default_modalities();

}  // namespace maa
