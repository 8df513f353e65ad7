#include "maa/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "maa/common.hpp"
#include "maa/rng.hpp"

namespace maa {

namespace {

void validate_modalities(const std::vector<SyntheticModalitySpec>& mods) {
    if (mods.empty()) throw ConfigError("gen: no modalities specified");
    bool any_kept = false;
    for (const auto& m : mods) {
        if (m.dim < 1) throw ConfigError("gen: modality '" + m.name + "' has dim 0");
        if (m.min_tokens < 0 || m.max_tokens < m.min_tokens) {
            throw ConfigError("gen: modality '" + m.name + "' has an invalid token range");
        }
        if (m.informativeness < 0.0 || m.informativeness > 1.0) {
            throw ConfigError("gen: informativeness must be in [0, 1]");
        }
        if (m.sigma < 0.0) throw ConfigError("gen: sigma must be >= 0");
        if (m.dropout < 0.0 || m.dropout > 1.0) throw ConfigError("gen: dropout must be in [0, 1]");
        if (m.dropout < 1.0 && m.max_tokens > 0) any_kept = true;
    }
    if (!any_kept) throw ConfigError("gen: every modality is always absent; records would be empty");
}

DatasetHeader make_header(std::uint32_t classes, const std::vector<std::string>& class_names,
                          const std::vector<SyntheticModalitySpec>& mods) {
    DatasetHeader header;
    header.num_classes = classes;
    header.class_names = class_names;
    for (const auto& m : mods) {
        header.modalities.push_back(ModalityInfo{m.id, m.dim, m.name});
    }
    header.validate();
    return header;
}

int informative_dims(const SyntheticModalitySpec& m) {
    return static_cast<int>(std::llround(m.informativeness * m.dim));
}

Matrix<float> draw_prototype(std::uint64_t seed, const SyntheticModalitySpec& m,
                             double prototype_scale, std::uint64_t stream_a, std::uint64_t stream_b) {
    Rng rng(derive_seed(seed, "proto", stream_a, stream_b));
    Matrix<float> proto(1, static_cast<int>(m.dim));
    const int n_info = informative_dims(m);
    for (int j = 0; j < n_info; ++j) {
        proto(0, j) = static_cast<float>(rng.gaussian() * prototype_scale);
    }
    return proto;
}

Matrix<float> make_tokens(Rng& rng, const SyntheticModalitySpec& m, const Matrix<float>& proto,
                          int n_tokens) {
    Matrix<float> tokens(n_tokens, static_cast<int>(m.dim));
    for (int t = 0; t < n_tokens; ++t) {
        for (int j = 0; j < static_cast<int>(m.dim); ++j) {
            const double v = proto(0, j) + rng.gaussian() * m.sigma;
            tokens(t, j) = static_cast<float>(v * m.scale);
        }
    }
    return tokens;
}

// Decides which modalities are present for one record; retries so at
// least one survives, forcing the first non-always-dropped one if needed.
std::vector<bool> draw_presence(std::uint64_t seed, const std::string& split,
                                std::uint64_t rec_index,
                                const std::vector<SyntheticModalitySpec>& mods) {
    std::vector<bool> present(mods.size(), false);
    for (int attempt = 0; attempt < 16; ++attempt) {
        bool any = false;
        for (std::size_t m = 0; m < mods.size(); ++m) {
            Rng rng(derive_seed(seed, "drop:" + split, rec_index * 16 + attempt, m));
            present[m] = mods[m].max_tokens > 0 && rng.uniform() >= mods[m].dropout;
            any = any || present[m];
        }
        if (any) return present;
    }
    for (std::size_t m = 0; m < mods.size(); ++m) {
        if (mods[m].dropout < 1.0 && mods[m].max_tokens > 0) {
            present[m] = true;
            return present;
        }
    }
    throw ConfigError("gen: could not produce a record with at least one modality");
}

int draw_token_count(std::uint64_t seed, const std::string& split, std::uint64_t rec_index,
                     std::size_t mod_index, const SyntheticModalitySpec& m) {
    if (m.min_tokens == m.max_tokens) return m.min_tokens;
    Rng rng(derive_seed(seed, "ntok:" + split, rec_index, mod_index));
    return m.min_tokens +
           static_cast<int>(rng.bounded(static_cast<std::uint64_t>(m.max_tokens - m.min_tokens + 1)));
}

std::string record_id(const std::string& split, std::uint64_t index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%s%06llu", split.c_str(), split.empty() ? "s" : "_",
                  static_cast<unsigned long long>(index));
    return buf;
}

}  // namespace

std::vector<SyntheticModalitySpec> default_modalities() {
    return {
        {kModalityGlobal, "G", 16, 1, 1, 0.5, 0.2, 0.0, 1.0},
        {kModalityLocal, "L", 16, 5, 5, 0.5, 0.2, 0.0, 1.0},
        {kModalityText, "T", 16, 1, 6, 0.5, 0.2, 0.0, 1.0},
    };
}

std::pair<DatasetHeader, std::vector<EmbeddingRecord>> gen_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw ConfigError("gen: class count must be >= 2");
    if (spec.per_class < 1) throw ConfigError("gen: per_class must be >= 1");
    validate_modalities(spec.modalities);

    std::vector<std::string> class_names;
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "class_%02u", c);
        class_names.emplace_back(buf);
    }
    DatasetHeader header = make_header(spec.classes, class_names, spec.modalities);

    // Prototypes are drawn per (class, modality) from the seed only, so
    // different splits of the same seed share them.
    std::vector<std::vector<Matrix<float>>> protos(spec.classes);
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
        for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
            protos[c].push_back(
                draw_prototype(spec.seed, spec.modalities[m], spec.prototype_scale, c, m));
        }
    }

    std::vector<EmbeddingRecord> records;
    records.reserve(static_cast<std::size_t>(spec.classes) * spec.per_class);
    std::uint64_t index = 0;
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
        for (std::uint32_t k = 0; k < spec.per_class; ++k, ++index) {
            EmbeddingRecord rec;
            rec.id = record_id(spec.split, index);
            rec.label = c;
            const auto present = draw_presence(spec.seed, spec.split, index, spec.modalities);
            for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
                const auto& ms = spec.modalities[m];
                if (!present[m]) {
                    rec.tokens.emplace_back(0, static_cast<int>(ms.dim));
                    continue;
                }
                const int n = std::max(1, draw_token_count(spec.seed, spec.split, index, m, ms));
                Rng rng(derive_seed(spec.seed, "tok:" + spec.split, index, m));
                rec.tokens.push_back(make_tokens(rng, ms, protos[c][m], n));
            }
            records.push_back(std::move(rec));
        }
    }
    header.record_count = records.size();
    return {std::move(header), std::move(records)};
}

std::pair<DatasetHeader, std::vector<EmbeddingRecord>> gen_interaction(const InteractionSpec& spec) {
    if (spec.symbols < 2) throw ConfigError("gen: interaction needs at least 2 symbols");
    if (spec.per_class < 1) throw ConfigError("gen: per_class must be >= 1");
    if (spec.modalities.size() < 2) {
        throw ConfigError("gen: interaction needs at least 2 modalities");
    }
    validate_modalities(spec.modalities);

    DatasetHeader header = make_header(2, {"disagree", "agree"}, spec.modalities);

    // Per (symbol, modality) prototypes for the two interacting modalities.
    std::vector<std::vector<Matrix<float>>> protos(spec.symbols);
    for (std::uint32_t sym = 0; sym < spec.symbols; ++sym) {
        for (std::size_t m = 0; m < 2; ++m) {
            protos[sym].push_back(
                draw_prototype(spec.seed, spec.modalities[m], spec.prototype_scale, sym, m));
        }
    }

    std::vector<EmbeddingRecord> records;
    records.reserve(2 * static_cast<std::size_t>(spec.per_class));
    std::uint64_t index = 0;
    for (std::uint32_t label = 0; label < 2; ++label) {
        for (std::uint32_t k = 0; k < spec.per_class; ++k, ++index) {
            EmbeddingRecord rec;
            rec.id = record_id(spec.split, index);
            rec.label = label;
            Rng pick(derive_seed(spec.seed, "sym:" + spec.split, index));
            const std::uint32_t s1 = static_cast<std::uint32_t>(pick.bounded(spec.symbols));
            const std::uint32_t s2 =
                label == 1 ? s1
                           : static_cast<std::uint32_t>(
                                 (s1 + 1 + pick.bounded(spec.symbols - 1)) % spec.symbols);
            for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
                const auto& ms = spec.modalities[m];
                const int n = std::max(1, draw_token_count(spec.seed, spec.split, index, m, ms));
                Rng rng(derive_seed(spec.seed, "tok:" + spec.split, index, m));
                if (m == 0) {
                    rec.tokens.push_back(make_tokens(rng, ms, protos[s1][0], n));
                } else if (m == 1) {
                    rec.tokens.push_back(make_tokens(rng, ms, protos[s2][1], n));
                } else {
                    const Matrix<float> silent(1, static_cast<int>(ms.dim));
                    rec.tokens.push_back(make_tokens(rng, ms, silent, n));
                }
            }
            records.push_back(std::move(rec));
        }
    }
    header.record_count = records.size();
    return {std::move(header), std::move(records)};
}

}  // namespace maa
