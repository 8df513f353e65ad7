#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "maa/batch.hpp"
#include "maa/config.hpp"
#include "maa/matrix.hpp"
#include "maa/ops.hpp"
#include "maa/param.hpp"
#include "maa/rng.hpp"

namespace maa {

struct ModelConfig {
    int dim = 0;
    int ffn_dim = 0;
    int heads = 0;
    int layers = 0;
    int classes = 0;
    AdapterMode adapter_mode = AdapterMode::independent;
    Activation activation = Activation::gelu;
    EncoderNorm encoder_norm = EncoderNorm::post;
    double dropout = 0.0;
    double ln_eps = 1e-5;
    std::vector<ModalityInfo> modalities;

    static ModelConfig from_train_config(const TrainConfig& cfg) {
        if (!cfg.data.resolved()) {
            throw ConfigError("model: train config has no resolved data schema");
        }
        ModelConfig mc;
        mc.dim = cfg.dim;
        mc.ffn_dim = cfg.ffn_dim;
        mc.heads = cfg.heads;
        mc.layers = cfg.layers;
        mc.classes = static_cast<int>(cfg.data.classes);
        mc.adapter_mode = cfg.adapter_mode;
        mc.activation = cfg.activation;
        mc.encoder_norm = cfg.encoder_norm;
        mc.dropout = cfg.dropout;
        mc.ln_eps = cfg.ln_eps;
        mc.modalities = cfg.data.modalities;
        return mc;
    }

    void validate() const {
        if (dim < 2) throw ConfigError("model: dim must be >= 2");
        if (heads < 1 || dim % heads != 0) throw ConfigError("model: dim must be divisible by heads");
        if (ffn_dim < 1) throw ConfigError("model: ffn_dim must be >= 1");
        if (layers < 0) throw ConfigError("model: layers must be >= 0");
        if (classes < 2) throw ConfigError("model: needs at least 2 classes");
        if (modalities.empty()) throw ConfigError("model: needs at least one modality");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
        for (std::size_t i = 0; i < modalities.size(); ++i) {
            if (modalities[i].dim < 2) {
                throw ConfigError("model: modality '" + modalities[i].name +
                                  "' has dim < 2 (adapter layer norm needs at least 2)");
            }
            for (std::size_t j = i + 1; j < modalities.size(); ++j) {
                if (modalities[i].id == modalities[j].id) {
                    throw ConfigError("model: duplicate modality id " +
                                      std::to_string(modalities[i].id));
                }
            }
        }
        if (adapter_mode != AdapterMode::independent) {
            for (const auto& m : modalities) {
                if (static_cast<int>(m.dim) != dim) {
                    throw ConfigError(std::string("model: adapter mode '") + to_string(adapter_mode) +
                                      "' requires every modality dim to equal the model dim; modality '" +
                                      m.name + "' has dim " + std::to_string(m.dim));
                }
            }
        }
    }
};

template <typename T>
struct AdapterBlock {
    ParamTensor<T> ln_gamma, ln_beta, fc_w, fc_b;
};

template <typename T>
struct EncoderLayerParams {
    ParamTensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    ParamTensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    ParamTensor<T> w1, b1, w2, b2;
};

template <typename T>
struct AdapterStageCache {
    std::vector<int> rows;    // batch rows this stage transformed
    Matrix<T> input;          // gathered input, n x d_in
    LayerNormCache<T> ln;
    Matrix<T> ln_out;         // n x d_in
    Matrix<T> pre_act;        // n x D
};

template <typename T>
struct EncoderLayerCache {
    Matrix<T> x_in;                       // R x D, masked rows zero
    LayerNormCache<T> pre_ln1;            // pre-norm mode only
    Matrix<T> ln1_in;                     // attention input (x_in or LN1(x_in))
    Matrix<T> q, k, v;                    // R x D
    std::vector<Matrix<T>> attn_raw;      // per (sample, head): S x S softmax output
    std::vector<DropoutMask<T>> attn_drop;
    std::vector<Matrix<T>> attn_used;     // post-dropout probabilities
    Matrix<T> ctx;                        // R x D
    Matrix<T> h1;                         // residual sum after attention
    LayerNormCache<T> ln1;                // post-norm mode only
    Matrix<T> y1;                         // FFN-side residual stream
    LayerNormCache<T> pre_ln2;            // pre-norm mode only
    Matrix<T> ln2_in;                     // FFN input (y1 or LN2(y1))
    Matrix<T> ffn_pre;                    // R x F
    Matrix<T> ffn_act;                    // R x F
    DropoutMask<T> ffn_drop;
    Matrix<T> ffn_used;                   // R x F
    Matrix<T> h2;                         // residual sum after FFN
    LayerNormCache<T> ln2;                // post-norm mode only
    Matrix<T> out;                        // R x D, masked rows zeroed
};

template <typename T>
struct ForwardTrace {
    std::vector<AdapterStageCache<T>> adapter_stages;
    Matrix<T> adapted;    // R x D
    Matrix<T> embedded;   // R x D (adapted + modality embedding)
    std::vector<EncoderLayerCache<T>> layers;
    Matrix<T> encoded;    // R x D
    Matrix<T> pooled;     // B x D
    Matrix<T> logits;     // B x C
};

template <typename T>
struct CeLossResult {
    acc_t<T> loss = 0;
    Matrix<T> dlogits;
    Matrix<T> probs;
};

// Mean cross entropy over the batch, computed via log-sum-exp.
// dlogits = (softmax - one_hot) / B.
template <typename T>
CeLossResult<T> ce_loss(const Matrix<T>& logits, std::span<const std::int32_t> labels) {
    const int n = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != n) throw ShapeError("ce_loss: label count mismatch");
    CeLossResult<T> res;
    res.probs = softmax_rows(logits);
    res.dlogits = Matrix<T>(n, c);
    acc_t<T> total = 0;
    for (int i = 0; i < n; ++i) {
        const std::int32_t y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) {
            throw ConfigError("ce_loss: label " + std::to_string(y) + " out of range for " +
                              std::to_string(c) + " classes");
        }
        const T* lr = logits.row(i);
        T mx = lr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
        acc_t<T> lse = 0;
        for (int j = 0; j < c; ++j) lse += std::exp(static_cast<acc_t<T>>(lr[j]) - mx);
        total += std::log(lse) + static_cast<acc_t<T>>(mx) - static_cast<acc_t<T>>(lr[y]);
        T* dr = res.dlogits.row(i);
        const T* pr = res.probs.row(i);
        for (int j = 0; j < c; ++j) dr[j] = pr[j] / static_cast<T>(n);
        dr[y] -= T(1) / static_cast<T>(n);
    }
    res.loss = total / n;
    ensure_finite_scalar(static_cast<double>(res.loss), "ce_loss");
    return res;
}

// The fusion network: per-modality adapters, modality embeddings, a
// position-free Transformer encoder, masked mean pooling and a linear
// classifier. Forward passes are const and write activations into an
// externally owned trace, so frozen models can run in parallel.
template <typename T>
class MaaModel {
public:
    MaaModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_params();
        init_params(init_seed);
    }

    MaaModel(const MaaModel&) = delete;
    MaaModel& operator=(const MaaModel&) = delete;

    const ModelConfig& config() const { return cfg_; }

    std::span<ParamTensor<T>* const> params() const { return registry_; }

    void zero_grads() {
        for (auto* p : registry_) p->zero_grad();
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto* p : registry_) n += static_cast<std::int64_t>(p->value.size());
        return n;
    }

    // ---- forward stages ----

    // Projects every real token to the model dimension through its
    // modality's (or the shared) LN -> FC -> Act pipeline. Masked slots
    // stay zero.
    Matrix<T> adapt(const Batch<T>& batch, ForwardTrace<T>& trace) const {
        const int r_total = batch.rows();
        Matrix<T> out(r_total, cfg_.dim);
        trace.adapter_stages.clear();

        if (cfg_.adapter_mode == AdapterMode::none) {
            if (batch.token_dim != cfg_.dim) {
                throw ConfigError("adapt: adapter mode 'none' requires token dim == model dim");
            }
            for (int r = 0; r < r_total; ++r) {
                if (!batch.mask[static_cast<std::size_t>(r)]) continue;
                check_modality(batch.modality_ids[static_cast<std::size_t>(r)]);
                std::copy(batch.tokens.row(r), batch.tokens.row(r) + cfg_.dim, out.row(r));
            }
            return out;
        }

        if (cfg_.adapter_mode == AdapterMode::independent) {
            for (std::size_t mi = 0; mi < cfg_.modalities.size(); ++mi) {
                AdapterStageCache<T> stage;
                stage.rows = rows_of_modality(batch, cfg_.modalities[mi].id);
                if (stage.rows.empty()) {
                    trace.adapter_stages.push_back(std::move(stage));
                    continue;
                }
                const int d_in = static_cast<int>(cfg_.modalities[mi].dim);
                stage.input = gather(batch.tokens, stage.rows, d_in);
                run_adapter_block(adapter_[mi], stage);
                scatter(stage_output(stage, adapter_[mi]), stage.rows, out);
                trace.adapter_stages.push_back(std::move(stage));
            }
            // Unknown modality ids are rejected even when all known ones matched.
            for (int r = 0; r < r_total; ++r) {
                if (batch.mask[static_cast<std::size_t>(r)]) {
                    check_modality(batch.modality_ids[static_cast<std::size_t>(r)]);
                }
            }
            return out;
        }

        // shared: all real tokens go through the same stack of blocks.
        std::vector<int> rows;
        rows.reserve(static_cast<std::size_t>(r_total));
        for (int r = 0; r < r_total; ++r) {
            if (!batch.mask[static_cast<std::size_t>(r)]) continue;
            check_modality(batch.modality_ids[static_cast<std::size_t>(r)]);
            rows.push_back(r);
        }
        Matrix<T> cur = gather(batch.tokens, rows, cfg_.dim);
        for (const auto& block : adapter_) {
            AdapterStageCache<T> stage;
            stage.rows = rows;
            stage.input = cur;
            run_adapter_block(block, stage);
            cur = stage_output(stage, block);
            trace.adapter_stages.push_back(std::move(stage));
        }
        scatter(cur, rows, out);
        return out;
    }

    // token += embedding_table[modality] for real tokens.
    Matrix<T> add_modality_embedding(const Batch<T>& batch, const Matrix<T>& adapted) const {
        Matrix<T> out = adapted;
        for (int r = 0; r < batch.rows(); ++r) {
            if (!batch.mask[static_cast<std::size_t>(r)]) continue;
            const int mi = check_modality(batch.modality_ids[static_cast<std::size_t>(r)]);
            const T* emb = modality_embedding_.value.row(mi);
            T* row = out.row(r);
            for (int j = 0; j < cfg_.dim; ++j) row[j] += emb[j];
        }
        return out;
    }

    // Runs the encoder stack. No positional encoding anywhere; padded key
    // positions are excluded with an additive -1e9 before the softmax and
    // padded query rows are re-zeroed after every layer.
    Matrix<T> encode(const Batch<T>& batch, const Matrix<T>& x0, ForwardTrace<T>& trace,
                     bool train, Rng* rng) const {
        trace.layers.clear();
        trace.layers.resize(static_cast<std::size_t>(cfg_.layers));
        Matrix<T> x = x0;
        for (int l = 0; l < cfg_.layers; ++l) {
            x = encode_layer(batch, x, layers_[static_cast<std::size_t>(l)],
                             trace.layers[static_cast<std::size_t>(l)], train, rng);
            if (!x.all_finite()) {
                throw NumericError("non-finite values after op: encoder layer " + std::to_string(l));
            }
        }
        return x;
    }

    // Masked mean pool per sample followed by the linear classifier.
    Matrix<T> pool_and_classify(const Batch<T>& batch, const Matrix<T>& encoded,
                                ForwardTrace<T>& trace) const {
        trace.pooled = Matrix<T>(batch.batch_size, cfg_.dim);
        for (int b = 0; b < batch.batch_size; ++b) {
            const Matrix<T> z = rows_slice(encoded, batch.row(b, 0), batch.row(b, 0) + batch.seq_len);
            const Matrix<T> pooled = masked_mean_pool(z, batch.sample_mask(b));
            std::copy(pooled.row(0), pooled.row(0) + cfg_.dim, trace.pooled.row(b));
        }
        Matrix<T> logits = matmul(trace.pooled, classifier_w_.value);
        add_row_broadcast(logits, classifier_b_.value);
        return logits;
    }

    const Matrix<T>& forward(const Batch<T>& batch, ForwardTrace<T>& trace,
                             bool train = false, Rng* rng = nullptr) const {
        if (train && cfg_.dropout > 0.0 && rng == nullptr) {
            throw ConfigError("forward: training with dropout needs an rng");
        }
        trace.adapted = adapt(batch, trace);
        ensure_finite(trace.adapted, "adapter");
        trace.embedded = add_modality_embedding(batch, trace.adapted);
        trace.encoded = encode(batch, trace.embedded, trace, train, rng);
        trace.logits = pool_and_classify(batch, trace.encoded, trace);
        ensure_finite(trace.logits, "classifier");
        return trace.logits;
    }

    // Full training step math: forward, loss, and gradient accumulation
    // into every registered parameter.
    double forward_backward(const Batch<T>& batch, ForwardTrace<T>& trace,
                            bool train = true, Rng* rng = nullptr) {
        forward(batch, trace, train, rng);
        auto loss = ce_loss<T>(trace.logits,
                               std::span<const std::int32_t>(batch.labels));
        backward(batch, trace, loss.dlogits);
        return loss.loss;
    }

    void backward(const Batch<T>& batch, ForwardTrace<T>& trace, const Matrix<T>& dlogits) {
        // classifier
        Matrix<T> dpooled(batch.batch_size, cfg_.dim);
        matmul_backward(trace.pooled, classifier_w_.value, dlogits,
                        static_cast<Matrix<T>*>(nullptr), &classifier_w_.grad);
        matmul_nt_into(dlogits, classifier_w_.value, dpooled);
        col_sums_acc(dlogits, classifier_b_.grad);

        // pooling
        Matrix<T> dx(batch.rows(), cfg_.dim);
        for (int b = 0; b < batch.batch_size; ++b) {
            const Matrix<T> drow = rows_slice(dpooled, b, b + 1);
            const Matrix<T> dz = masked_mean_pool_backward(drow, batch.sample_mask(b));
            for (int s = 0; s < batch.seq_len; ++s) {
                const int r = batch.row(b, s);
                std::copy(dz.row(s), dz.row(s) + cfg_.dim, dx.row(r));
            }
        }

        // encoder, reversed
        for (int l = cfg_.layers - 1; l >= 0; --l) {
            dx = encode_layer_backward(batch, layers_[static_cast<std::size_t>(l)],
                                       trace.layers[static_cast<std::size_t>(l)], dx);
        }

        // modality embedding
        for (int r = 0; r < batch.rows(); ++r) {
            if (!batch.mask[static_cast<std::size_t>(r)]) continue;
            const int mi = check_modality(batch.modality_ids[static_cast<std::size_t>(r)]);
            T* gemb = modality_embedding_.grad.row(mi);
            const T* drow = dx.row(r);
            for (int j = 0; j < cfg_.dim; ++j) gemb[j] += drow[j];
        }

        adapt_backward(trace, dx);
    }

    // ---- parameter access for checkpoints/tests ----

    std::span<const ModalityInfo> modalities() const { return cfg_.modalities; }

private:
    void build_params() {
        const auto reg = [this](ParamTensor<T>& p) { registry_.push_back(&p); };
        if (cfg_.adapter_mode == AdapterMode::independent) {
            adapter_.resize(cfg_.modalities.size());
            for (std::size_t mi = 0; mi < cfg_.modalities.size(); ++mi) {
                const int d_in = static_cast<int>(cfg_.modalities[mi].dim);
                const std::string base = "adapter." + cfg_.modalities[mi].name;
                adapter_[mi].ln_gamma = ParamTensor<T>(1, d_in, base + ".ln.gamma", false);
                adapter_[mi].ln_beta = ParamTensor<T>(1, d_in, base + ".ln.beta", false);
                adapter_[mi].fc_w = ParamTensor<T>(d_in, cfg_.dim, base + ".fc.weight", true);
                adapter_[mi].fc_b = ParamTensor<T>(1, cfg_.dim, base + ".fc.bias", false);
            }
        } else if (cfg_.adapter_mode == AdapterMode::shared) {
            adapter_.resize(cfg_.modalities.size());
            for (std::size_t bi = 0; bi < adapter_.size(); ++bi) {
                const std::string base = "adapter.block" + std::to_string(bi);
                adapter_[bi].ln_gamma = ParamTensor<T>(1, cfg_.dim, base + ".ln.gamma", false);
                adapter_[bi].ln_beta = ParamTensor<T>(1, cfg_.dim, base + ".ln.beta", false);
                adapter_[bi].fc_w = ParamTensor<T>(cfg_.dim, cfg_.dim, base + ".fc.weight", true);
                adapter_[bi].fc_b = ParamTensor<T>(1, cfg_.dim, base + ".fc.bias", false);
            }
        }
        for (auto& block : adapter_) {
            reg(block.ln_gamma);
            reg(block.ln_beta);
            reg(block.fc_w);
            reg(block.fc_b);
        }

        modality_embedding_ = ParamTensor<T>(static_cast<int>(cfg_.modalities.size()), cfg_.dim,
                                             "modality_embedding", false);
        reg(modality_embedding_);

        layers_.resize(static_cast<std::size_t>(cfg_.layers));
        for (int l = 0; l < cfg_.layers; ++l) {
            auto& lp = layers_[static_cast<std::size_t>(l)];
            const std::string base = "encoder." + std::to_string(l);
            const int d = cfg_.dim, f = cfg_.ffn_dim;
            lp.wq = ParamTensor<T>(d, d, base + ".attn.wq", true);
            lp.bq = ParamTensor<T>(1, d, base + ".attn.bq", false);
            lp.wk = ParamTensor<T>(d, d, base + ".attn.wk", true);
            lp.bk = ParamTensor<T>(1, d, base + ".attn.bk", false);
            lp.wv = ParamTensor<T>(d, d, base + ".attn.wv", true);
            lp.bv = ParamTensor<T>(1, d, base + ".attn.bv", false);
            lp.wo = ParamTensor<T>(d, d, base + ".attn.wo", true);
            lp.bo = ParamTensor<T>(1, d, base + ".attn.bo", false);
            lp.ln1_gamma = ParamTensor<T>(1, d, base + ".ln1.gamma", false);
            lp.ln1_beta = ParamTensor<T>(1, d, base + ".ln1.beta", false);
            lp.w1 = ParamTensor<T>(d, f, base + ".ffn.w1", true);
            lp.b1 = ParamTensor<T>(1, f, base + ".ffn.b1", false);
            lp.w2 = ParamTensor<T>(f, d, base + ".ffn.w2", true);
            lp.b2 = ParamTensor<T>(1, d, base + ".ffn.b2", false);
            lp.ln2_gamma = ParamTensor<T>(1, d, base + ".ln2.gamma", false);
            lp.ln2_beta = ParamTensor<T>(1, d, base + ".ln2.beta", false);
            reg(lp.wq); reg(lp.bq); reg(lp.wk); reg(lp.bk);
            reg(lp.wv); reg(lp.bv); reg(lp.wo); reg(lp.bo);
            reg(lp.ln1_gamma); reg(lp.ln1_beta);
            reg(lp.w1); reg(lp.b1); reg(lp.w2); reg(lp.b2);
            reg(lp.ln2_gamma); reg(lp.ln2_beta);
        }

        classifier_w_ = ParamTensor<T>(cfg_.dim, cfg_.classes, "classifier.weight", true);
        classifier_b_ = ParamTensor<T>(1, cfg_.classes, "classifier.bias", false);
        reg(classifier_w_);
        reg(classifier_b_);

        modality_lookup_.fill(-1);
        for (std::size_t mi = 0; mi < cfg_.modalities.size(); ++mi) {
            modality_lookup_[cfg_.modalities[mi].id] = static_cast<int>(mi);
        }
    }

    // Truncated normal (std 0.02, cut at 2 std) for weights and the
    // modality embedding; biases zero; LayerNorm gamma 1, beta 0.
    void init_params(std::uint64_t seed) {
        Rng rng(derive_seed(seed, "init"));
        for (auto* p : registry_) {
            const bool is_ln_gamma = p->name.ends_with("ln.gamma") || p->name.ends_with("ln1.gamma") ||
                                     p->name.ends_with("ln2.gamma");
            const bool is_ln_beta = p->name.ends_with("ln.beta") || p->name.ends_with("ln1.beta") ||
                                    p->name.ends_with("ln2.beta");
            const bool is_bias = p->name.ends_with(".bias") || p->name.ends_with(".bq") ||
                                 p->name.ends_with(".bk") || p->name.ends_with(".bv") ||
                                 p->name.ends_with(".bo") || p->name.ends_with(".b1") ||
                                 p->name.ends_with(".b2");
            if (is_ln_gamma) {
                p->value.fill(T(1));
            } else if (is_ln_beta || is_bias) {
                p->value.zero();
            } else {
                for (T& v : p->value.raw()) v = static_cast<T>(rng.truncated_normal(0.02));
            }
        }
    }

    int check_modality(std::uint8_t id) const {
        const int mi = modality_lookup_[id];
        if (mi < 0) {
            throw ConfigError("model: unknown modality id " + std::to_string(id) +
                              " in batch (not part of the model's modality table)");
        }
        return mi;
    }

    static std::vector<int> rows_of_modality(const Batch<T>& batch, std::uint8_t id) {
        std::vector<int> rows;
        for (int r = 0; r < batch.rows(); ++r) {
            if (batch.mask[static_cast<std::size_t>(r)] &&
                batch.modality_ids[static_cast<std::size_t>(r)] == id) {
                rows.push_back(r);
            }
        }
        return rows;
    }

    static Matrix<T> gather(const Matrix<T>& src, const std::vector<int>& rows, int cols) {
        Matrix<T> out(static_cast<int>(rows.size()), cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const T* srow = src.row(rows[i]);
            std::copy(srow, srow + cols, out.row(static_cast<int>(i)));
        }
        return out;
    }

    static void scatter(const Matrix<T>& src, const std::vector<int>& rows, Matrix<T>& dst) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const T* srow = src.row(static_cast<int>(i));
            std::copy(srow, srow + src.cols(), dst.row(rows[i]));
        }
    }

    void run_adapter_block(const AdapterBlock<T>& block, AdapterStageCache<T>& stage) const {
        stage.ln_out = layer_norm_forward(stage.input, block.ln_gamma.value, block.ln_beta.value,
                                          static_cast<T>(cfg_.ln_eps), &stage.ln);
        stage.pre_act = matmul(stage.ln_out, block.fc_w.value);
        add_row_broadcast(stage.pre_act, block.fc_b.value);
    }

    Matrix<T> stage_output(const AdapterStageCache<T>& stage, const AdapterBlock<T>&) const {
        return activation_forward(stage.pre_act, cfg_.activation);
    }

    void adapter_block_backward(AdapterBlock<T>& block, const AdapterStageCache<T>& stage,
                                const Matrix<T>& d_out, Matrix<T>* d_input) const {
        const Matrix<T> d_pre = activation_backward(d_out, stage.pre_act, cfg_.activation);
        matmul_backward(stage.ln_out, block.fc_w.value, d_pre, static_cast<Matrix<T>*>(nullptr), &block.fc_w.grad);
        col_sums_acc(d_pre, block.fc_b.grad);
        Matrix<T> d_ln(stage.ln_out.rows(), stage.ln_out.cols());
        matmul_nt_into(d_pre, block.fc_w.value, d_ln);
        Matrix<T> d_in = layer_norm_backward(d_ln, stage.ln, block.ln_gamma.value,
                                             &block.ln_gamma.grad, &block.ln_beta.grad);
        if (d_input) *d_input = std::move(d_in);
    }

    void adapt_backward(const ForwardTrace<T>& trace, const Matrix<T>& d_adapted) {
        if (cfg_.adapter_mode == AdapterMode::none) return;
        if (cfg_.adapter_mode == AdapterMode::independent) {
            for (std::size_t mi = 0; mi < adapter_.size(); ++mi) {
                const auto& stage = trace.adapter_stages[mi];
                if (stage.rows.empty()) continue;
                const Matrix<T> d_out = gather(d_adapted, stage.rows, cfg_.dim);
                adapter_block_backward(adapter_[mi], stage, d_out, nullptr);
            }
            return;
        }
        // shared stack, reversed
        const auto& stages = trace.adapter_stages;
        if (stages.empty()) return;
        Matrix<T> d_cur = gather(d_adapted, stages.back().rows, cfg_.dim);
        for (std::size_t bi = stages.size(); bi-- > 0;) {
            Matrix<T> d_in;
            adapter_block_backward(adapter_[bi], stages[bi], d_cur,
                                   bi > 0 ? &d_in : nullptr);
            if (bi > 0) d_cur = std::move(d_in);
        }
    }

    Matrix<T> encode_layer(const Batch<T>& batch, const Matrix<T>& x, const EncoderLayerParams<T>& lp,
                           EncoderLayerCache<T>& cache, bool train, Rng* rng) const {
        const int r_total = batch.rows();
        const int d = cfg_.dim;
        const bool pre = cfg_.encoder_norm == EncoderNorm::pre;
        cache.x_in = x;

        if (pre) {
            cache.ln1_in = layer_norm_forward(x, lp.ln1_gamma.value, lp.ln1_beta.value,
                                              static_cast<T>(cfg_.ln_eps), &cache.pre_ln1);
        } else {
            cache.ln1_in = x;
        }

        cache.q = matmul(cache.ln1_in, lp.wq.value);
        add_row_broadcast(cache.q, lp.bq.value);
        cache.k = matmul(cache.ln1_in, lp.wk.value);
        add_row_broadcast(cache.k, lp.bk.value);
        cache.v = matmul(cache.ln1_in, lp.wv.value);
        add_row_broadcast(cache.v, lp.bv.value);

        attention(batch, cache, train, rng);

        cache.h1 = matmul(cache.ctx, lp.wo.value);
        add_row_broadcast(cache.h1, lp.bo.value);  // h1 currently = attn projection
        add_inplace(cache.h1, x);                  // + residual

        if (pre) {
            cache.y1 = cache.h1;
            cache.ln2_in = layer_norm_forward(cache.y1, lp.ln2_gamma.value, lp.ln2_beta.value,
                                              static_cast<T>(cfg_.ln_eps), &cache.pre_ln2);
        } else {
            cache.y1 = layer_norm_forward(cache.h1, lp.ln1_gamma.value, lp.ln1_beta.value,
                                          static_cast<T>(cfg_.ln_eps), &cache.ln1);
            cache.ln2_in = cache.y1;
        }

        cache.ffn_pre = matmul(cache.ln2_in, lp.w1.value);
        add_row_broadcast(cache.ffn_pre, lp.b1.value);
        cache.ffn_act = activation_forward(cache.ffn_pre, cfg_.activation);
        if (train && cfg_.dropout > 0.0) {
            cache.ffn_used = dropout_forward(cache.ffn_act, cfg_.dropout, *rng, &cache.ffn_drop);
        } else {
            cache.ffn_used = cache.ffn_act;
            cache.ffn_drop.active = false;
        }
        cache.h2 = matmul(cache.ffn_used, lp.w2.value);
        add_row_broadcast(cache.h2, lp.b2.value);
        add_inplace(cache.h2, cache.y1);

        if (pre) {
            cache.out = cache.h2;
        } else {
            cache.out = layer_norm_forward(cache.h2, lp.ln2_gamma.value, lp.ln2_beta.value,
                                           static_cast<T>(cfg_.ln_eps), &cache.ln2);
        }

        // Padding must never leak into pooling or the next layer.
        for (int r = 0; r < r_total; ++r) {
            if (!batch.mask[static_cast<std::size_t>(r)]) {
                std::fill(cache.out.row(r), cache.out.row(r) + d, T(0));
            }
        }
        return cache.out;
    }

    void attention(const Batch<T>& batch, EncoderLayerCache<T>& cache, bool train, Rng* rng) const {
        const int s = batch.seq_len;
        const int dh = cfg_.dim / cfg_.heads;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        const int n_mats = batch.batch_size * cfg_.heads;
        cache.attn_raw.assign(static_cast<std::size_t>(n_mats), Matrix<T>());
        cache.attn_used.assign(static_cast<std::size_t>(n_mats), Matrix<T>());
        cache.attn_drop.assign(static_cast<std::size_t>(n_mats), DropoutMask<T>());
        cache.ctx = Matrix<T>(batch.rows(), cfg_.dim);

        std::vector<acc_t<T>> acc(static_cast<std::size_t>(dh));
        for (int b = 0; b < batch.batch_size; ++b) {
            for (int h = 0; h < cfg_.heads; ++h) {
                const int hc = h * dh;
                const std::size_t mat_idx = static_cast<std::size_t>(b * cfg_.heads + h);
                Matrix<T> scores(s, s);
                for (int i = 0; i < s; ++i) {
                    const T* qi = cache.q.row(batch.row(b, i)) + hc;
                    T* srow = scores.row(i);
                    for (int j = 0; j < s; ++j) {
                        if (!batch.mask[static_cast<std::size_t>(batch.row(b, j))]) {
                            srow[j] = T(-1e9);
                            continue;
                        }
                        const T* kj = cache.k.row(batch.row(b, j)) + hc;
                        T dot = T(0);
                        for (int t = 0; t < dh; ++t) dot += qi[t] * kj[t];
                        srow[j] = dot * scale;
                    }
                }
                cache.attn_raw[mat_idx] = softmax_rows(scores);
                if (train && cfg_.dropout > 0.0) {
                    cache.attn_used[mat_idx] = dropout_forward(cache.attn_raw[mat_idx], cfg_.dropout,
                                                               *rng, &cache.attn_drop[mat_idx]);
                } else {
                    cache.attn_used[mat_idx] = cache.attn_raw[mat_idx];
                }
                const Matrix<T>& p = cache.attn_used[mat_idx];
                for (int i = 0; i < s; ++i) {
                    std::fill(acc.begin(), acc.end(), acc_t<T>(0));
                    const T* prow = p.row(i);
                    for (int j = 0; j < s; ++j) {
                        const T pij = prow[j];
                        if (pij == T(0)) continue;
                        const T* vj = cache.v.row(batch.row(b, j)) + hc;
                        for (int t = 0; t < dh; ++t) acc[static_cast<std::size_t>(t)] += static_cast<acc_t<T>>(pij) * vj[t];
                    }
                    T* crow = cache.ctx.row(batch.row(b, i)) + hc;
                    for (int t = 0; t < dh; ++t) crow[t] = static_cast<T>(acc[static_cast<std::size_t>(t)]);
                }
            }
        }
    }

    Matrix<T> encode_layer_backward(const Batch<T>& batch, EncoderLayerParams<T>& lp,
                                    const EncoderLayerCache<T>& cache, Matrix<T>& d_out_in) {
        const int d = cfg_.dim;
        const bool pre = cfg_.encoder_norm == EncoderNorm::pre;

        // Mirror the forward zeroing of padded rows.
        for (int r = 0; r < batch.rows(); ++r) {
            if (!batch.mask[static_cast<std::size_t>(r)]) {
                std::fill(d_out_in.row(r), d_out_in.row(r) + d, T(0));
            }
        }

        Matrix<T> dh2;
        if (pre) {
            dh2 = d_out_in;
        } else {
            dh2 = layer_norm_backward(d_out_in, cache.ln2, lp.ln2_gamma.value,
                                      &lp.ln2_gamma.grad, &lp.ln2_beta.grad);
        }

        // FFN branch
        Matrix<T> d_ffn_used(cache.ffn_used.rows(), cache.ffn_used.cols());
        matmul_nt_into(dh2, lp.w2.value, d_ffn_used);
        matmul_backward(cache.ffn_used, lp.w2.value, dh2, static_cast<Matrix<T>*>(nullptr), &lp.w2.grad);
        col_sums_acc(dh2, lp.b2.grad);
        const Matrix<T> d_ffn_act = dropout_backward(d_ffn_used, cache.ffn_drop);
        const Matrix<T> d_ffn_pre = activation_backward(d_ffn_act, cache.ffn_pre, cfg_.activation);
        Matrix<T> d_ln2_in(cache.ln2_in.rows(), cache.ln2_in.cols());
        matmul_nt_into(d_ffn_pre, lp.w1.value, d_ln2_in);
        matmul_backward(cache.ln2_in, lp.w1.value, d_ffn_pre, static_cast<Matrix<T>*>(nullptr), &lp.w1.grad);
        col_sums_acc(d_ffn_pre, lp.b1.grad);

        // Gradient on y1: residual path + FFN input path.
        Matrix<T> dy1 = dh2;
        if (pre) {
            add_inplace(dy1, layer_norm_backward(d_ln2_in, cache.pre_ln2, lp.ln2_gamma.value,
                                                 &lp.ln2_gamma.grad, &lp.ln2_beta.grad));
        } else {
            add_inplace(dy1, d_ln2_in);
        }

        Matrix<T> dh1;
        if (pre) {
            dh1 = dy1;
        } else {
            dh1 = layer_norm_backward(dy1, cache.ln1, lp.ln1_gamma.value,
                                      &lp.ln1_gamma.grad, &lp.ln1_beta.grad);
        }

        // Attention output projection.
        Matrix<T> dctx(cache.ctx.rows(), cache.ctx.cols());
        matmul_nt_into(dh1, lp.wo.value, dctx);
        matmul_backward(cache.ctx, lp.wo.value, dh1, static_cast<Matrix<T>*>(nullptr), &lp.wo.grad);
        col_sums_acc(dh1, lp.bo.grad);

        Matrix<T> dq(batch.rows(), d), dk(batch.rows(), d), dv(batch.rows(), d);
        attention_backward(batch, cache, dctx, dq, dk, dv);

        // Projections back to the attention input.
        Matrix<T> d_ln1_in(batch.rows(), d);
        matmul_nt_into(dq, lp.wq.value, d_ln1_in);
        matmul_nt_into(dk, lp.wk.value, d_ln1_in, /*accumulate=*/true);
        matmul_nt_into(dv, lp.wv.value, d_ln1_in, /*accumulate=*/true);
        matmul_backward(cache.ln1_in, lp.wq.value, dq, static_cast<Matrix<T>*>(nullptr), &lp.wq.grad);
        matmul_backward(cache.ln1_in, lp.wk.value, dk, static_cast<Matrix<T>*>(nullptr), &lp.wk.grad);
        matmul_backward(cache.ln1_in, lp.wv.value, dv, static_cast<Matrix<T>*>(nullptr), &lp.wv.grad);
        col_sums_acc(dq, lp.bq.grad);
        col_sums_acc(dk, lp.bk.grad);
        col_sums_acc(dv, lp.bv.grad);

        // Gradient on x: residual path + (possibly LN-wrapped) attention input path.
        Matrix<T> dx = dh1;
        if (pre) {
            add_inplace(dx, layer_norm_backward(d_ln1_in, cache.pre_ln1, lp.ln1_gamma.value,
                                                &lp.ln1_gamma.grad, &lp.ln1_beta.grad));
        } else {
            add_inplace(dx, d_ln1_in);
        }
        return dx;
    }

    void attention_backward(const Batch<T>& batch, const EncoderLayerCache<T>& cache,
                            const Matrix<T>& dctx, Matrix<T>& dq, Matrix<T>& dk,
                            Matrix<T>& dv) const {
        const int s = batch.seq_len;
        const int dh = cfg_.dim / cfg_.heads;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (int b = 0; b < batch.batch_size; ++b) {
            for (int h = 0; h < cfg_.heads; ++h) {
                const int hc = h * dh;
                const std::size_t mat_idx = static_cast<std::size_t>(b * cfg_.heads + h);
                const Matrix<T>& p_used = cache.attn_used[mat_idx];
                const Matrix<T>& p_raw = cache.attn_raw[mat_idx];

                // dP_used[i,j] = dctx_i . v_j ; dV_j += sum_i P_used[i,j] * dctx_i
                Matrix<T> dp(s, s);
                for (int i = 0; i < s; ++i) {
                    const T* dci = dctx.row(batch.row(b, i)) + hc;
                    T* dpr = dp.row(i);
                    const T* pur = p_used.row(i);
                    for (int j = 0; j < s; ++j) {
                        const int rj = batch.row(b, j);
                        const T* vj = cache.v.row(rj) + hc;
                        T dot = T(0);
                        for (int t = 0; t < dh; ++t) dot += dci[t] * vj[t];
                        dpr[j] = dot;
                        if (pur[j] != T(0)) {
                            T* dvj = dv.row(rj) + hc;
                            for (int t = 0; t < dh; ++t) dvj[t] += pur[j] * dci[t];
                        }
                    }
                }
                const Matrix<T> dp_raw = cache.attn_drop[mat_idx].active
                                             ? dropout_backward(dp, cache.attn_drop[mat_idx])
                                             : dp;
                Matrix<T> dscores = softmax_rows_backward(dp_raw, p_raw);
                // The additive -1e9 padding mask is constant, so masked
                // columns carry zero gradient through p_raw ~ 0 already.
                for (int i = 0; i < s; ++i) {
                    const T* dsr = dscores.row(i);
                    T* dqi = dq.row(batch.row(b, i)) + hc;
                    const T* qi = cache.q.row(batch.row(b, i)) + hc;
                    for (int j = 0; j < s; ++j) {
                        const T g = dsr[j] * scale;
                        if (g == T(0)) continue;
                        const int rj = batch.row(b, j);
                        const T* kj = cache.k.row(rj) + hc;
                        T* dkj = dk.row(rj) + hc;
                        for (int t = 0; t < dh; ++t) {
                            dqi[t] += g * kj[t];
                            dkj[t] += g * qi[t];
                        }
                    }
                }
            }
        }
    }

    ModelConfig cfg_;
    std::vector<AdapterBlock<T>> adapter_;
    ParamTensor<T> modality_embedding_;
    std::vector<EncoderLayerParams<T>> layers_;
    ParamTensor<T> classifier_w_;
    ParamTensor<T> classifier_b_;
    std::vector<ParamTensor<T>*> registry_;
    std::array<int, 256> modality_lookup_{};
};

}  // namespace maa
