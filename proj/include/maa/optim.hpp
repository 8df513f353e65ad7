#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "maa/matrix.hpp"
#include "maa/param.hpp"

namespace maa {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
// Decay is applied only to parameters flagged with `decay` (weight
// matrices; never LayerNorm scales, biases or modality embeddings).
template <typename T>
class AdamW {
public:
    AdamW(std::span<ParamTensor<T>* const> params, AdamWConfig cfg) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto* p : params) {
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    void step(std::span<ParamTensor<T>* const> params, double lr) {
        if (lr < 0.0) throw ConfigError("adamw: negative learning rate");
        if (params.size() != m_.size()) throw ShapeError("adamw: parameter set changed");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            ParamTensor<T>& p = *params[i];
            const double wd = p.decay ? cfg_.weight_decay : 0.0;
            auto& mv = m_[i].raw();
            auto& vv = v_[i].raw();
            auto& theta = p.value.raw();
            const auto& g = p.grad.raw();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const T gj = g[j];
                mv[j] = static_cast<T>(cfg_.beta1 * mv[j] + (1.0 - cfg_.beta1) * gj);
                vv[j] = static_cast<T>(cfg_.beta2 * vv[j] + (1.0 - cfg_.beta2) * gj * gj);
                const double mhat = mv[j] / bc1;
                const double vhat = vv[j] / bc2;
                theta[j] = static_cast<T>(theta[j] -
                                          lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * theta[j]));
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }

    std::size_t slot_count() const { return m_.size(); }
    Matrix<T>& first_moment(std::size_t i) { return m_[i]; }
    Matrix<T>& second_moment(std::size_t i) { return v_[i]; }
    const Matrix<T>& first_moment(std::size_t i) const { return m_[i]; }
    const Matrix<T>& second_moment(std::size_t i) const { return v_[i]; }

    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<Matrix<T>> m_, v_;
    std::int64_t t_ = 0;
};

struct ScheduleConfig {
    double base_lr = 3e-5;
    std::int64_t warmup_steps = 0;
    std::int64_t t0 = 1;       // first cosine period, in steps
    std::int64_t t_mult = 1;   // period multiplier at each restart
    double eta_min = 0.0;
};

// Linear warmup to base_lr, then cosine annealing with warm restarts:
// within a cycle of length T_i, lr = eta_min + (base - eta_min) *
// (1 + cos(pi * t_cur / T_i)) / 2; each restart snaps back to base_lr.
inline double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
    if (step < 0) throw ConfigError("lr_at: negative step");
    if (cfg.t0 < 1 || cfg.t_mult < 1) throw ConfigError("lr_at: t0 and t_mult must be >= 1");
    if (step < cfg.warmup_steps) {
        return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    }
    std::int64_t s = step - cfg.warmup_steps;
    std::int64_t period = cfg.t0;
    while (s >= period) {
        s -= period;
        if (period > (std::int64_t{1} << 62) / cfg.t_mult) {
            throw ConfigError("lr_at: cosine period overflow");
        }
        period *= cfg.t_mult;
    }
    const double progress = static_cast<double>(s) / static_cast<double>(period);
    return cfg.eta_min + (cfg.base_lr - cfg.eta_min) * (1.0 + std::cos(3.141592653589793 * progress)) / 2.0;
}

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm. max_norm <= 0 disables clipping.
template <typename T>
double clip_global_norm(std::span<ParamTensor<T>* const> params, double max_norm) {
    double sq = 0.0;
    for (const auto* p : params) {
        for (const T g : p->grad.raw()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite value after op: gradient norm");
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto* p : params) {
            for (T& g : p->grad.raw()) g *= scale;
        }
    }
    return norm;
}

}  // namespace maa
