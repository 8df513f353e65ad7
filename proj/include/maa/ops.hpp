#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maa/matrix.hpp"
#include "maa/param.hpp"
#include "maa/rng.hpp"

namespace maa {

namespace debug {
// Fault-injection hook for the gradcheck CLI: flips the sign of the
// LayerNorm gamma gradient so a broken backward pass is detectable.
inline bool break_layer_norm_backward = false;
}  // namespace debug

enum class Activation { gelu, relu };

inline Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "relu") return Activation::relu;
    throw ConfigError("activation: unknown kind '" + s + "'");
}

inline const char* to_string(Activation a) {
    return a == Activation::gelu ? "gelu" : "relu";
}

namespace detail {
// tanh-approximation GELU.
template <typename T>
inline T gelu_value(T x) {
    const T c = T(0.044715);
    const T s = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = s * (x + c * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_derivative(T x) {
    const T c = T(0.044715);
    const T s = T(0.7978845608028654);
    const T u = s * (x + c * x * x * x);
    const T t = std::tanh(u);
    const T sech2 = T(1) - t * t;
    const T du = s * (T(1) + T(3) * c * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * sech2 * du;
}
}  // namespace detail

template <typename T>
Matrix<T> activation_forward(const Matrix<T>& x, Activation kind) {
    Matrix<T> out(x.rows(), x.cols());
    const auto& in = x.raw();
    auto& o = out.raw();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = detail::gelu_value(in[i]);
    }
    return out;
}

// dX = dY * act'(X); X is the pre-activation input.
template <typename T>
Matrix<T> activation_backward(const Matrix<T>& dy, const Matrix<T>& x, Activation kind) {
    if (!dy.same_shape(x)) throw ShapeError("activation_backward: shape mismatch");
    Matrix<T> dx(x.rows(), x.cols());
    const auto& g = dy.raw();
    const auto& in = x.raw();
    auto& o = dx.raw();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? g[i] : T(0);
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) o[i] = g[i] * detail::gelu_derivative(in[i]);
    }
    return dx;
}

template <typename T>
struct LayerNormCache {
    Matrix<T> xhat;              // normalized input, pre gamma/beta
    std::vector<T> inv_std;      // per row
};

// Row-wise layer norm with biased variance: y = gamma * (x - mu) / sqrt(var + eps) + beta.
template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                             T eps, LayerNormCache<T>* cache) {
    const int n = x.rows(), d = x.cols();
    if (d < 2) throw ShapeError("layer_norm: needs at least 2 columns per row");
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
    if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
        throw ShapeError("layer_norm: gamma/beta must be 1 x d");
    }
    Matrix<T> out(n, d);
    if (cache) {
        cache->xhat = Matrix<T>(n, d);
        cache->inv_std.assign(static_cast<std::size_t>(n), T(0));
    }
    const T* g = gamma.row(0);
    const T* b = beta.row(0);
    for (int i = 0; i < n; ++i) {
        const T* xr = x.row(i);
        acc_t<T> mean = 0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        acc_t<T> var = 0;
        for (int j = 0; j < d; ++j) {
            const acc_t<T> c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        const T inv = T(1) / std::sqrt(static_cast<T>(var) + eps);
        T* orow = out.row(i);
        for (int j = 0; j < d; ++j) {
            const T xh = (xr[j] - static_cast<T>(mean)) * inv;
            orow[j] = g[j] * xh + b[j];
            if (cache) cache->xhat(i, j) = xh;
        }
        if (cache) cache->inv_std[static_cast<std::size_t>(i)] = inv;
    }
    return out;
}

// Analytic layer-norm backward. Accumulates into dGamma/dBeta; returns dX.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& cache,
                              const Matrix<T>& gamma, Matrix<T>* dgamma, Matrix<T>* dbeta) {
    const int n = dy.rows(), d = dy.cols();
    if (!dy.same_shape(cache.xhat)) throw ShapeError("layer_norm_backward: shape mismatch");
    Matrix<T> dx(n, d);
    const T* g = gamma.row(0);
    const T gamma_sign = debug::break_layer_norm_backward ? T(-1) : T(1);
    for (int i = 0; i < n; ++i) {
        const T* dyr = dy.row(i);
        const T* xh = cache.xhat.row(i);
        acc_t<T> sum_dxhat = 0;
        acc_t<T> sum_dxhat_xhat = 0;
        for (int j = 0; j < d; ++j) {
            const acc_t<T> dxh = static_cast<acc_t<T>>(dyr[j]) * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        const T inv = cache.inv_std[static_cast<std::size_t>(i)];
        const T m1 = static_cast<T>(sum_dxhat / d);
        const T m2 = static_cast<T>(sum_dxhat_xhat / d);
        T* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) {
            const T dxh = dyr[j] * g[j];
            dxr[j] = (dxh - m1 - xh[j] * m2) * inv;
            if (dgamma) (*dgamma)(0, j) += gamma_sign * dyr[j] * xh[j];
            if (dbeta) (*dbeta)(0, j) += dyr[j];
        }
    }
    return dx;
}

// Row-wise softmax with max subtraction; denominator accumulated in double
// so results are insensitive to row/key permutations well below tolerance.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
    const int n = x.rows(), d = x.cols();
    Matrix<T> out(n, d);
    for (int i = 0; i < n; ++i) {
        const T* xr = x.row(i);
        T mx = xr[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        acc_t<T> denom = 0;
        T* orow = out.row(i);
        for (int j = 0; j < d; ++j) {
            const T e = std::exp(xr[j] - mx);
            orow[j] = e;
            denom += e;
        }
        const T inv = static_cast<T>(acc_t<T>(1) / denom);
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
    return out;
}

// dX[i,:] = y * (dy - dot(dy, y)) row-wise, with y the softmax output.
template <typename T>
Matrix<T> softmax_rows_backward(const Matrix<T>& dy, const Matrix<T>& y) {
    if (!dy.same_shape(y)) throw ShapeError("softmax_backward: shape mismatch");
    const int n = y.rows(), d = y.cols();
    Matrix<T> dx(n, d);
    for (int i = 0; i < n; ++i) {
        const T* dyr = dy.row(i);
        const T* yr = y.row(i);
        acc_t<T> dot = 0;
        for (int j = 0; j < d; ++j) dot += static_cast<acc_t<T>>(dyr[j]) * yr[j];
        T* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) dxr[j] = yr[j] * (dyr[j] - static_cast<T>(dot));
    }
    return dx;
}

// Mean over rows with mask bit 1. A sample must contain at least one real token.
template <typename T>
Matrix<T> masked_mean_pool(const Matrix<T>& z, std::span<const std::uint8_t> mask) {
    if (static_cast<int>(mask.size()) != z.rows()) throw ShapeError("masked_mean_pool: mask length mismatch");
    int count = 0;
    Matrix<T> out(1, z.cols());
    std::vector<acc_t<T>> acc(static_cast<std::size_t>(z.cols()), acc_t<T>(0));
    acc_t<T>* acc_buf = acc.data();
    for (int i = 0; i < z.rows(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        ++count;
        const T* zr = z.row(i);
        for (int j = 0; j < z.cols(); ++j) acc_buf[j] += zr[j];
    }
    if (count == 0) throw ShapeError("masked_mean_pool: empty mask");
    for (int j = 0; j < z.cols(); ++j) out(0, j) = static_cast<T>(acc_buf[j] / count);
    return out;
}

// Scatters d_out / k back to the masked rows.
template <typename T>
Matrix<T> masked_mean_pool_backward(const Matrix<T>& d_out, std::span<const std::uint8_t> mask) {
    int count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) throw ShapeError("masked_mean_pool_backward: empty mask");
    Matrix<T> dz(static_cast<int>(mask.size()), d_out.cols());
    const T scale = T(1) / static_cast<T>(count);
    for (int i = 0; i < dz.rows(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const T* dr = d_out.row(0);
        T* dzr = dz.row(i);
        for (int j = 0; j < dz.cols(); ++j) dzr[j] = dr[j] * scale;
    }
    return dz;
}

// Inverted dropout; mask entries are 0 or 1/(1-rate).
template <typename T>
struct DropoutMask {
    Matrix<T> scale;
    bool active = false;
};

template <typename T>
Matrix<T> dropout_forward(const Matrix<T>& x, double rate, Rng& rng, DropoutMask<T>* mask) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) {
        if (mask) mask->active = false;
        return x;
    }
    const T keep_inv = static_cast<T>(1.0 / (1.0 - rate));
    Matrix<T> out(x.rows(), x.cols());
    if (mask) {
        mask->scale = Matrix<T>(x.rows(), x.cols());
        mask->active = true;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = rng.uniform() < rate ? T(0) : keep_inv;
        out.raw()[i] = x.raw()[i] * s;
        if (mask) mask->scale.raw()[i] = s;
    }
    return out;
}

template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& dy, const DropoutMask<T>& mask) {
    if (!mask.active) return dy;
    if (!dy.same_shape(mask.scale)) throw ShapeError("dropout_backward: shape mismatch");
    Matrix<T> dx(dy.rows(), dy.cols());
    for (std::size_t i = 0; i < dy.size(); ++i) dx.raw()[i] = dy.raw()[i] * mask.scale.raw()[i];
    return dx;
}

}  // namespace maa
