#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "maa/param.hpp"
#include "maa/rng.hpp"

namespace maa {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t coords_checked = 0;
    std::vector<GradCheckEntry> per_param;

    bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central-difference gradient oracle. The caller populates analytic
// gradients first; loss_fn re-evaluates the loss from the current
// parameter values. Tensors up to full_sweep_limit entries get a full
// coordinate sweep, larger ones a seeded sample of min_coords coordinates.
// Probing in a type wider than double keeps the difference quotient above
// the round-off floor for coordinates whose true gradient is near zero.
template <typename T, typename LossFn>
GradCheckReport finite_diff_gradcheck(LossFn&& loss_fn,
                                      std::span<ParamTensor<T>* const> params,
                                      double eps = 1e-4,
                                      std::uint64_t seed = 0,
                                      std::size_t min_coords = 64,
                                      std::size_t full_sweep_limit = 4096) {
    static_assert(std::is_floating_point_v<T>);
    if (eps <= 0.0) throw ConfigError("gradcheck: eps must be positive");
    GradCheckReport report;
    std::uint64_t param_index = 0;
    for (ParamTensor<T>* p : params) {
        const std::size_t n = p->value.size();
        if (n == 0) continue;
        std::vector<std::size_t> coords;
        if (n <= full_sweep_limit) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            Rng rng(derive_seed(seed, "gradcheck", param_index));
            const std::size_t want = std::min(n, std::max<std::size_t>(min_coords, 64));
            coords.reserve(want);
            for (std::size_t i = 0; i < want; ++i) {
                coords.push_back(static_cast<std::size_t>(rng.bounded(n)));
            }
        }
        GradCheckEntry entry{p->name, 0.0, coords.size()};
        for (std::size_t c : coords) {
            T& theta = p->value.raw()[c];
            const T saved = theta;
            theta = saved + static_cast<T>(eps);
            const T f_plus = loss_fn();
            theta = saved - static_cast<T>(eps);
            const T f_minus = loss_fn();
            theta = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                throw NumericError("gradcheck: non-finite loss while probing parameter " + p->name);
            }
            const T g_fd = (f_plus - f_minus) / (T(2) * static_cast<T>(eps));
            const T g_an = p->grad.raw()[c];
            const T denom = std::max({std::abs(g_fd), std::abs(g_an), T(1e-8)});
            const double rel = static_cast<double>(std::abs(g_fd - g_an) / denom);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.coords_checked += entry.coords_checked;
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = entry.name;
        }
        if (report.worst_param.empty()) report.worst_param = entry.name;
        report.per_param.push_back(std::move(entry));
        ++param_index;
    }
    return report;
}

template <typename T, typename LossFn>
GradCheckReport finite_diff_gradcheck(LossFn&& loss_fn, const std::vector<ParamTensor<T>*>& params,
                                      double eps = 1e-4, std::uint64_t seed = 0,
                                      std::size_t min_coords = 64,
                                      std::size_t full_sweep_limit = 4096) {
    return finite_diff_gradcheck(std::forward<LossFn>(loss_fn),
                                 std::span<ParamTensor<T>* const>(params), eps, seed, min_coords,
                                 full_sweep_limit);
}

}  // namespace maa
