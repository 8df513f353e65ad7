#include <doctest.h>

#include <cmath>

#include "maa/gradcheck.hpp"
#include "maa/ops.hpp"
#include "maa/rng.hpp"

using namespace maa;

namespace {

Matrix<double> ones_row(int d) {
    Matrix<double> m(1, d);
    m.fill(1.0);
    return m;
}

Matrix<double> zeros_row(int d) { return Matrix<double>(1, d); }

Matrix<double> random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix<double> m(rows, cols);
    for (auto& v : m.raw()) v = rng.gaussian() * scale;
    return m;
}

}  // namespace

TEST_CASE("layer_norm constant row maps to beta") {
    Matrix<double> x(1, 6);
    x.fill(3.7);
    const auto y = layer_norm_forward(x, ones_row(6), zeros_row(6), 1e-5, (LayerNormCache<double>*)nullptr);
    for (double v : y.raw()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("layer_norm on an already normalized row is identity at eps ~ 0") {
    const auto x = Matrix<double>::from_rows({{1.0, -1.0}});
    const auto y = layer_norm_forward(x, ones_row(2), zeros_row(2), 1e-30,
                                      (LayerNormCache<double>*)nullptr);
    CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm output rows have mean 0 and biased variance ~ 1") {
    Rng rng(5);
    const auto x = random_matrix(4, 8, rng, 2.5);
    const auto y = layer_norm_forward(x, ones_row(8), zeros_row(8), 1e-5,
                                      (LayerNormCache<double>*)nullptr);
    for (int i = 0; i < y.rows(); ++i) {
        double mean = 0.0;
        for (int j = 0; j < 8; ++j) mean += y(i, j);
        mean /= 8;
        CHECK(std::abs(mean) < 1e-6);
        double var = 0.0;
        for (int j = 0; j < 8; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= 8;
        CHECK(var > 1.0 - 1e-3);
        CHECK(var <= 1.0 + 1e-9);
    }
}

TEST_CASE("layer_norm per-row affine invariance") {
    Rng rng(6);
    const auto x = random_matrix(5, 7, rng);
    const auto base = layer_norm_forward(x, ones_row(7), zeros_row(7), 1e-7,
                                         (LayerNormCache<double>*)nullptr);
    for (int trial = 0; trial < 10; ++trial) {
        const double a = std::exp(rng.gaussian());  // > 0
        const double b = rng.gaussian() * 3.0;
        Matrix<double> shifted = x;
        for (auto& v : shifted.raw()) v = a * v + b;
        const auto y = layer_norm_forward(shifted, ones_row(7), zeros_row(7), 1e-7,
                                          (LayerNormCache<double>*)nullptr);
        CHECK(max_abs_diff(base, y) < 1e-5);
    }
}

TEST_CASE("layer_norm rejects single-column rows") {
    Matrix<double> x(3, 1);
    CHECK_THROWS_AS(
        layer_norm_forward(x, ones_row(1), zeros_row(1), 1e-5, (LayerNormCache<double>*)nullptr),
        ShapeError);
}

TEST_CASE("softmax uniform row") {
    Matrix<double> x(1, 4);
    x.fill(1.7);
    const auto y = softmax_rows(x);
    for (double v : y.raw()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax closed form [0, ln 2]") {
    const auto x = Matrix<double>::from_rows({{0.0, std::log(2.0)}});
    const auto y = softmax_rows(x);
    CHECK(y(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const auto x = random_matrix(3, 6, rng, 4.0);
        const auto y = softmax_rows(x);
        Matrix<double> shifted = x;
        for (auto& v : shifted.raw()) v += 10.0;
        const auto y2 = softmax_rows(shifted);
        CHECK(max_abs_diff(y, y2) < 1e-7);
        for (int i = 0; i < y.rows(); ++i) {
            double sum = 0.0;
            for (int j = 0; j < y.cols(); ++j) {
                CHECK(y(i, j) > 0.0);
                CHECK(y(i, j) < 1.0);
                sum += y(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("relu and gelu point values") {
    const auto x = Matrix<double>::from_rows({{-1.0, 0.0, 2.0}});
    const auto r = activation_forward(x, Activation::relu);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == 0.0);
    CHECK(r(0, 2) == 2.0);

    const auto g = activation_forward(x, Activation::gelu);
    CHECK(g(0, 1) == 0.0);

    // Oracle: evaluate the tanh-approximation formula in extended precision.
    const long double xv = 3.0L;
    const long double u = 0.7978845608028653558798921198687L * (xv + 0.044715L * xv * xv * xv);
    const long double expected = 0.5L * xv * (1.0L + std::tanh(u));
    const auto g3 = activation_forward(Matrix<double>::from_rows({{3.0}}), Activation::gelu);
    CHECK(g3(0, 0) == doctest::Approx(static_cast<double>(expected)).epsilon(1e-12));
    CHECK(g3(0, 0) == doctest::Approx(2.9964).epsilon(1e-4));
}

TEST_CASE("masked_mean_pool basics") {
    const auto single = Matrix<double>::from_rows({{4.0, 5.0}});
    const std::vector<std::uint8_t> m1{1};
    const auto p1 = masked_mean_pool(single, m1);
    CHECK(p1(0, 0) == 4.0);
    CHECK(p1(0, 1) == 5.0);

    const auto twice = Matrix<double>::from_rows({{4.0, 5.0}, {4.0, 5.0}});
    const std::vector<std::uint8_t> m2{1, 1};
    const auto p2 = masked_mean_pool(twice, m2);
    CHECK(p2(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(p2(0, 1) == doctest::Approx(5.0).epsilon(1e-15));

    const auto padded = Matrix<double>::from_rows({{2.0, 0.0}, {4.0, 0.0}, {99.0, 99.0}});
    const std::vector<std::uint8_t> m3{1, 1, 0};
    const auto p3 = masked_mean_pool(padded, m3);
    CHECK(p3(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(p3(0, 1) == 0.0);

    const std::vector<std::uint8_t> empty{0, 0, 0};
    CHECK_THROWS_AS(masked_mean_pool(padded, empty), ShapeError);
}

TEST_CASE("masked_mean_pool is invariant to joint row/mask permutation") {
    Rng rng(9);
    const int n = 7, d = 5;
    const auto z = random_matrix(n, d, rng);
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1};
    const auto base = masked_mean_pool(z, mask);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int trial = 0; trial < 10; ++trial) {
        rng.shuffle(perm);
        Matrix<double> zp(n, d);
        std::vector<std::uint8_t> mp(n);
        for (int i = 0; i < n; ++i) {
            mp[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(perm[i])];
            for (int j = 0; j < d; ++j) zp(i, j) = z(perm[i], j);
        }
        const auto p = masked_mean_pool(zp, mp);
        CHECK(max_abs_diff(base, p) < 1e-12);
    }
}

// Analytic backward of every op against the central-difference oracle.
TEST_CASE("op backward passes agree with finite differences") {
    Rng rng(13);

    SUBCASE("layer_norm with sum-style loss") {
        ParamTensor<double> x(4, 6, "x", false);
        ParamTensor<double> gamma(1, 6, "gamma", false);
        ParamTensor<double> beta(1, 6, "beta", false);
        x.value = random_matrix(4, 6, rng);
        gamma.value = random_matrix(1, 6, rng, 0.5);
        for (auto& v : gamma.value.raw()) v += 1.0;
        beta.value = random_matrix(1, 6, rng, 0.3);
        const auto weights = random_matrix(4, 6, rng);

        const auto loss_fn = [&]() {
            const auto y = layer_norm_forward(x.value, gamma.value, beta.value, 1e-5,
                                              (LayerNormCache<double>*)nullptr);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y.raw()[i] * weights.raw()[i];
            return loss;
        };

        LayerNormCache<double> cache;
        layer_norm_forward(x.value, gamma.value, beta.value, 1e-5, &cache);
        x.grad = layer_norm_backward(weights, cache, gamma.value, &gamma.grad, &beta.grad);

        std::vector<ParamTensor<double>*> params{&x, &gamma, &beta};
        const auto report = finite_diff_gradcheck(loss_fn, params, 1e-4);
        CHECK(report.max_rel_err < 1e-5);
    }

    SUBCASE("activation") {
        for (const auto kind : {Activation::gelu, Activation::relu}) {
            ParamTensor<double> x(3, 5, "x", false);
            x.value = random_matrix(3, 5, rng);
            // Keep relu away from its kink.
            for (auto& v : x.value.raw()) {
                if (std::abs(v) < 0.05) v += 0.2;
            }
            const auto weights = random_matrix(3, 5, rng);
            const auto loss_fn = [&]() {
                const auto y = activation_forward(x.value, kind);
                double loss = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) loss += y.raw()[i] * weights.raw()[i];
                return loss;
            };
            x.zero_grad();
            x.grad = activation_backward(weights, x.value, kind);
            std::vector<ParamTensor<double>*> params{&x};
            const auto report = finite_diff_gradcheck(loss_fn, params, 1e-5);
            CHECK(report.max_rel_err < 1e-6);
        }
    }

    SUBCASE("softmax") {
        ParamTensor<double> x(3, 6, "x", false);
        x.value = random_matrix(3, 6, rng);
        const auto weights = random_matrix(3, 6, rng);
        const auto loss_fn = [&]() {
            const auto y = softmax_rows(x.value);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y.raw()[i] * weights.raw()[i];
            return loss;
        };
        const auto y = softmax_rows(x.value);
        x.grad = softmax_rows_backward(weights, y);
        std::vector<ParamTensor<double>*> params{&x};
        const auto report = finite_diff_gradcheck(loss_fn, params, 1e-5);
        CHECK(report.max_rel_err < 1e-6);
    }

    SUBCASE("masked_mean_pool") {
        ParamTensor<double> z(6, 4, "z", false);
        z.value = random_matrix(6, 4, rng);
        const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
        const auto weights = random_matrix(1, 4, rng);
        const auto loss_fn = [&]() {
            const auto p = masked_mean_pool(z.value, mask);
            double loss = 0.0;
            for (int j = 0; j < 4; ++j) loss += p(0, j) * weights(0, j);
            return loss;
        };
        z.grad = masked_mean_pool_backward(weights, mask);
        std::vector<ParamTensor<double>*> params{&z};
        const auto report = finite_diff_gradcheck(loss_fn, params, 1e-5);
        CHECK(report.max_rel_err < 1e-8);
    }

    SUBCASE("matmul") {
        ParamTensor<double> a(3, 4, "a", false);
        ParamTensor<double> b(4, 5, "b", false);
        a.value = random_matrix(3, 4, rng);
        b.value = random_matrix(4, 5, rng);
        const auto weights = random_matrix(3, 5, rng);
        const auto loss_fn = [&]() {
            const auto c = matmul(a.value, b.value);
            double loss = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) loss += c.raw()[i] * weights.raw()[i];
            return loss;
        };
        matmul_backward(a.value, b.value, weights, &a.grad, &b.grad);
        std::vector<ParamTensor<double>*> params{&a, &b};
        const auto report = finite_diff_gradcheck(loss_fn, params, 1e-5);
        CHECK(report.max_rel_err < 1e-8);
    }

    SUBCASE("dropout with frozen mask") {
        ParamTensor<double> x(4, 4, "x", false);
        x.value = random_matrix(4, 4, rng);
        Rng drop_rng(99);
        DropoutMask<double> mask;
        dropout_forward(x.value, 0.5, drop_rng, &mask);
        const auto weights = random_matrix(4, 4, rng);
        const auto loss_fn = [&]() {
            // Re-apply the frozen mask rather than re-sampling.
            double loss = 0.0;
            for (std::size_t i = 0; i < x.value.size(); ++i) {
                loss += x.value.raw()[i] * mask.scale.raw()[i] * weights.raw()[i];
            }
            return loss;
        };
        x.grad = dropout_backward(weights, mask);
        std::vector<ParamTensor<double>*> params{&x};
        const auto report = finite_diff_gradcheck(loss_fn, params, 1e-5);
        CHECK(report.max_rel_err < 1e-8);
    }
}

TEST_CASE("dropout scales kept entries and zeroes dropped ones") {
    Rng rng(3);
    Matrix<double> x(10, 10);
    x.fill(1.0);
    DropoutMask<double> mask;
    const auto y = dropout_forward(x, 0.25, rng, &mask);
    int kept = 0;
    for (double v : y.raw()) {
        if (v != 0.0) {
            CHECK(v == doctest::Approx(1.0 / 0.75));
            ++kept;
        }
    }
    CHECK(kept > 50);
    CHECK(kept < 100);

    Rng rng2(4);
    const auto same = dropout_forward(x, 0.0, rng2, (DropoutMask<double>*)nullptr);
    CHECK(max_abs_diff(x, same) == 0.0);
}
