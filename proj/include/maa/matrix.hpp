#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <type_traits>
#include <vector>

#include "maa/common.hpp"

namespace maa {

// Dense row-major matrix. float for training, double for gradient checks.
template <typename T>
class Matrix {
    static_assert(std::is_floating_point_v<T>, "Matrix requires float or double");

public:
    Matrix() = default;

    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols),
          data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), T(0)) {
        if (rows < 0 || cols < 0) throw ShapeError("matrix: negative dimension");
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw ShapeError("matrix: ragged initializer");
            }
            std::copy(row.begin(), row.end(), m.row(i));
            ++i;
        }
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }
    T operator()(int r, int c) const {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }

    T* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const T* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    void zero() { std::fill(data_.begin(), data_.end(), T(0)); }
    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.raw()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

template <typename T>
inline void ensure_finite(const Matrix<T>& m, const char* op) {
    if (!m.all_finite()) {
        throw NumericError(std::string("non-finite values after op: ") + op);
    }
}

inline void ensure_finite_scalar(double v, const char* op) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value after op: ") + op);
    }
}

// C (+)= A * B
template <typename T>
void matmul_into(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions mismatch");
    if (c.rows() != a.rows() || c.cols() != b.cols()) throw ShapeError("matmul: bad output shape");
    if (!accumulate) c.zero();
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b.row(kk);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions mismatch");
    Matrix<T> c(a.rows(), b.cols());
    matmul_into(a, b, c);
    return c;
}

// C (+)= A * B^T   (A: m x n, B: p x n -> C: m x p)
template <typename T>
void matmul_nt_into(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions mismatch");
    if (c.rows() != a.rows() || c.cols() != b.rows()) throw ShapeError("matmul_nt: bad output shape");
    const int m = a.rows(), n = a.cols(), p = b.rows();
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int j = 0; j < p; ++j) {
            const T* brow = b.row(j);
            T sum = T(0);
            for (int t = 0; t < n; ++t) sum += arow[t] * brow[t];
            crow[j] = accumulate ? crow[j] + sum : sum;
        }
    }
}

// C (+)= A^T * B   (A: m x k, B: m x n -> C: k x n)
template <typename T>
void matmul_tn_into(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions mismatch");
    if (c.rows() != a.cols() || c.cols() != b.cols()) throw ShapeError("matmul_tn: bad output shape");
    if (!accumulate) c.zero();
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const T* arow = a.row(i);
        const T* brow = b.row(i);
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            T* crow = c.row(kk);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA += dC * B^T, dB += A^T * dC; either output may be null.
template <typename T>
void matmul_backward(const Matrix<T>& a, const Matrix<T>& b, const Matrix<T>& dc,
                     Matrix<T>* da, Matrix<T>* db) {
    if (dc.rows() != a.rows() || dc.cols() != b.cols()) {
        throw ShapeError("matmul_backward: gradient shape mismatch");
    }
    if (da) matmul_nt_into(dc, b, *da, /*accumulate=*/true);
    if (db) matmul_tn_into(a, dc, *db, /*accumulate=*/true);
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
    Matrix<T> out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.raw()[i] += b.raw()[i];
}

template <typename T>
void scale_inplace(Matrix<T>& a, T s) {
    for (T& v : a.raw()) v *= s;
}

// X[i, :] += v for every row i; v is 1 x cols.
template <typename T>
void add_row_broadcast(Matrix<T>& x, const Matrix<T>& v) {
    if (v.rows() != 1 || v.cols() != x.cols()) throw ShapeError("add_row_broadcast: shape mismatch");
    const T* vrow = v.row(0);
    for (int i = 0; i < x.rows(); ++i) {
        T* xrow = x.row(i);
        for (int j = 0; j < x.cols(); ++j) xrow[j] += vrow[j];
    }
}

// out(0, j) += sum_i x(i, j); the bias gradient pattern.
template <typename T>
void col_sums_acc(const Matrix<T>& x, Matrix<T>& out) {
    if (out.rows() != 1 || out.cols() != x.cols()) throw ShapeError("col_sums: shape mismatch");
    T* orow = out.row(0);
    for (int i = 0; i < x.rows(); ++i) {
        const T* xrow = x.row(i);
        for (int j = 0; j < x.cols(); ++j) orow[j] += xrow[j];
    }
}

template <typename T>
Matrix<T> rows_slice(const Matrix<T>& x, int r0, int r1) {
    if (r0 < 0 || r1 < r0 || r1 > x.rows()) throw ShapeError("rows_slice: bad range");
    Matrix<T> out(r1 - r0, x.cols());
    for (int i = r0; i < r1; ++i) {
        std::copy(x.row(i), x.row(i) + x.cols(), out.row(i - r0));
    }
    return out;
}

template <typename T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.raw()[i]) - static_cast<double>(b.raw()[i])));
    }
    return m;
}

}  // namespace maa
