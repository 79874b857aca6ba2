#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vlab/error.hpp"
#include "vlab/numerics/random.hpp"

namespace vlab {

using Vector = std::vector<double>;

/// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(std::span<const double> d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

    Vector column(std::size_t j) const {
        Vector c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
        return c;
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(double alpha, std::span<double> x) noexcept {
    for (auto& v : x) v *= alpha;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw ContractError("matvec: dimension mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ContractError("matmul: dimension mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline double frobenius_norm(const Matrix& a) noexcept { return norm2(a.data()); }

inline Matrix subtract(const Matrix& a, const Matrix& b) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

inline bool all_finite(std::span<const double> x) noexcept {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

struct SymmetricEigen {
    Vector values;   ///< descending
    Matrix vectors;  ///< column i pairs with values[i]
};

/// Cyclic Jacobi eigensolver for dense symmetric matrices.
/// Throws ContractError if `a` is not symmetric to 1e-12 relative.
inline SymmetricEigen symmetric_eig(const Matrix& a, int max_sweeps = 100) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ContractError("symmetric_eig: matrix must be square");
    double scale_ref = 0.0;
    for (const double v : a.data()) scale_ref = std::max(scale_ref, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale_ref)
                throw ContractError("symmetric_eig: matrix is not symmetric at (" + std::to_string(i) +
                                    "," + std::to_string(j) + ")");

    Matrix m = a;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m(j, i) = m(i, j);
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += m(i, i) * m(i, i);
            for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
        }
        if (off == 0.0 || off <= 1e-32 * diag) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double app = m(p, p);
                const double aqq = m(q, q);
                // Skip rotations that are below rounding of both diagonal entries.
                if (sweep > 3 && std::abs(apq) < 1e-18 * std::abs(app) && std::abs(apq) < 1e-18 * std::abs(aqq)) {
                    m(p, q) = m(q, p) = 0.0;
                    continue;
                }
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                m(p, p) = app - t * apq;
                m(q, q) = aqq + t * apq;
                m(p, q) = m(q, p) = 0.0;
                for (std::size_t r = 0; r < n; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = m(r, p);
                    const double arq = m(r, q);
                    const double nrp = arp - s * (arq + tau * arp);
                    const double nrq = arq + s * (arp - tau * arq);
                    m(r, p) = m(p, r) = nrp;
                    m(r, q) = m(q, r) = nrq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vrp = v(r, p);
                    const double vrq = v(r, q);
                    v(r, p) = vrp - s * (vrq + tau * vrp);
                    v(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });

    SymmetricEigen out{Vector(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = m(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
    }
    return out;
}

/// Uniformly random orthogonal matrix (QR of a Gaussian matrix via modified Gram-Schmidt).
inline Matrix random_orthogonal(std::size_t n, RandomStream& stream) {
    Matrix g(n, n);
    for (auto& x : g.data()) x = stream.normal();
    Matrix q(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Vector col = g.column(j);
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t k = 0; k < j; ++k) {
                double proj = 0.0;
                for (std::size_t r = 0; r < n; ++r) proj += q(r, k) * col[r];
                for (std::size_t r = 0; r < n; ++r) col[r] -= proj * q(r, k);
            }
        const double nrm = norm2(col);
        for (std::size_t r = 0; r < n; ++r) q(r, j) = col[r] / nrm;
    }
    return q;
}

/// V diag(values) V^T
inline Matrix compose_symmetric(std::span<const double> values, const Matrix& vectors) {
    const std::size_t n = vectors.rows();
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < values.size(); ++k) s += vectors(i, k) * values[k] * vectors(j, k);
            out(i, j) = out(j, i) = s;
        }
    return out;
}

}  // namespace vlab
