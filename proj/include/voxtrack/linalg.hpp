#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "voxtrack/common.hpp"

namespace voxtrack {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double squared_norm() const { return dot(*this); }
    double norm() const { return std::sqrt(squared_norm()); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0.0 ? (*this) / n : Vec3{};
    }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }
    static Mat3 zero() {
        Mat3 r;
        r.m.fill(0.0);
        return r;
    }
    static Mat3 from_rows(const Vec3& a, const Vec3& b, const Vec3& c) {
        Mat3 r;
        r.m = {a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z};
        return r;
    }
    static Mat3 rotation_x(double a) {
        double c = std::cos(a), s = std::sin(a);
        Mat3 r;
        r.m = {1, 0, 0, 0, c, -s, 0, s, c};
        return r;
    }
    static Mat3 rotation_y(double a) {
        double c = std::cos(a), s = std::sin(a);
        Mat3 r;
        r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
        return r;
    }
    static Mat3 rotation_z(double a) {
        double c = std::cos(a), s = std::sin(a);
        Mat3 r;
        r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
        return r;
    }

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r = Mat3::zero();
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) {
                double a = (*this)(i, k);
                for (int j = 0; j < 3; ++j) r(i, j) += a * o(k, j);
            }
        return r;
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (std::size_t i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (std::size_t i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
    Vec3 col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
    void set_col(int c, const Vec3& v) {
        (*this)(0, c) = v.x;
        (*this)(1, c) = v.y;
        (*this)(2, c) = v.z;
    }
    /// max |(R^T R - I)_ij|
    double orthonormality_drift() const {
        Mat3 g = transposed() * (*this);
        double worst = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double target = (i == j) ? 1.0 : 0.0;
                worst = std::max(worst, std::abs(g(i, j) - target));
            }
        return worst;
    }
};

struct Svd3 {
    Mat3 u;
    Vec3 sigma;  // descending, nonnegative
    Mat3 v;
};

/// One-sided Jacobi SVD of a 3x3 matrix: A = U * diag(sigma) * V^T.
/// Rank-deficient inputs get U completed to a proper orthonormal basis.
inline Svd3 svd3(const Mat3& a) {
    Mat3 w = a;               // columns converge to u_i * sigma_i
    Mat3 v = Mat3::identity();
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                Vec3 cp = w.col(p), cq = w.col(q);
                double apq = cp.dot(cq);
                double app = cp.squared_norm();
                double aqq = cq.squared_norm();
                off = std::max(off, std::abs(apq));
                if (std::abs(apq) < 1e-18 * std::sqrt(app * aqq) || apq == 0.0) continue;
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                w.set_col(p, cp * c - cq * s);
                w.set_col(q, cp * s + cq * c);
                Vec3 vp = v.col(p), vq = v.col(q);
                v.set_col(p, vp * c - vq * s);
                v.set_col(q, vp * s + vq * c);
            }
        }
        if (off < 1e-15) break;
    }
    // Column norms are the singular values; sort descending.
    std::array<int, 3> order = {0, 1, 2};
    std::array<double, 3> n = {w.col(0).norm(), w.col(1).norm(), w.col(2).norm()};
    for (int i = 0; i < 2; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (n[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] >
                n[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);

    Svd3 out;
    Mat3 u = Mat3::zero(), vs = Mat3::zero();
    double sig[3];
    for (int k = 0; k < 3; ++k) {
        int src = order[static_cast<std::size_t>(k)];
        sig[k] = n[static_cast<std::size_t>(src)];
        vs.set_col(k, v.col(src));
        if (sig[k] > 1e-12) {
            u.set_col(k, w.col(src) / sig[k]);
        }
    }
    // Complete degenerate U columns to an orthonormal basis (Gram-Schmidt
    // against every already-defined column).
    for (int k = 0; k < 3; ++k) {
        if (u.col(k).norm() > 0.5) continue;
        Vec3 basis[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        Vec3 c{1, 0, 0};
        for (const auto& b : basis) {
            Vec3 t = b;
            for (int j = 0; j < 3; ++j)
                if (j != k && u.col(j).norm() > 0.5) t -= u.col(j) * u.col(j).dot(b);
            if (t.norm() > 0.1) {
                c = t;
                break;
            }
        }
        u.set_col(k, c.normalized());
    }
    out.u = u;
    out.sigma = {sig[0], sig[1], sig[2]};
    out.v = vs;
    return out;
}

/// Nearest rotation matrix (polar decomposition with determinant correction).
inline Mat3 nearest_rotation(const Mat3& m) {
    Svd3 s = svd3(m);
    Mat3 r = s.u * s.v.transposed();
    if (r.det() < 0.0) {
        Mat3 u = s.u;
        u.set_col(2, -u.col(2));
        r = u * s.v.transposed();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver (cyclic Jacobi), for feature-space PCA.
// ---------------------------------------------------------------------------

struct SymmetricEigen {
    std::vector<double> values;   // descending
    std::vector<double> vectors;  // column-major: vectors[i + n*k] = component i of eigvec k
};

inline SymmetricEigen eigen_symmetric(std::vector<double> a, std::size_t n) {
    if (a.size() != n * n) throw ShapeMismatch("eigen_symmetric: matrix size mismatch");
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i + n * i] = 1.0;
    auto at = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    double apj = at(p, j), aqj = at(q, j);
                    at(p, j) = c * apj - s * aqj;
                    at(q, j) = s * apj + c * aqj;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = v[i + n * p], viq = v[i + n * q];
                    v[i + n * p] = c * vip - s * viq;
                    v[i + n * q] = s * vip + c * viq;
                }
            }
        }
    }
    // Sort descending by eigenvalue; fix each eigenvector's sign so its
    // largest-magnitude component is positive (keeps output deterministic).
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (at(order[j], order[j]) > at(order[i], order[i])) std::swap(order[i], order[j]);

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.assign(n * n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t src = order[k];
        out.values[k] = at(src, src);
        double best = 0.0;
        double sign = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double val = v[i + n * src];
            if (std::abs(val) > std::abs(best)) {
                best = val;
                sign = val >= 0.0 ? 1.0 : -1.0;
            }
        }
        for (std::size_t i = 0; i < n; ++i) out.vectors[i + n * k] = sign * v[i + n * src];
    }
    return out;
}

}  // namespace voxtrack
