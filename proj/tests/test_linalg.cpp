#include <catch_amalgamated.hpp>

#include "test_support.hpp"
#include "voxtrack/linalg.hpp"
#include "voxtrack/rng.hpp"

using namespace voxtrack;

namespace {

Mat3 reconstruct(const Svd3& s) {
    Mat3 sig = Mat3::zero();
    sig(0, 0) = s.sigma.x;
    sig(1, 1) = s.sigma.y;
    sig(2, 2) = s.sigma.z;
    return s.u * sig * s.v.transposed();
}

double max_abs_diff(const Mat3& a, const Mat3& b) {
    double worst = 0.0;
    for (int i = 0; i < 9; ++i)
        worst = std::max(worst, std::abs(a.m[static_cast<std::size_t>(i)] - b.m[static_cast<std::size_t>(i)]));
    return worst;
}

}  // namespace

TEST_CASE("svd3 reconstructs random matrices") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Mat3 a;
        for (int i = 0; i < 9; ++i) a.m[static_cast<std::size_t>(i)] = rng.uniform(-3.0, 3.0);
        Svd3 s = svd3(a);
        REQUIRE(max_abs_diff(reconstruct(s), a) < 1e-10);
        REQUIRE(s.u.orthonormality_drift() < 1e-10);
        REQUIRE(s.v.orthonormality_drift() < 1e-10);
        REQUIRE(s.sigma.x >= s.sigma.y);
        REQUIRE(s.sigma.y >= s.sigma.z);
        REQUIRE(s.sigma.z >= -1e-12);
    }
}

TEST_CASE("svd3 handles rank-deficient matrices") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        // rank-1 outer product
        Vec3 a = testing::random_point(rng, 2.0);
        Vec3 b = testing::random_point(rng, 2.0);
        Mat3 m = Mat3::zero();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double ai = (i == 0 ? a.x : i == 1 ? a.y : a.z);
                double bj = (j == 0 ? b.x : j == 1 ? b.y : b.z);
                m(i, j) = ai * bj;
            }
        Svd3 s = svd3(m);
        REQUIRE(max_abs_diff(reconstruct(s), m) < 1e-10);
        REQUIRE(s.u.orthonormality_drift() < 1e-9);
        REQUIRE(s.sigma.y < 1e-10);
    }
    Svd3 z = svd3(Mat3::zero());
    REQUIRE(z.u.orthonormality_drift() < 1e-12);
    REQUIRE(z.sigma.x == 0.0);
}

TEST_CASE("nearest_rotation recovers a drifted rotation") {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 r = testing::random_rotation(rng);
        Mat3 noisy = r;
        for (int i = 0; i < 9; ++i) noisy.m[static_cast<std::size_t>(i)] += rng.uniform(-1e-4, 1e-4);
        Mat3 fixed = nearest_rotation(noisy);
        REQUIRE(fixed.orthonormality_drift() < 1e-12);
        REQUIRE(fixed.det() == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(max_abs_diff(fixed, r) < 1e-3);
    }
}

TEST_CASE("eigen_symmetric diagonalizes constructed spectra") {
    Rng rng(14);
    const std::size_t n = 8;
    // Build A = Q diag(lambda) Q^T from a random orthogonal Q (Gram-Schmidt).
    std::vector<double> q(n * n);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> col(n);
        while (true) {
            for (std::size_t i = 0; i < n; ++i) col[i] = rng.normal();
            for (std::size_t j = 0; j < k; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += col[i] * q[i + n * j];
                for (std::size_t i = 0; i < n; ++i) col[i] -= dot * q[i + n * j];
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) norm += col[i] * col[i];
            norm = std::sqrt(norm);
            if (norm > 1e-3) {
                for (std::size_t i = 0; i < n; ++i) q[i + n * k] = col[i] / norm;
                break;
            }
        }
    }
    std::vector<double> lambda(n);
    for (std::size_t i = 0; i < n; ++i) lambda[i] = rng.uniform(-5.0, 5.0);
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) a[i * n + j] += q[i + n * k] * lambda[k] * q[j + n * k];

    SymmetricEigen e = eigen_symmetric(a, n);
    std::vector<double> expected = lambda;
    std::sort(expected.begin(), expected.end(), std::greater<>());
    for (std::size_t i = 0; i < n; ++i) REQUIRE(e.values[i] == Catch::Approx(expected[i]).margin(1e-9));
    // Eigenvectors satisfy A v = lambda v.
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            double av = 0.0;
            for (std::size_t j = 0; j < n; ++j) av += a[i * n + j] * e.vectors[j + n * k];
            REQUIRE(av == Catch::Approx(e.values[k] * e.vectors[i + n * k]).margin(1e-8));
        }
    }
}
