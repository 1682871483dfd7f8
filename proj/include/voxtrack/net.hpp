#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/common.hpp"
#include "voxtrack/grid.hpp"
#include "voxtrack/parallel.hpp"
#include "voxtrack/rng.hpp"
#include "voxtrack/tensor.hpp"

namespace voxtrack {

inline constexpr double kLeakySlope = 0.1;
inline constexpr double kNormGuard = 1e-6;
inline constexpr int kMaxChannels = 512;

// ---------------------------------------------------------------------------
// Convolution primitives. Activations are (X, Y, Z, C); weights are
// (K, K, K, C_in, C_out). Padding is (kernel - stride) / 2, which makes a
// strided conv downsample by exactly `stride` and a transposed conv upsample
// by exactly `stride`. Accumulation is 64-bit regardless of storage type.
// ---------------------------------------------------------------------------

inline int conv_padding(int kernel, int stride) {
    if (kernel < stride || (kernel - stride) % 2 != 0)
        throw ShapeMismatch("unsupported kernel/stride combination");
    return (kernel - stride) / 2;
}

template <typename T>
TensorND<T> conv3d_forward(const TensorND<T>& in, const TensorND<T>& w, const TensorND<T>& b,
                           int stride, int threads) {
    const int ix_n = in.shape[0], iy_n = in.shape[1], iz_n = in.shape[2], ci_n = in.shape[3];
    const int k = w.shape[0];
    const int co_n = w.shape[4];
    if (w.shape[3] != ci_n) throw ShapeMismatch("conv3d_forward: input channel mismatch");
    if (ix_n % stride || iy_n % stride || iz_n % stride)
        throw ShapeMismatch("conv3d_forward: input dims not divisible by stride");
    const int pad = conv_padding(k, stride);
    const int ox_n = ix_n / stride, oy_n = iy_n / stride, oz_n = iz_n / stride;

    TensorND<T> out({ox_n, oy_n, oz_n, co_n});
    const std::size_t n_out = static_cast<std::size_t>(ox_n) * oy_n * oz_n;
    const T* in_p = in.data.data();
    const T* w_p = w.data.data();
    const T* b_p = b.data.data();
    T* out_p = out.data.data();

    parallel_for(n_out, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t vi = lo; vi < hi; ++vi) {
            const int ox = static_cast<int>(vi / (static_cast<std::size_t>(oy_n) * oz_n));
            const int oy = static_cast<int>((vi / oz_n) % oy_n);
            const int oz = static_cast<int>(vi % oz_n);
            for (int c = 0; c < co_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int kx = 0; kx < k; ++kx) {
                const int x = ox * stride - pad + kx;
                if (x < 0 || x >= ix_n) continue;
                for (int ky = 0; ky < k; ++ky) {
                    const int y = oy * stride - pad + ky;
                    if (y < 0 || y >= iy_n) continue;
                    for (int kz = 0; kz < k; ++kz) {
                        const int z = oz * stride - pad + kz;
                        if (z < 0 || z >= iz_n) continue;
                        const T* in_row = in_p + ((static_cast<std::size_t>(x) * iy_n + y) * iz_n + z) * ci_n;
                        const T* w_tap = w_p + ((static_cast<std::size_t>(kx) * k + ky) * k + kz) *
                                                   static_cast<std::size_t>(ci_n) * co_n;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            const double v = static_cast<double>(in_row[ci]);
                            if (v == 0.0) continue;
                            const T* w_row = w_tap + static_cast<std::size_t>(ci) * co_n;
                            for (int co = 0; co < co_n; ++co)
                                acc[static_cast<std::size_t>(co)] += v * static_cast<double>(w_row[co]);
                        }
                    }
                }
            }
            T* out_row = out_p + vi * static_cast<std::size_t>(co_n);
            for (int co = 0; co < co_n; ++co)
                out_row[co] = static_cast<T>(acc[static_cast<std::size_t>(co)] + static_cast<double>(b_p[co]));
        }
    });
    return out;
}

template <typename T>
TensorND<T> conv3d_backward_input(const TensorND<T>& d_out, const TensorND<T>& w,
                                  const std::vector<int>& in_shape, int stride, int threads) {
    const int ix_n = in_shape[0], iy_n = in_shape[1], iz_n = in_shape[2], ci_n = in_shape[3];
    const int k = w.shape[0];
    const int co_n = w.shape[4];
    const int pad = conv_padding(k, stride);
    const int ox_n = d_out.shape[0], oy_n = d_out.shape[1], oz_n = d_out.shape[2];

    TensorND<T> d_in(in_shape);
    const std::size_t n_in = static_cast<std::size_t>(ix_n) * iy_n * iz_n;
    const T* dout_p = d_out.data.data();
    const T* w_p = w.data.data();
    T* din_p = d_in.data.data();

    parallel_for(n_in, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t vi = lo; vi < hi; ++vi) {
            const int x = static_cast<int>(vi / (static_cast<std::size_t>(iy_n) * iz_n));
            const int y = static_cast<int>((vi / iz_n) % iy_n);
            const int z = static_cast<int>(vi % iz_n);
            for (int c = 0; c < ci_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int kx = 0; kx < k; ++kx) {
                const int tx = x + pad - kx;
                if (tx < 0 || tx % stride) continue;
                const int ox = tx / stride;
                if (ox >= ox_n) continue;
                for (int ky = 0; ky < k; ++ky) {
                    const int ty = y + pad - ky;
                    if (ty < 0 || ty % stride) continue;
                    const int oy = ty / stride;
                    if (oy >= oy_n) continue;
                    for (int kz = 0; kz < k; ++kz) {
                        const int tz = z + pad - kz;
                        if (tz < 0 || tz % stride) continue;
                        const int oz = tz / stride;
                        if (oz >= oz_n) continue;
                        const T* dout_row =
                            dout_p + ((static_cast<std::size_t>(ox) * oy_n + oy) * oz_n + oz) * co_n;
                        const T* w_tap = w_p + ((static_cast<std::size_t>(kx) * k + ky) * k + kz) *
                                                   static_cast<std::size_t>(ci_n) * co_n;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            const T* w_row = w_tap + static_cast<std::size_t>(ci) * co_n;
                            double s = 0.0;
                            for (int co = 0; co < co_n; ++co)
                                s += static_cast<double>(dout_row[co]) * static_cast<double>(w_row[co]);
                            acc[static_cast<std::size_t>(ci)] += s;
                        }
                    }
                }
            }
            T* din_row = din_p + vi * static_cast<std::size_t>(ci_n);
            for (int ci = 0; ci < ci_n; ++ci) din_row[ci] = static_cast<T>(acc[static_cast<std::size_t>(ci)]);
        }
    });
    return d_in;
}

/// Weight/bias gradients, computed per weight row so every output slot is
/// written exactly once (bit-deterministic for any thread count).
template <typename T>
void conv3d_backward_params(const TensorND<T>& in, const TensorND<T>& d_out, int kernel, int stride,
                            TensorND<T>& d_w, TensorND<T>& d_b, int threads) {
    const int ix_n = in.shape[0], iy_n = in.shape[1], iz_n = in.shape[2], ci_n = in.shape[3];
    const int k = kernel;
    const int co_n = d_out.shape[3];
    const int pad = conv_padding(k, stride);
    const int ox_n = d_out.shape[0], oy_n = d_out.shape[1], oz_n = d_out.shape[2];

    const T* in_p = in.data.data();
    const T* dout_p = d_out.data.data();
    T* dw_p = d_w.data.data();

    const std::size_t n_rows = static_cast<std::size_t>(k) * k * k * ci_n;
    parallel_for(n_rows, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t row = lo; row < hi; ++row) {
            const int ci = static_cast<int>(row % ci_n);
            const std::size_t tap = row / ci_n;
            const int kz = static_cast<int>(tap % k);
            const int ky = static_cast<int>((tap / k) % k);
            const int kx = static_cast<int>(tap / (static_cast<std::size_t>(k) * k));
            for (int c = 0; c < co_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int ox = 0; ox < ox_n; ++ox) {
                const int x = ox * stride - pad + kx;
                if (x < 0 || x >= ix_n) continue;
                for (int oy = 0; oy < oy_n; ++oy) {
                    const int y = oy * stride - pad + ky;
                    if (y < 0 || y >= iy_n) continue;
                    for (int oz = 0; oz < oz_n; ++oz) {
                        const int z = oz * stride - pad + kz;
                        if (z < 0 || z >= iz_n) continue;
                        const double v = static_cast<double>(
                            in_p[((static_cast<std::size_t>(x) * iy_n + y) * iz_n + z) * ci_n + ci]);
                        if (v == 0.0) continue;
                        const T* dout_row =
                            dout_p + ((static_cast<std::size_t>(ox) * oy_n + oy) * oz_n + oz) * co_n;
                        for (int co = 0; co < co_n; ++co)
                            acc[static_cast<std::size_t>(co)] += v * static_cast<double>(dout_row[co]);
                    }
                }
            }
            T* dw_row = dw_p + row * static_cast<std::size_t>(co_n);
            for (int co = 0; co < co_n; ++co) dw_row[co] = static_cast<T>(acc[static_cast<std::size_t>(co)]);
        }
    });

    std::vector<double> db(static_cast<std::size_t>(co_n), 0.0);
    const std::size_t n_out = static_cast<std::size_t>(ox_n) * oy_n * oz_n;
    for (std::size_t v = 0; v < n_out; ++v)
        for (int co = 0; co < co_n; ++co)
            db[static_cast<std::size_t>(co)] += static_cast<double>(dout_p[v * co_n + co]);
    for (int co = 0; co < co_n; ++co) d_b.data[static_cast<std::size_t>(co)] = static_cast<T>(db[static_cast<std::size_t>(co)]);
}

template <typename T>
TensorND<T> tconv3d_forward(const TensorND<T>& in, const TensorND<T>& w, const TensorND<T>& b,
                            int stride, int threads) {
    const int ix_n = in.shape[0], iy_n = in.shape[1], iz_n = in.shape[2], ci_n = in.shape[3];
    const int k = w.shape[0];
    const int co_n = w.shape[4];
    if (w.shape[3] != ci_n) throw ShapeMismatch("tconv3d_forward: input channel mismatch");
    const int pad = conv_padding(k, stride);
    const int ox_n = ix_n * stride, oy_n = iy_n * stride, oz_n = iz_n * stride;

    TensorND<T> out({ox_n, oy_n, oz_n, co_n});
    const std::size_t n_out = static_cast<std::size_t>(ox_n) * oy_n * oz_n;
    const T* in_p = in.data.data();
    const T* w_p = w.data.data();
    const T* b_p = b.data.data();
    T* out_p = out.data.data();

    parallel_for(n_out, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t vi = lo; vi < hi; ++vi) {
            const int ox = static_cast<int>(vi / (static_cast<std::size_t>(oy_n) * oz_n));
            const int oy = static_cast<int>((vi / oz_n) % oy_n);
            const int oz = static_cast<int>(vi % oz_n);
            for (int c = 0; c < co_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int kx = 0; kx < k; ++kx) {
                const int tx = ox + pad - kx;
                if (tx < 0 || tx % stride) continue;
                const int x = tx / stride;
                if (x >= ix_n) continue;
                for (int ky = 0; ky < k; ++ky) {
                    const int ty = oy + pad - ky;
                    if (ty < 0 || ty % stride) continue;
                    const int y = ty / stride;
                    if (y >= iy_n) continue;
                    for (int kz = 0; kz < k; ++kz) {
                        const int tz = oz + pad - kz;
                        if (tz < 0 || tz % stride) continue;
                        const int z = tz / stride;
                        if (z >= iz_n) continue;
                        const T* in_row = in_p + ((static_cast<std::size_t>(x) * iy_n + y) * iz_n + z) * ci_n;
                        const T* w_tap = w_p + ((static_cast<std::size_t>(kx) * k + ky) * k + kz) *
                                                   static_cast<std::size_t>(ci_n) * co_n;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            const double v = static_cast<double>(in_row[ci]);
                            if (v == 0.0) continue;
                            const T* w_row = w_tap + static_cast<std::size_t>(ci) * co_n;
                            for (int co = 0; co < co_n; ++co)
                                acc[static_cast<std::size_t>(co)] += v * static_cast<double>(w_row[co]);
                        }
                    }
                }
            }
            T* out_row = out_p + vi * static_cast<std::size_t>(co_n);
            for (int co = 0; co < co_n; ++co)
                out_row[co] = static_cast<T>(acc[static_cast<std::size_t>(co)] + static_cast<double>(b_p[co]));
        }
    });
    return out;
}

template <typename T>
TensorND<T> tconv3d_backward_input(const TensorND<T>& d_out, const TensorND<T>& w,
                                   const std::vector<int>& in_shape, int stride, int threads) {
    const int ix_n = in_shape[0], iy_n = in_shape[1], iz_n = in_shape[2], ci_n = in_shape[3];
    const int k = w.shape[0];
    const int co_n = w.shape[4];
    const int pad = conv_padding(k, stride);
    const int ox_n = d_out.shape[0], oy_n = d_out.shape[1], oz_n = d_out.shape[2];

    TensorND<T> d_in(in_shape);
    const std::size_t n_in = static_cast<std::size_t>(ix_n) * iy_n * iz_n;
    const T* dout_p = d_out.data.data();
    const T* w_p = w.data.data();
    T* din_p = d_in.data.data();

    parallel_for(n_in, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t vi = lo; vi < hi; ++vi) {
            const int x = static_cast<int>(vi / (static_cast<std::size_t>(iy_n) * iz_n));
            const int y = static_cast<int>((vi / iz_n) % iy_n);
            const int z = static_cast<int>(vi % iz_n);
            for (int c = 0; c < ci_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int kx = 0; kx < k; ++kx) {
                const int ox = x * stride - pad + kx;
                if (ox < 0 || ox >= ox_n) continue;
                for (int ky = 0; ky < k; ++ky) {
                    const int oy = y * stride - pad + ky;
                    if (oy < 0 || oy >= oy_n) continue;
                    for (int kz = 0; kz < k; ++kz) {
                        const int oz = z * stride - pad + kz;
                        if (oz < 0 || oz >= oz_n) continue;
                        const T* dout_row =
                            dout_p + ((static_cast<std::size_t>(ox) * oy_n + oy) * oz_n + oz) * co_n;
                        const T* w_tap = w_p + ((static_cast<std::size_t>(kx) * k + ky) * k + kz) *
                                                   static_cast<std::size_t>(ci_n) * co_n;
                        for (int ci = 0; ci < ci_n; ++ci) {
                            const T* w_row = w_tap + static_cast<std::size_t>(ci) * co_n;
                            double s = 0.0;
                            for (int co = 0; co < co_n; ++co)
                                s += static_cast<double>(dout_row[co]) * static_cast<double>(w_row[co]);
                            acc[static_cast<std::size_t>(ci)] += s;
                        }
                    }
                }
            }
            T* din_row = din_p + vi * static_cast<std::size_t>(ci_n);
            for (int ci = 0; ci < ci_n; ++ci) din_row[ci] = static_cast<T>(acc[static_cast<std::size_t>(ci)]);
        }
    });
    return d_in;
}

template <typename T>
void tconv3d_backward_params(const TensorND<T>& in, const TensorND<T>& d_out, int kernel, int stride,
                             TensorND<T>& d_w, TensorND<T>& d_b, int threads) {
    const int ix_n = in.shape[0], iy_n = in.shape[1], iz_n = in.shape[2], ci_n = in.shape[3];
    const int k = kernel;
    const int co_n = d_out.shape[3];
    const int pad = conv_padding(k, stride);
    const int ox_n = d_out.shape[0], oy_n = d_out.shape[1], oz_n = d_out.shape[2];

    const T* in_p = in.data.data();
    const T* dout_p = d_out.data.data();
    T* dw_p = d_w.data.data();

    const std::size_t n_rows = static_cast<std::size_t>(k) * k * k * ci_n;
    parallel_for(n_rows, threads, [&](std::size_t lo, std::size_t hi, int) {
        std::array<double, kMaxChannels> acc;
        for (std::size_t row = lo; row < hi; ++row) {
            const int ci = static_cast<int>(row % ci_n);
            const std::size_t tap = row / ci_n;
            const int kz = static_cast<int>(tap % k);
            const int ky = static_cast<int>((tap / k) % k);
            const int kx = static_cast<int>(tap / (static_cast<std::size_t>(k) * k));
            for (int c = 0; c < co_n; ++c) acc[static_cast<std::size_t>(c)] = 0.0;
            for (int x = 0; x < ix_n; ++x) {
                const int ox = x * stride - pad + kx;
                if (ox < 0 || ox >= ox_n) continue;
                for (int y = 0; y < iy_n; ++y) {
                    const int oy = y * stride - pad + ky;
                    if (oy < 0 || oy >= oy_n) continue;
                    for (int z = 0; z < iz_n; ++z) {
                        const int oz = z * stride - pad + kz;
                        if (oz < 0 || oz >= oz_n) continue;
                        const double v = static_cast<double>(
                            in_p[((static_cast<std::size_t>(x) * iy_n + y) * iz_n + z) * ci_n + ci]);
                        if (v == 0.0) continue;
                        const T* dout_row =
                            dout_p + ((static_cast<std::size_t>(ox) * oy_n + oy) * oz_n + oz) * co_n;
                        for (int co = 0; co < co_n; ++co)
                            acc[static_cast<std::size_t>(co)] += v * static_cast<double>(dout_row[co]);
                    }
                }
            }
            T* dw_row = dw_p + row * static_cast<std::size_t>(co_n);
            for (int co = 0; co < co_n; ++co) dw_row[co] = static_cast<T>(acc[static_cast<std::size_t>(co)]);
        }
    });

    std::vector<double> db(static_cast<std::size_t>(co_n), 0.0);
    const std::size_t n_out = static_cast<std::size_t>(ox_n) * oy_n * oz_n;
    for (std::size_t v = 0; v < n_out; ++v)
        for (int co = 0; co < co_n; ++co)
            db[static_cast<std::size_t>(co)] += static_cast<double>(dout_p[v * co_n + co]);
    for (int co = 0; co < co_n; ++co) d_b.data[static_cast<std::size_t>(co)] = static_cast<T>(db[static_cast<std::size_t>(co)]);
}

// ---------------------------------------------------------------------------
// Pointwise ops.
// ---------------------------------------------------------------------------

template <typename T>
TensorND<T> leaky_relu_forward(const TensorND<T>& x) {
    TensorND<T> y = x;
    for (auto& v : y.data)
        if (v < T(0)) v = static_cast<T>(static_cast<double>(v) * kLeakySlope);
    return y;
}

template <typename T>
TensorND<T> leaky_relu_backward(const TensorND<T>& x_pre, const TensorND<T>& d_y) {
    TensorND<T> d_x = d_y;
    for (std::size_t i = 0; i < d_x.data.size(); ++i)
        if (x_pre.data[i] < T(0)) d_x.data[i] = static_cast<T>(static_cast<double>(d_x.data[i]) * kLeakySlope);
    return d_x;
}

/// Per-voxel v / max(||v||, 1e-6): an exactly-zero feature stays zero, so it
/// never wins a similarity comparison.
template <typename T>
TensorND<T> l2_normalize_forward(const TensorND<T>& x) {
    const int c_n = x.shape.back();
    TensorND<T> y = x;
    const std::size_t voxels = x.numel() / static_cast<std::size_t>(c_n);
    for (std::size_t v = 0; v < voxels; ++v) {
        double n2 = 0.0;
        const std::size_t base = v * static_cast<std::size_t>(c_n);
        for (int c = 0; c < c_n; ++c) {
            double t = static_cast<double>(x.data[base + static_cast<std::size_t>(c)]);
            n2 += t * t;
        }
        const double inv = 1.0 / std::max(std::sqrt(n2), kNormGuard);
        for (int c = 0; c < c_n; ++c)
            y.data[base + static_cast<std::size_t>(c)] =
                static_cast<T>(static_cast<double>(x.data[base + static_cast<std::size_t>(c)]) * inv);
    }
    return y;
}

template <typename T>
TensorND<T> l2_normalize_backward(const TensorND<T>& x_pre, const TensorND<T>& d_y) {
    const int c_n = x_pre.shape.back();
    TensorND<T> d_x = x_pre.zeros_like();
    const std::size_t voxels = x_pre.numel() / static_cast<std::size_t>(c_n);
    for (std::size_t v = 0; v < voxels; ++v) {
        const std::size_t base = v * static_cast<std::size_t>(c_n);
        double n2 = 0.0;
        for (int c = 0; c < c_n; ++c) {
            double t = static_cast<double>(x_pre.data[base + static_cast<std::size_t>(c)]);
            n2 += t * t;
        }
        const double norm = std::sqrt(n2);
        if (norm <= kNormGuard) {
            // in the guard region the map is linear: y = x / 1e-6
            for (int c = 0; c < c_n; ++c)
                d_x.data[base + static_cast<std::size_t>(c)] = static_cast<T>(
                    static_cast<double>(d_y.data[base + static_cast<std::size_t>(c)]) / kNormGuard);
            continue;
        }
        double dot = 0.0;
        for (int c = 0; c < c_n; ++c)
            dot += static_cast<double>(x_pre.data[base + static_cast<std::size_t>(c)]) *
                   static_cast<double>(d_y.data[base + static_cast<std::size_t>(c)]);
        const double inv = 1.0 / norm;
        const double inv3 = inv * inv * inv;
        for (int c = 0; c < c_n; ++c) {
            double xi = static_cast<double>(x_pre.data[base + static_cast<std::size_t>(c)]);
            double gi = static_cast<double>(d_y.data[base + static_cast<std::size_t>(c)]);
            d_x.data[base + static_cast<std::size_t>(c)] = static_cast<T>(gi * inv - xi * dot * inv3);
        }
    }
    return d_x;
}

// ---------------------------------------------------------------------------
// Encoder-decoder specification.
// ---------------------------------------------------------------------------

struct EncoderStageSpec {
    int kernel = 4;
    int stride = 2;
    int channels = 16;
};

struct DecoderStageSpec {
    int kernel = 4;
    int stride = 2;
    int channels = 16;
    int skip_source = -1;  // encoder stage index to concat after this stage, -1 = none
};

struct EncoderSpec {
    int input_channels = 4;
    std::vector<EncoderStageSpec> encoder;
    std::vector<DecoderStageSpec> decoder;
    int final_kernel = 1;
    int feature_channels = 16;
    bool l2_normalize_output = true;

    /// Two strided stages (16, 32 channels), a mirrored decoder with one skip,
    /// and a 1x1x1 head; small enough to train on a laptop CPU in minutes.
    static EncoderSpec desk_default() {
        EncoderSpec s;
        s.encoder = {{4, 2, 16}, {4, 2, 32}};
        s.decoder = {{4, 2, 16, 0}, {4, 2, 16, -1}};
        s.final_kernel = 1;
        s.feature_channels = 16;
        return s;
    }

    int encoder_stage_in_channels(std::size_t i) const {
        return i == 0 ? input_channels : encoder[i - 1].channels;
    }
    int decoder_stage_in_channels(std::size_t j) const {
        if (j == 0) return encoder.empty() ? input_channels : encoder.back().channels;
        return decoder_stage_out_channels(j - 1);
    }
    int decoder_stage_out_channels(std::size_t j) const {
        int c = decoder[j].channels;
        if (decoder[j].skip_source >= 0)
            c += encoder[static_cast<std::size_t>(decoder[j].skip_source)].channels;
        return c;
    }
    int final_in_channels() const {
        if (!decoder.empty()) return decoder_stage_out_channels(decoder.size() - 1);
        return encoder.empty() ? input_channels : encoder.back().channels;
    }
    int stride_product() const {
        int p = 1;
        for (const auto& e : encoder) p *= e.stride;
        return p;
    }

    void validate() const {
        if (input_channels < 1 || feature_channels < 1) throw ShapeMismatch("EncoderSpec: channels must be >= 1");
        int down = 1;
        std::vector<int> enc_scale;
        for (const auto& e : encoder) {
            if (e.stride < 1 || e.channels < 1) throw ShapeMismatch("EncoderSpec: bad encoder stage");
            conv_padding(e.kernel, e.stride);
            down *= e.stride;
            enc_scale.push_back(down);
        }
        int up = down;
        for (const auto& d : decoder) {
            if (d.stride < 1 || d.channels < 1) throw ShapeMismatch("EncoderSpec: bad decoder stage");
            conv_padding(d.kernel, d.stride);
            if (up % d.stride) throw ShapeMismatch("EncoderSpec: decoder overshoots input resolution");
            up /= d.stride;
            if (d.skip_source >= 0) {
                if (static_cast<std::size_t>(d.skip_source) >= encoder.size())
                    throw ShapeMismatch("EncoderSpec: skip source out of range");
                if (enc_scale[static_cast<std::size_t>(d.skip_source)] != up)
                    throw ShapeMismatch("EncoderSpec: skip source resolution mismatch");
            }
        }
        if (up != 1) throw ShapeMismatch("EncoderSpec: decoder must return to input resolution");
        conv_padding(final_kernel, 1);
    }

    bool operator==(const EncoderSpec& o) const {
        if (input_channels != o.input_channels || final_kernel != o.final_kernel ||
            feature_channels != o.feature_channels || l2_normalize_output != o.l2_normalize_output ||
            encoder.size() != o.encoder.size() || decoder.size() != o.decoder.size())
            return false;
        for (std::size_t i = 0; i < encoder.size(); ++i)
            if (encoder[i].kernel != o.encoder[i].kernel || encoder[i].stride != o.encoder[i].stride ||
                encoder[i].channels != o.encoder[i].channels)
                return false;
        for (std::size_t i = 0; i < decoder.size(); ++i)
            if (decoder[i].kernel != o.decoder[i].kernel || decoder[i].stride != o.decoder[i].stride ||
                decoder[i].channels != o.decoder[i].channels || decoder[i].skip_source != o.decoder[i].skip_source)
                return false;
        return true;
    }
};

inline nlohmann::json encoder_spec_to_json(const EncoderSpec& s) {
    nlohmann::json j;
    j["input_channels"] = s.input_channels;
    j["encoder"] = nlohmann::json::array();
    for (const auto& e : s.encoder) j["encoder"].push_back({{"kernel", e.kernel}, {"stride", e.stride}, {"channels", e.channels}});
    j["decoder"] = nlohmann::json::array();
    for (const auto& d : s.decoder)
        j["decoder"].push_back({{"kernel", d.kernel}, {"stride", d.stride}, {"channels", d.channels}, {"skip_source", d.skip_source}});
    j["final_kernel"] = s.final_kernel;
    j["feature_channels"] = s.feature_channels;
    j["l2_normalize_output"] = s.l2_normalize_output;
    return j;
}

inline EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
    EncoderSpec s;
    s.input_channels = j.at("input_channels");
    for (const auto& e : j.at("encoder"))
        s.encoder.push_back({e.at("kernel"), e.at("stride"), e.at("channels")});
    for (const auto& d : j.at("decoder"))
        s.decoder.push_back({d.at("kernel"), d.at("stride"), d.at("channels"), d.at("skip_source")});
    s.final_kernel = j.at("final_kernel");
    s.feature_channels = j.at("feature_channels");
    s.l2_normalize_output = j.at("l2_normalize_output");
    return s;
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
    TensorND<T> w;  // (K, K, K, C_in, C_out)
    TensorND<T> b;  // (C_out)
};

template <typename T>
struct EncoderParamsT {
    EncoderSpec spec;
    std::vector<ConvParams<T>> enc;
    std::vector<ConvParams<T>> dec;
    ConvParams<T> head;

    /// Flat view in declaration order (the checkpoint layout).
    std::vector<TensorND<T>*> tensors() {
        std::vector<TensorND<T>*> out;
        for (auto& p : enc) {
            out.push_back(&p.w);
            out.push_back(&p.b);
        }
        for (auto& p : dec) {
            out.push_back(&p.w);
            out.push_back(&p.b);
        }
        out.push_back(&head.w);
        out.push_back(&head.b);
        return out;
    }
    std::vector<const TensorND<T>*> tensors() const {
        std::vector<const TensorND<T>*> out;
        for (const auto& p : enc) {
            out.push_back(&p.w);
            out.push_back(&p.b);
        }
        for (const auto& p : dec) {
            out.push_back(&p.w);
            out.push_back(&p.b);
        }
        out.push_back(&head.w);
        out.push_back(&head.b);
        return out;
    }
};

using EncoderParams = EncoderParamsT<float>;

template <typename T>
EncoderParamsT<T> zero_encoder_params(const EncoderSpec& spec) {
    spec.validate();
    EncoderParamsT<T> p;
    p.spec = spec;
    for (std::size_t i = 0; i < spec.encoder.size(); ++i) {
        const auto& e = spec.encoder[i];
        p.enc.push_back({TensorND<T>({e.kernel, e.kernel, e.kernel, spec.encoder_stage_in_channels(i), e.channels}),
                         TensorND<T>({e.channels})});
    }
    for (std::size_t j = 0; j < spec.decoder.size(); ++j) {
        const auto& d = spec.decoder[j];
        p.dec.push_back({TensorND<T>({d.kernel, d.kernel, d.kernel, spec.decoder_stage_in_channels(j), d.channels}),
                         TensorND<T>({d.channels})});
    }
    p.head = {TensorND<T>({spec.final_kernel, spec.final_kernel, spec.final_kernel, spec.final_in_channels(),
                           spec.feature_channels}),
              TensorND<T>({spec.feature_channels})};
    return p;
}

/// Seeded uniform init in +/- sqrt(1 / fan_in); biases zero.
template <typename T>
EncoderParamsT<T> init_encoder_params(const EncoderSpec& spec, std::uint64_t seed) {
    EncoderParamsT<T> p = zero_encoder_params<T>(spec);
    Rng rng(seed);
    auto fill = [&](TensorND<T>& w) {
        const int fan_in = w.shape[0] * w.shape[1] * w.shape[2] * w.shape[3];
        const double bound = std::sqrt(1.0 / fan_in);
        for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (auto& cp : p.enc) fill(cp.w);
    for (auto& cp : p.dec) fill(cp.w);
    fill(p.head.w);
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderTape {
    TensorND<T> input;
    std::vector<TensorND<T>> enc_pre, enc_post;
    std::vector<TensorND<T>> dec_pre, dec_post;  // post = after activation, before concat
    TensorND<T> head_pre;                        // before L2 normalization
    TensorND<T> output;
};

template <typename T>
EncoderTape<T> encoder_forward(const EncoderParamsT<T>& params, const TensorND<T>& input, int threads = 1) {
    const EncoderSpec& spec = params.spec;
    if (input.shape.size() != 4 || input.shape[3] != spec.input_channels)
        throw ShapeMismatch("encoder_forward: bad input shape");
    const int sp = spec.stride_product();
    if (input.shape[0] % sp || input.shape[1] % sp || input.shape[2] % sp)
        throw ShapeMismatch("encoder_forward: input dims not divisible by total stride");

    EncoderTape<T> tape;
    tape.input = input;
    const TensorND<T>* cur = &tape.input;
    for (std::size_t i = 0; i < spec.encoder.size(); ++i) {
        tape.enc_pre.push_back(conv3d_forward(*cur, params.enc[i].w, params.enc[i].b, spec.encoder[i].stride, threads));
        tape.enc_post.push_back(leaky_relu_forward(tape.enc_pre.back()));
        cur = &tape.enc_post.back();
    }
    TensorND<T> flow = *cur;
    for (std::size_t j = 0; j < spec.decoder.size(); ++j) {
        tape.dec_pre.push_back(tconv3d_forward(flow, params.dec[j].w, params.dec[j].b, spec.decoder[j].stride, threads));
        tape.dec_post.push_back(leaky_relu_forward(tape.dec_pre.back()));
        if (spec.decoder[j].skip_source >= 0)
            flow = concat_channels(tape.dec_post.back(), tape.enc_post[static_cast<std::size_t>(spec.decoder[j].skip_source)]);
        else
            flow = tape.dec_post.back();
    }
    tape.head_pre = conv3d_forward(flow, params.head.w, params.head.b, 1, threads);
    tape.output = spec.l2_normalize_output ? l2_normalize_forward(tape.head_pre) : tape.head_pre;
    return tape;
}

template <typename T>
struct EncoderGrads {
    EncoderParamsT<T> params;  // same structure, gradient values
    TensorND<T> d_input;
};

template <typename T>
EncoderGrads<T> encoder_backward(const EncoderParamsT<T>& params, const EncoderTape<T>& tape,
                                 const TensorND<T>& d_output, int threads = 1) {
    const EncoderSpec& spec = params.spec;
    if (!d_output.same_shape(tape.output)) throw ShapeMismatch("encoder_backward: gradient shape mismatch");

    EncoderGrads<T> g;
    g.params = zero_encoder_params<T>(spec);

    TensorND<T> d_head_pre =
        spec.l2_normalize_output ? l2_normalize_backward(tape.head_pre, d_output) : d_output;

    // reconstruct the head's input (decoder output + optional concat)
    auto decoder_output = [&](std::size_t j) -> TensorND<T> {
        if (spec.decoder[j].skip_source >= 0)
            return concat_channels(tape.dec_post[j], tape.enc_post[static_cast<std::size_t>(spec.decoder[j].skip_source)]);
        return tape.dec_post[j];
    };
    TensorND<T> head_in = spec.decoder.empty()
                              ? (spec.encoder.empty() ? tape.input : tape.enc_post.back())
                              : decoder_output(spec.decoder.size() - 1);

    conv3d_backward_params(head_in, d_head_pre, spec.final_kernel, 1, g.params.head.w, g.params.head.b, threads);
    TensorND<T> d_flow = conv3d_backward_input(d_head_pre, params.head.w, head_in.shape, 1, threads);

    // Extra gradient flowing into encoder activations via skip connections.
    std::vector<TensorND<T>> d_enc_post(spec.encoder.size());
    for (std::size_t i = 0; i < spec.encoder.size(); ++i) d_enc_post[i] = tape.enc_post[i].zeros_like();

    for (std::size_t jj = spec.decoder.size(); jj-- > 0;) {
        TensorND<T> d_post;
        if (spec.decoder[jj].skip_source >= 0) {
            d_post = tape.dec_post[jj].zeros_like();
            TensorND<T> d_skip = tape.enc_post[static_cast<std::size_t>(spec.decoder[jj].skip_source)].zeros_like();
            split_channels(d_flow, d_post, d_skip);
            auto& acc = d_enc_post[static_cast<std::size_t>(spec.decoder[jj].skip_source)];
            for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += d_skip.data[i];
        } else {
            d_post = d_flow;
        }
        TensorND<T> d_pre = leaky_relu_backward(tape.dec_pre[jj], d_post);
        const TensorND<T>& stage_in =
            jj == 0 ? (spec.encoder.empty() ? tape.input : tape.enc_post.back()) : decoder_output(jj - 1);
        tconv3d_backward_params(stage_in, d_pre, spec.decoder[jj].kernel, spec.decoder[jj].stride,
                                g.params.dec[jj].w, g.params.dec[jj].b, threads);
        d_flow = tconv3d_backward_input(d_pre, params.dec[jj].w, stage_in.shape, spec.decoder[jj].stride, threads);
    }

    for (std::size_t ii = spec.encoder.size(); ii-- > 0;) {
        // skip connections contribute extra gradient on top of the main path
        const auto& extra = d_enc_post[ii];
        for (std::size_t i = 0; i < d_flow.data.size(); ++i) d_flow.data[i] += extra.data[i];
        TensorND<T> d_pre = leaky_relu_backward(tape.enc_pre[ii], d_flow);
        const TensorND<T>& stage_in = ii == 0 ? tape.input : tape.enc_post[ii - 1];
        conv3d_backward_params(stage_in, d_pre, spec.encoder[ii].kernel, spec.encoder[ii].stride,
                               g.params.enc[ii].w, g.params.enc[ii].b, threads);
        d_flow = conv3d_backward_input(d_pre, params.enc[ii].w, stage_in.shape, spec.encoder[ii].stride, threads);
    }
    g.d_input = d_flow;
    return g;
}

// ---------------------------------------------------------------------------
// VoxelGrid front end.
// ---------------------------------------------------------------------------

template <typename T>
TensorND<T> grid_to_tensor(const VoxelGrid& g) {
    TensorND<T> t({g.spec.w, g.spec.h, g.spec.d, g.channels});
    for (std::size_t i = 0; i < g.data.size(); ++i) t.data[i] = static_cast<T>(g.data[i]);
    return t;
}

template <typename T>
VoxelGrid tensor_to_grid(const GridSpec& spec, const TensorND<T>& t) {
    VoxelGrid g(spec, t.shape[3]);
    for (std::size_t i = 0; i < t.data.size(); ++i) g.data[i] = static_cast<float>(t.data[i]);
    return g;
}

/// Encodes a 4-channel input grid into a feature map over the same cuboid.
inline VoxelGrid forward_encoder(const EncoderParams& params, const VoxelGrid& input, int threads = 1) {
    if (input.channels != params.spec.input_channels)
        throw ShapeMismatch("forward_encoder: input channel mismatch");
    EncoderTape<float> tape = encoder_forward(params, grid_to_tensor<float>(input), threads);
    return tensor_to_grid(input.spec, tape.output);
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then each parameter tensor as raw
// little-endian f32 in declaration order.
// ---------------------------------------------------------------------------

inline void save_encoder_checkpoint(const std::string& path, const EncoderParams& params,
                                    std::int64_t step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    nlohmann::json header;
    header["kind"] = "encoder";
    header["spec"] = encoder_spec_to_json(params.spec);
    header["step"] = step;
    os << header.dump() << "\n";
    for (const TensorND<float>* t : params.tensors()) write_f32_buffer(os, t->data.data(), t->numel());
    if (!os) throw IoError("write failed: " + path);
}

struct EncoderCheckpoint {
    EncoderParams params;
    std::int64_t step = 0;
};

inline EncoderCheckpoint load_encoder_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw CorruptCheckpoint("missing header: " + path);
    nlohmann::json header;
    EncoderCheckpoint out;
    try {
        header = nlohmann::json::parse(line);
        if (header.at("kind") != "encoder") throw CorruptCheckpoint("not an encoder checkpoint: " + path);
        out.params = zero_encoder_params<float>(encoder_spec_from_json(header.at("spec")));
        out.step = header.at("step");
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint("bad header in " + path + ": " + e.what());
    }
    try {
        for (TensorND<float>* t : out.params.tensors()) read_f32_buffer(is, t->data.data(), t->numel());
    } catch (const IoError&) {
        throw CorruptCheckpoint("truncated parameter data: " + path);
    }
    return out;
}

}  // namespace voxtrack
