#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "voxtrack/common.hpp"

namespace voxtrack {

/// Dense row-major tensor. Activations are (X, Y, Z, C); convolution weights
/// are (KX, KY, KZ, C_in, C_out).
template <typename T>
struct TensorND {
    std::vector<int> shape;
    std::vector<T> data;

    TensorND() = default;
    explicit TensorND(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int e : s) n *= static_cast<std::size_t>(e);
        return n;
    }
    std::size_t numel() const { return data.size(); }

    TensorND<T> zeros_like() const { return TensorND<T>(shape); }

    bool same_shape(const TensorND<T>& o) const { return shape == o.shape; }
};

template <typename T>
TensorND<T> concat_channels(const TensorND<T>& a, const TensorND<T>& b) {
    if (a.shape.size() != 4 || b.shape.size() != 4 || a.shape[0] != b.shape[0] ||
        a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
        throw ShapeMismatch("concat_channels: spatial dims differ");
    const int ca = a.shape[3], cb = b.shape[3];
    TensorND<T> out({a.shape[0], a.shape[1], a.shape[2], ca + cb});
    const std::size_t voxels = out.numel() / static_cast<std::size_t>(ca + cb);
    for (std::size_t v = 0; v < voxels; ++v) {
        for (int c = 0; c < ca; ++c)
            out.data[v * static_cast<std::size_t>(ca + cb) + static_cast<std::size_t>(c)] =
                a.data[v * static_cast<std::size_t>(ca) + static_cast<std::size_t>(c)];
        for (int c = 0; c < cb; ++c)
            out.data[v * static_cast<std::size_t>(ca + cb) + static_cast<std::size_t>(ca + c)] =
                b.data[v * static_cast<std::size_t>(cb) + static_cast<std::size_t>(c)];
    }
    return out;
}

/// Inverse of concat_channels for gradients.
template <typename T>
void split_channels(const TensorND<T>& cat, TensorND<T>& a, TensorND<T>& b) {
    const int ca = a.shape[3], cb = b.shape[3];
    if (cat.shape[3] != ca + cb) throw ShapeMismatch("split_channels: channel count mismatch");
    const std::size_t voxels = cat.numel() / static_cast<std::size_t>(ca + cb);
    for (std::size_t v = 0; v < voxels; ++v) {
        for (int c = 0; c < ca; ++c)
            a.data[v * static_cast<std::size_t>(ca) + static_cast<std::size_t>(c)] =
                cat.data[v * static_cast<std::size_t>(ca + cb) + static_cast<std::size_t>(c)];
        for (int c = 0; c < cb; ++c)
            b.data[v * static_cast<std::size_t>(cb) + static_cast<std::size_t>(c)] =
                cat.data[v * static_cast<std::size_t>(ca + cb) + static_cast<std::size_t>(ca + c)];
    }
}

}  // namespace voxtrack
