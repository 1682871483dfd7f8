#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "voxtrack/common.hpp"

namespace voxtrack {

/// Row-major RGB image, values in [0, 1]. Index: (v * width + u) * 3 + c.
struct ImageRgb {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    ImageRgb() = default;
    ImageRgb(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

    float& at(int u, int v, int c) { return data[(static_cast<std::size_t>(v) * width + u) * 3 + c]; }
    float at(int u, int v, int c) const { return data[(static_cast<std::size_t>(v) * width + u) * 3 + c]; }
};

/// Row-major depth map in meters; 0 marks an invalid / no-return pixel.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    DepthMap() = default;
    DepthMap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0f) {}

    float& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
    float at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
};

/// Binary PPM (P6). Deterministic: same pixels, same bytes.
inline void write_ppm(const std::string& path, const ImageRgb& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int v = 0; v < img.height; ++v) {
        for (int u = 0; u < img.width; ++u) {
            for (int c = 0; c < 3; ++c) {
                float x = img.at(u, v, c);
                x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
                row[static_cast<std::size_t>(u) * 3 + c] =
                    static_cast<unsigned char>(x * 255.0f + 0.5f);
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace voxtrack
