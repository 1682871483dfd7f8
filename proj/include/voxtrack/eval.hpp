#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/box.hpp"
#include "voxtrack/common.hpp"
#include "voxtrack/image.hpp"
#include "voxtrack/linalg.hpp"
#include "voxtrack/track.hpp"

namespace voxtrack {

// ---------------------------------------------------------------------------
// Oriented 3D IOU for yaw boxes: bird's-eye polygon intersection (Sutherland-
// Hodgman clip of one footprint against the other) times vertical overlap.
// ---------------------------------------------------------------------------

namespace detail {

using Poly2 = std::vector<std::array<double, 2>>;

inline double polygon_area(const Poly2& p) {
    double a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& q = p[i];
        const auto& r = p[(i + 1) % p.size()];
        a += q[0] * r[1] - r[0] * q[1];
    }
    return a / 2.0;
}

/// Clips a polygon by the half-plane left of (a -> b).
inline Poly2 clip_half_plane(const Poly2& poly, const std::array<double, 2>& a,
                             const std::array<double, 2>& b) {
    Poly2 out;
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    auto side = [&](const std::array<double, 2>& p) { return ex * (p[1] - a[1]) - ey * (p[0] - a[0]); };
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& cur = poly[i];
        const auto& nxt = poly[(i + 1) % n];
        const double sc = side(cur), sn = side(nxt);
        if (sc >= 0.0) out.push_back(cur);
        if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
            const double t = sc / (sc - sn);
            out.push_back({cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])});
        }
    }
    return out;
}

inline double footprint_intersection_area(const Box3D& a, const Box3D& b) {
    auto fa = a.footprint();
    auto fb = b.footprint();
    Poly2 poly(fa.begin(), fa.end());
    for (int i = 0; i < 4 && !poly.empty(); ++i)
        poly = clip_half_plane(poly, fb[static_cast<std::size_t>(i)], fb[static_cast<std::size_t>((i + 1) % 4)]);
    if (poly.size() < 3) return 0.0;
    return std::abs(polygon_area(poly));
}

}  // namespace detail

inline double iou_3d(const Box3D& a, const Box3D& b) {
    const double y_lo = std::max(a.center.y - a.dims.y / 2.0, b.center.y - b.dims.y / 2.0);
    const double y_hi = std::min(a.center.y + a.dims.y / 2.0, b.center.y + b.dims.y / 2.0);
    const double overlap_y = std::max(0.0, y_hi - y_lo);
    const double inter = overlap_y > 0.0 ? detail::footprint_intersection_area(a, b) * overlap_y : 0.0;
    const double uni = a.volume() + b.volume() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------
// IOU over time.
// ---------------------------------------------------------------------------

struct IouCurve {
    std::vector<double> mean_iou;  // index = frame
    std::vector<int> counts;
};

inline IouCurve iou_curve(const std::vector<std::vector<Box3D>>& trajectories,
                          const std::vector<std::vector<Box3D>>& ground_truths) {
    if (trajectories.size() != ground_truths.size())
        throw LengthMismatch("iou_curve: trajectory count mismatch");
    IouCurve out;
    for (std::size_t s = 0; s < trajectories.size(); ++s) {
        const auto& pred = trajectories[s];
        const auto& gt = ground_truths[s];
        if (pred.size() != gt.size()) throw LengthMismatch("iou_curve: frame count mismatch");
        if (pred.size() > out.mean_iou.size()) {
            out.mean_iou.resize(pred.size(), 0.0);
            out.counts.resize(pred.size(), 0);
        }
        for (std::size_t f = 0; f < pred.size(); ++f) {
            out.mean_iou[f] += iou_3d(pred[f], gt[f]);
            out.counts[f] += 1;
        }
    }
    for (std::size_t f = 0; f < out.mean_iou.size(); ++f)
        if (out.counts[f] > 0) out.mean_iou[f] /= out.counts[f];
    return out;
}

// ---------------------------------------------------------------------------
// Bird's-eye PCA visualization: vertical mean of the feature grid, features
// compressed to 3 channels by PCA, each channel min-max normalized.
// ---------------------------------------------------------------------------

struct BirdseyeImage {
    ImageRgb image;
    bool used_fallback = false;  // covariance rank < 3: first channels shown instead
};

inline BirdseyeImage birdseye_pca_image(const VoxelGrid& map) {
    if (map.channels < 3) throw ShapeMismatch("birdseye_pca_image: need at least 3 channels");
    const int w = map.spec.w, h = map.spec.h, d = map.spec.d;
    const std::size_t c_n = static_cast<std::size_t>(map.channels);
    const std::size_t cells_n = static_cast<std::size_t>(w) * d;

    std::vector<double> cells(cells_n * c_n, 0.0);
    for (int x = 0; x < w; ++x)
        for (int z = 0; z < d; ++z) {
            const std::size_t cell = static_cast<std::size_t>(x) * d + static_cast<std::size_t>(z);
            for (int y = 0; y < h; ++y) {
                const std::size_t base = map.offset(x, y, z);
                for (std::size_t c = 0; c < c_n; ++c) cells[cell * c_n + c] += map.data[base + c];
            }
            for (std::size_t c = 0; c < c_n; ++c) cells[cell * c_n + c] /= h;
        }

    std::vector<double> mean(c_n, 0.0);
    for (std::size_t cell = 0; cell < cells_n; ++cell)
        for (std::size_t c = 0; c < c_n; ++c) mean[c] += cells[cell * c_n + c];
    for (std::size_t c = 0; c < c_n; ++c) mean[c] /= static_cast<double>(cells_n);

    std::vector<double> cov(c_n * c_n, 0.0);
    for (std::size_t cell = 0; cell < cells_n; ++cell)
        for (std::size_t i = 0; i < c_n; ++i) {
            const double di = cells[cell * c_n + i] - mean[i];
            for (std::size_t j = 0; j < c_n; ++j)
                cov[i * c_n + j] += di * (cells[cell * c_n + j] - mean[j]);
        }
    for (auto& v : cov) v /= static_cast<double>(cells_n);

    BirdseyeImage out;
    out.image = ImageRgb(w, d);
    double trace = 0.0;
    for (std::size_t c = 0; c < c_n; ++c) trace += cov[c * c_n + c];

    std::vector<double> projected(cells_n * 3, 0.0);
    SymmetricEigen eig;
    bool degenerate = trace < 1e-18;
    if (!degenerate) {
        eig = eigen_symmetric(cov, c_n);
        degenerate = eig.values[2] <= 1e-12 * trace;
    }
    if (degenerate) {
        out.used_fallback = true;
        for (std::size_t cell = 0; cell < cells_n; ++cell)
            for (int k = 0; k < 3; ++k)
                projected[cell * 3 + static_cast<std::size_t>(k)] = cells[cell * c_n + static_cast<std::size_t>(k)];
    } else {
        for (std::size_t cell = 0; cell < cells_n; ++cell)
            for (int k = 0; k < 3; ++k) {
                double s = 0.0;
                for (std::size_t c = 0; c < c_n; ++c)
                    s += (cells[cell * c_n + c] - mean[c]) * eig.vectors[c + c_n * static_cast<std::size_t>(k)];
                projected[cell * 3 + static_cast<std::size_t>(k)] = s;
            }
    }

    for (int k = 0; k < 3; ++k) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t cell = 0; cell < cells_n; ++cell) {
            const double v = projected[cell * 3 + static_cast<std::size_t>(k)];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = hi - lo;
        for (int x = 0; x < w; ++x)
            for (int z = 0; z < d; ++z) {
                const std::size_t cell = static_cast<std::size_t>(x) * d + static_cast<std::size_t>(z);
                const double v = projected[cell * 3 + static_cast<std::size_t>(k)];
                out.image.at(x, z, k) = range > 0.0 ? static_cast<float>((v - lo) / range) : 0.5f;
            }
    }
    return out;
}

/// Bird's-eye occupancy (max over the vertical axis) as a grayscale image.
inline ImageRgb birdseye_occupancy_image(const VoxelGrid& input, int occupancy_channel = 3) {
    ImageRgb img(input.spec.w, input.spec.d);
    for (int x = 0; x < input.spec.w; ++x)
        for (int z = 0; z < input.spec.d; ++z) {
            float m = 0.0f;
            for (int y = 0; y < input.spec.h; ++y)
                m = std::max(m, input.at(x, y, z, occupancy_channel));
            for (int c = 0; c < 3; ++c) img.at(x, z, c) = m;
        }
    return img;
}

// ---------------------------------------------------------------------------
// Benchmark: methods x episodes -> IOU@N tables with static/moving splits.
// ---------------------------------------------------------------------------

struct BenchmarkConfig {
    TrackerConfig tracker;
    GridConfig grids;
    double static_split_threshold = 1.0;  // meters of total ground-truth path length
    bool run_search_ablations = true;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct ObjectResult {
    std::size_t episode = 0;
    std::size_t object = 0;
    bool is_static = true;
    std::vector<double> iou_per_frame;
};

struct BenchmarkReport {
    std::vector<std::string> method_names;
    std::map<std::string, std::vector<ObjectResult>> results;
    int frame_count = 0;

    double mean_iou_at(const std::string& method, int frame, int split = 0) const {
        // split: 0 = all, 1 = static only, 2 = moving only
        const auto it = results.find(method);
        if (it == results.end()) throw DataMissing("benchmark: unknown method " + method);
        double sum = 0.0;
        int count = 0;
        for (const auto& r : it->second) {
            if (split == 1 && !r.is_static) continue;
            if (split == 2 && r.is_static) continue;
            if (frame >= static_cast<int>(r.iou_per_frame.size())) continue;
            sum += r.iou_per_frame[static_cast<std::size_t>(frame)];
            ++count;
        }
        return count > 0 ? sum / count : 0.0;
    }
};

namespace detail {

inline double trajectory_path_length(const std::vector<Box3D>& boxes) {
    double total = 0.0;
    for (std::size_t i = 1; i < boxes.size(); ++i) total += (boxes[i].center - boxes[i - 1].center).norm();
    return total;
}

}  // namespace detail

/// Runs every method on every ground-truth object of every episode. Methods:
/// trained / zero_motion / random always; no_search and no_search_half when
/// search ablations are on; any extra named encoders (e.g. finetuned
/// variants) tracked with the standard search-region pipeline.
inline BenchmarkReport run_benchmark(const EncoderParams& trained, const EncoderParams& random_encoder,
                                     const std::vector<Episode>& episodes, const BenchmarkConfig& cfg,
                                     const std::map<std::string, const EncoderParams*>& extra_encoders = {}) {
    BenchmarkReport report;
    report.method_names = {"trained", "zero_motion", "random"};
    if (cfg.run_search_ablations) {
        report.method_names.push_back("no_search");
        report.method_names.push_back("no_search_half");
    }
    for (const auto& [name, enc] : extra_encoders) report.method_names.push_back(name);

    // Half resolution halves the horizontal axes; the vertical axis is
    // already at the encoder's minimum stride multiple at desk scale.
    GridConfig gc_half = cfg.grids;
    gc_half.scene_w /= 2;
    gc_half.scene_d /= 2;
    gc_half.search_w /= 2;
    gc_half.search_d /= 2;

    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const Episode& ep = episodes[e];
        report.frame_count = std::max(report.frame_count, ep.scene.frame_count);
        const std::size_t n_objects = ep.mover_boxes.empty() ? 0 : ep.mover_boxes[0].size();

        // full-scene maps shared across this episode's objects
        std::vector<VoxelGrid> scene_maps_full, scene_maps_half;
        if (cfg.run_search_ablations && n_objects > 0) {
            for (int f = 0; f < ep.scene.frame_count; ++f) {
                scene_maps_full.push_back(forward_encoder(
                    trained, voxelize_frame(ep, f, cfg.grids.scene_spec()), cfg.threads));
                scene_maps_half.push_back(forward_encoder(
                    trained, voxelize_frame(ep, f, gc_half.scene_spec()), cfg.threads));
            }
        }

        for (std::size_t o = 0; o < n_objects; ++o) {
            std::vector<Box3D> gt;
            for (int f = 0; f < ep.scene.frame_count; ++f)
                gt.push_back(ep.mover_boxes[static_cast<std::size_t>(f)][o]);
            const bool is_static = detail::trajectory_path_length(gt) < cfg.static_split_threshold;

            TrackerConfig tc = cfg.tracker;
            tc.seed = mix_seed(cfg.seed, (e << 8) ^ o);
            tc.threads = cfg.threads;

            auto record = [&](const std::string& method, const std::vector<Box3D>& pred) {
                ObjectResult r;
                r.episode = e;
                r.object = o;
                r.is_static = is_static;
                for (std::size_t f = 0; f < gt.size(); ++f)
                    r.iou_per_frame.push_back(iou_3d(pred[f], gt[f]));
                report.results[method].push_back(std::move(r));
            };
            auto boxes_of = [&](auto&& run) -> std::vector<Box3D> {
                // an object invisible at frame 0 cannot seed a template; the
                // tracker then degenerates to its zero-motion fallback
                try {
                    TrackState st = run();
                    std::vector<Box3D> out;
                    for (const auto& h : st.history) out.push_back(h.box);
                    return out;
                } catch (const EmptyTemplate&) {
                    return std::vector<Box3D>(gt.size(), gt[0]);
                }
            };

            record("trained", boxes_of([&] { return track_sequence(ep, gt[0], trained, cfg.grids, tc); }));
            record("zero_motion", std::vector<Box3D>(gt.size(), gt[0]));
            record("random",
                   boxes_of([&] { return track_sequence(ep, gt[0], random_encoder, cfg.grids, tc); }));
            if (cfg.run_search_ablations) {
                record("no_search", boxes_of([&] {
                           return track_sequence_global(ep, gt[0], trained, cfg.grids, tc, &scene_maps_full);
                       }));
                record("no_search_half", boxes_of([&] {
                           return track_sequence_global(ep, gt[0], trained, gc_half, tc, &scene_maps_half);
                       }));
            }
            for (const auto& [name, enc] : extra_encoders) {
                const EncoderParams* enc_ptr = enc;
                record(name, boxes_of([&] { return track_sequence(ep, gt[0], *enc_ptr, cfg.grids, tc); }));
            }
        }
    }
    return report;
}

inline void write_benchmark_csv(const std::string& path, const BenchmarkReport& report,
                                const std::string& stamp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "# " << stamp << "\n";
    os << "method,frame,mean_iou,split\n";
    const char* split_names[3] = {"all", "static", "moving"};
    char buf[160];
    for (const auto& name : report.method_names) {
        for (int split = 0; split < 3; ++split) {
            for (int f = 0; f < report.frame_count; ++f) {
                std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%s\n", name.c_str(), f,
                              report.mean_iou_at(name, f, split), split_names[split]);
                os << buf;
            }
        }
    }
}

inline nlohmann::json benchmark_summary_json(const BenchmarkReport& report) {
    nlohmann::json j;
    const char* split_names[3] = {"all", "static", "moving"};
    for (const auto& name : report.method_names) {
        nlohmann::json m;
        for (int split = 0; split < 3; ++split) {
            nlohmann::json s;
            for (int f : {2, 4, 6, 8}) {
                if (f < report.frame_count)
                    s["iou_at_" + std::to_string(f)] = report.mean_iou_at(name, f, split);
            }
            m[split_names[split]] = s;
        }
        int n_static = 0, n_moving = 0;
        const auto it = report.results.find(name);
        if (it != report.results.end())
            for (const auto& r : it->second) (r.is_static ? n_static : n_moving) += 1;
        m["objects_static"] = n_static;
        m["objects_moving"] = n_moving;
        j[name] = m;
    }
    return j;
}

}  // namespace voxtrack
