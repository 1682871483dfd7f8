#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/learn.hpp"

namespace voxtrack {

struct TrainConfig {
    double temperature = 0.07;
    std::size_t dictionary_capacity = 4096;
    std::size_t negatives_per_batch = 512;
    std::size_t push_per_iteration = 256;
    double momentum = 0.999;
    std::size_t pairs_per_batch = 512;
    double learning_rate = 1e-4;
    int stage1_iterations = 2000;
    int stage2_iterations = 300;
    int stage3_iterations = 400;
    double reliability_threshold = 0.9;
    int reliability_hidden = 32;
    bool include_positive_in_denominator = true;
    std::uint64_t seed = 0;
    int threads = 1;
    int metrics_every = 100;
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"temperature", c.temperature},
            {"dictionary_capacity", c.dictionary_capacity},
            {"negatives_per_batch", c.negatives_per_batch},
            {"push_per_iteration", c.push_per_iteration},
            {"momentum", c.momentum},
            {"pairs_per_batch", c.pairs_per_batch},
            {"learning_rate", c.learning_rate},
            {"stage1_iterations", c.stage1_iterations},
            {"stage2_iterations", c.stage2_iterations},
            {"stage3_iterations", c.stage3_iterations},
            {"reliability_threshold", c.reliability_threshold},
            {"reliability_hidden", c.reliability_hidden},
            {"include_positive_in_denominator", c.include_positive_in_denominator},
            {"seed", c.seed},
            {"threads", c.threads},
            {"metrics_every", c.metrics_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.temperature = j.value("temperature", c.temperature);
    c.dictionary_capacity = j.value("dictionary_capacity", c.dictionary_capacity);
    c.negatives_per_batch = j.value("negatives_per_batch", c.negatives_per_batch);
    c.push_per_iteration = j.value("push_per_iteration", c.push_per_iteration);
    c.momentum = j.value("momentum", c.momentum);
    c.pairs_per_batch = j.value("pairs_per_batch", c.pairs_per_batch);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.stage1_iterations = j.value("stage1_iterations", c.stage1_iterations);
    c.stage2_iterations = j.value("stage2_iterations", c.stage2_iterations);
    c.stage3_iterations = j.value("stage3_iterations", c.stage3_iterations);
    c.reliability_threshold = j.value("reliability_threshold", c.reliability_threshold);
    c.reliability_hidden = j.value("reliability_hidden", c.reliability_hidden);
    c.include_positive_in_denominator = j.value("include_positive_in_denominator", c.include_positive_in_denominator);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.metrics_every = j.value("metrics_every", c.metrics_every);
    return c;
}

struct MetricsRow {
    int iteration = 0;
    double loss = 0.0;
    double retrieval_top1 = -1.0;  // -1 when not evaluated at this iteration
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              const std::string& stamp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "# " << stamp << "\n";
    os << "iteration,loss,retrieval_top1\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", r.iteration, r.loss, r.retrieval_top1);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// View helpers.
// ---------------------------------------------------------------------------

struct ViewRef {
    int frame = 0;
    int cam = 0;
};

inline VoxelGrid voxelize_view(const Episode& ep, const ViewRef& v, const GridSpec& spec) {
    const auto& cam = ep.scene.rig[static_cast<std::size_t>(v.frame)][static_cast<std::size_t>(v.cam)];
    const auto& view = ep.frames[static_cast<std::size_t>(v.frame)][static_cast<std::size_t>(v.cam)];
    return voxelize_rgbd(view.rgb, view.depth, cam.intrinsics, cam.pose, spec);
}

/// Fuses every camera of one frame into a single input grid.
inline VoxelGrid voxelize_frame(const Episode& ep, int frame, const GridSpec& spec) {
    std::vector<VoxelGrid> grids;
    const auto& rig = ep.scene.rig[static_cast<std::size_t>(frame)];
    for (std::size_t c = 0; c < rig.size(); ++c)
        grids.push_back(voxelize_view(ep, {frame, static_cast<int>(c)}, spec));
    return fuse_grids(grids);
}

namespace detail {

inline std::pair<ViewRef, ViewRef> pick_view_pair(const Episode& ep, Rng& rng, bool distinct_frames) {
    const int frames = ep.scene.frame_count;
    const int cams = static_cast<int>(ep.scene.rig[0].size());
    const int total = frames * cams;
    for (int attempt = 0; attempt < 64; ++attempt) {
        int a = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(total)));
        int b = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(total)));
        ViewRef va{a / cams, a % cams};
        ViewRef vb{b / cams, b % cams};
        if (a == b) continue;
        if (distinct_frames && va.frame == vb.frame) continue;
        return {va, vb};
    }
    return {{0, 0}, {frames > 1 ? 1 : 0, cams > 1 ? 1 : 0}};
}

/// Training crops reuse the search-region geometry, centered at a random spot
/// inside the scene so content lands at arbitrary offsets.
inline GridSpec random_crop_spec(const GridConfig& gc, Rng& rng) {
    const double rx = std::max(0.0, (gc.scene_extent.x - gc.search_extent.x) / 2.0);
    const double rz = std::max(0.0, (gc.scene_extent.z - gc.search_extent.z) / 2.0);
    const double cy = gc.scene_center.y - gc.scene_extent.y / 2.0 + gc.search_extent.y / 2.0;
    Vec3 center{rng.uniform(-rx, rx), cy, rng.uniform(-rz, rz)};
    return gc.search_spec(center);
}

inline std::vector<std::size_t> occupied_voxels(const VoxelGrid& g) {
    std::vector<std::size_t> out;
    const std::size_t n = g.voxel_count();
    for (std::size_t v = 0; v < n; ++v)
        if (g.data[v * 4 + kOccupancyChannel] > 0.5f) out.push_back(v);
    return out;
}

inline std::size_t flat_index(const VoxelGrid& g, const VoxelIndex& v) {
    return (static_cast<std::size_t>(v.x) * g.spec.h + static_cast<std::size_t>(v.y)) * g.spec.d +
           static_cast<std::size_t>(v.z);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Retrieval metric: does the query feature pick its true correspondent out of
// `n_candidates` occupied voxels of the other view's map?
// ---------------------------------------------------------------------------

/// Correspondence retrieval: a probe succeeds when the query feature's best
/// match over a `n_candidates`-voxel region of the other view's map is the
/// true correspondent. With the desk-scale search resolution a region holds
/// exactly 1024 voxels, so this is the hard-argmax version of the tracker's
/// correspondence step.
inline double retrieval_top1(const EncoderParams& params, const std::vector<Episode>& episodes,
                             const GridConfig& gc, int n_probes, int n_candidates, std::uint64_t seed,
                             int threads = 1) {
    if (episodes.empty()) throw DataMissing("retrieval_top1: no episodes");
    Rng rng(mix_seed(seed, 0x7e7));
    int hits = 0, done = 0;
    int guard = 0;
    while (done < n_probes && guard++ < 256) {
        const Episode& ep = episodes[rng.uniform_index(episodes.size())];
        auto [va, vb] = detail::pick_view_pair(ep, rng, false);
        GridSpec crop = detail::random_crop_spec(gc, rng);
        if (static_cast<std::size_t>(crop.w) * crop.h * crop.d < static_cast<std::size_t>(n_candidates))
            throw ShapeMismatch("retrieval_top1: region smaller than the candidate count");
        VoxelGrid in_i = voxelize_view(ep, va, crop);
        VoxelGrid in_j = voxelize_view(ep, vb, crop);
        std::vector<VoxelIndex> both;
        try {
            both = sample_static_correspondences(in_i, in_j, {}, 32, rng);
        } catch (const NoCorrespondences&) {
            continue;
        }
        VoxelGrid map_i = forward_encoder(params, in_i, threads);
        VoxelGrid map_j = forward_encoder(params, in_j, threads);
        const int c_n = map_i.channels;
        const std::size_t n_vox = map_j.voxel_count();

        for (const VoxelIndex& v : both) {
            if (done >= n_probes) break;
            const std::size_t true_flat = detail::flat_index(in_j, v);
            const float* q = &map_i.data[map_i.offset(v.x, v.y, v.z)];
            auto score = [&](std::size_t flat) {
                const float* f = &map_j.data[flat * static_cast<std::size_t>(c_n)];
                double s = 0.0;
                for (int c = 0; c < c_n; ++c) s += static_cast<double>(q[c]) * static_cast<double>(f[c]);
                return s;
            };
            const double true_score = score(true_flat);
            bool beaten = false;
            if (static_cast<std::size_t>(n_candidates) >= n_vox) {
                for (std::size_t cand = 0; cand < n_vox && !beaten; ++cand)
                    if (cand != true_flat && score(cand) >= true_score) beaten = true;
            } else {
                for (int k = 0; k < n_candidates - 1 && !beaten; ++k) {
                    const std::size_t cand = rng.uniform_index(n_vox);
                    if (cand != true_flat && score(cand) >= true_score) beaten = true;
                }
            }
            hits += beaten ? 0 : 1;
            ++done;
        }
    }
    if (done == 0) throw NoCorrespondences("retrieval_top1: no usable probes");
    return static_cast<double>(hits) / static_cast<double>(done);
}

// ---------------------------------------------------------------------------
// Stage 1: contrastive training of the encoder on static episodes.
// ---------------------------------------------------------------------------

struct EncoderTrainState {
    EncoderParams params;
    EncoderParams slow;
    AdamState<float> adam;
    NegativeDictionary dictionary;
    std::vector<MetricsRow> metrics;
    int skipped_batches = 0;
};

namespace detail {

/// One contrastive step on a chosen pair of views over a chosen crop.
/// Returns false (and counts a skip) when no correspondence exists.
inline bool contrastive_step(EncoderTrainState& st, const Episode& ep, const ViewRef& va,
                             const ViewRef& vb, const GridSpec& crop, const TrainConfig& cfg,
                             Rng& rng, bool use_selection, const ReliabilityParams* selector,
                             double* loss_out) {
    VoxelGrid in_i = voxelize_view(ep, va, crop);
    VoxelGrid in_j = voxelize_view(ep, vb, crop);

    TensorND<float> ti = grid_to_tensor<float>(in_i);
    TensorND<float> tj = grid_to_tensor<float>(in_j);
    EncoderTape<float> tape_i = encoder_forward(st.params, ti, cfg.threads);
    EncoderTape<float> tape_j = encoder_forward(st.params, tj, cfg.threads);
    VoxelGrid map_i = tensor_to_grid(crop, tape_i.output);
    VoxelGrid map_j = tensor_to_grid(crop, tape_j.output);

    std::vector<std::uint8_t> mask;
    if (use_selection && selector) {
        // g consumes detached feature differences; encoder gradients stop here
        VoxelGrid diff(crop, map_i.channels);
        for (std::size_t i = 0; i < diff.data.size(); ++i) diff.data[i] = map_i.data[i] - map_j.data[i];
        VoxelGrid prob = reliability_forward(*selector, diff);
        mask.resize(prob.voxel_count());
        for (std::size_t v = 0; v < mask.size(); ++v)
            mask[v] = prob.data[v] >= static_cast<float>(cfg.reliability_threshold) ? 1 : 0;
    }

    std::vector<VoxelIndex> pairs;
    try {
        pairs = sample_static_correspondences(in_i, in_j, mask, cfg.pairs_per_batch, rng);
    } catch (const NoCorrespondences&) {
        ++st.skipped_batches;
        return false;
    }

    // Keys come from the slow encoder: the positive key and the dictionary
    // negatives live in the same (slowly-moving) embedding space, so the
    // fast encoder cannot cheapen the task by drifting away from it.
    VoxelGrid slow_i = tensor_to_grid(crop, encoder_forward(st.slow, ti, cfg.threads).output);
    VoxelGrid slow_j = tensor_to_grid(crop, encoder_forward(st.slow, tj, cfg.threads).output);
    std::set<std::size_t> pair_set;
    for (const auto& v : pairs) pair_set.insert(detail::flat_index(in_j, v));
    std::vector<std::size_t> push_pool;
    for (std::size_t v : detail::occupied_voxels(in_j))
        if (!pair_set.count(v)) push_pool.push_back(v);
    const std::size_t n_push = std::min(cfg.push_per_iteration, push_pool.size());
    for (std::size_t pick : rng.sample_without_replacement(push_pool.size(), n_push)) {
        const std::size_t flat = push_pool[pick];
        st.dictionary.push(std::span<const float>(
            slow_j.data.data() + flat * static_cast<std::size_t>(slow_j.channels),
            static_cast<std::size_t>(slow_j.channels)));
    }
    if (st.dictionary.size() == 0) {
        ++st.skipped_batches;
        return false;
    }
    std::vector<float> negatives = st.dictionary.sample(cfg.negatives_per_batch, rng);

    // Symmetric loss: view i's features query keys of view j and vice versa.
    // Gradients reach the fast encoder through the query side only.
    TensorND<float> d_out_i(tape_i.output.shape);
    TensorND<float> d_out_j(tape_j.output.shape);
    const int c_n = map_i.channels;
    double loss_sum = 0.0;
    const double scale = 1.0 / (2.0 * static_cast<double>(pairs.size()));
    for (const VoxelIndex& v : pairs) {
        const std::size_t base = map_i.offset(v.x, v.y, v.z);
        auto feature = [&](const VoxelGrid& g) {
            return std::span<const float>(g.data.data() + base, static_cast<std::size_t>(c_n));
        };
        ContrastiveResult fwd = contrastive_loss<float>(feature(map_i), feature(slow_j),
                                                        std::span<const float>(negatives), cfg.temperature,
                                                        cfg.include_positive_in_denominator);
        ContrastiveResult bwd = contrastive_loss<float>(feature(map_j), feature(slow_i),
                                                        std::span<const float>(negatives), cfg.temperature,
                                                        cfg.include_positive_in_denominator);
        loss_sum += fwd.loss + bwd.loss;
        for (int c = 0; c < c_n; ++c) {
            d_out_i.data[base + static_cast<std::size_t>(c)] += static_cast<float>(fwd.grad_i[static_cast<std::size_t>(c)] * scale);
            d_out_j.data[base + static_cast<std::size_t>(c)] += static_cast<float>(bwd.grad_i[static_cast<std::size_t>(c)] * scale);
        }
    }

    EncoderGrads<float> g_i = encoder_backward(st.params, tape_i, d_out_i, cfg.threads);
    EncoderGrads<float> g_j = encoder_backward(st.params, tape_j, d_out_j, cfg.threads);
    auto gi = g_i.params.tensors();
    auto gj = g_j.params.tensors();
    for (std::size_t t = 0; t < gi.size(); ++t)
        for (std::size_t e = 0; e < gi[t]->data.size(); ++e) gi[t]->data[e] += gj[t]->data[e];

    adam_step(st.params, g_i.params, st.adam);
    momentum_update(st.slow, st.params, cfg.momentum);
    *loss_out = loss_sum * scale;  // mean over both directions
    return true;
}

}  // namespace detail

/// Stage 1: every surface point of a static scene is a valid correspondence.
inline EncoderTrainState train_stage1(const std::vector<Episode>& static_episodes,
                                      const EncoderSpec& spec, const TrainConfig& cfg,
                                      const GridConfig& gc,
                                      const std::vector<Episode>* heldout = nullptr) {
    if (static_episodes.empty()) throw DataMissing("train_stage1: no static episodes");
    EncoderTrainState st{init_encoder_params<float>(spec, mix_seed(cfg.seed, 0x1a17)),
                         EncoderParams{},
                         AdamState<float>{},
                         NegativeDictionary(cfg.dictionary_capacity, spec.feature_channels),
                         {},
                         0};
    st.slow = st.params;
    st.adam.learning_rate = cfg.learning_rate;

    for (int iter = 0; iter < cfg.stage1_iterations; ++iter) {
        Rng rng(mix_seed(cfg.seed, 0x100000ull + static_cast<std::uint64_t>(iter)));
        const Episode& ep = static_episodes[rng.uniform_index(static_episodes.size())];
        auto [va, vb] = detail::pick_view_pair(ep, rng, false);
        GridSpec crop = detail::random_crop_spec(gc, rng);
        double loss = 0.0;
        if (!detail::contrastive_step(st, ep, va, vb, crop, cfg, rng, false, nullptr, &loss)) continue;
        MetricsRow row{iter, loss, -1.0};
        if (heldout && cfg.metrics_every > 0 &&
            (iter % cfg.metrics_every == cfg.metrics_every - 1 || iter == cfg.stage1_iterations - 1)) {
            row.retrieval_top1 = retrieval_top1(st.params, *heldout, gc, 64, 1024,
                                                mix_seed(cfg.seed, 0x313 + static_cast<std::uint64_t>(iter)),
                                                cfg.threads);
        }
        st.metrics.push_back(row);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Stage 2: the reliability classifier, trained on shuffle labels from static
// scenes. The encoder is input-only here and cannot change.
// ---------------------------------------------------------------------------

struct ReliabilityTrainResult {
    ReliabilityParams params;
    std::vector<MetricsRow> metrics;
};

inline std::vector<ReliabilitySample> reliability_batch(const VoxelGrid& in_i, const VoxelGrid& in_j,
                                                        const VoxelGrid& map_i, const VoxelGrid& map_j,
                                                        std::size_t per_class, std::uint64_t label_seed,
                                                        Rng& rng) {
    ReliabilityLabelInputs labels = make_reliability_labels(map_i, map_j, label_seed);
    const int c_n = map_i.channels;
    std::vector<ReliabilitySample> batch;

    std::vector<std::size_t> pos_pool;
    std::vector<std::size_t> neg_pool;
    const std::size_t n_vox = in_i.voxel_count();
    for (std::size_t v = 0; v < n_vox; ++v) {
        const bool occ_i = in_i.data[v * 4 + kOccupancyChannel] > 0.5f;
        if (!occ_i) continue;
        if (in_j.data[v * 4 + kOccupancyChannel] > 0.5f) pos_pool.push_back(v);
        const std::size_t src = labels.permutation[v];
        if (in_j.data[src * 4 + kOccupancyChannel] > 0.5f) neg_pool.push_back(v);
    }
    const std::size_t n_pos = std::min(per_class, pos_pool.size());
    const std::size_t n_neg = std::min(per_class, neg_pool.size());
    for (std::size_t pick : rng.sample_without_replacement(pos_pool.size(), n_pos)) {
        const std::size_t v = pos_pool[pick];
        ReliabilitySample s;
        s.label = 1;
        s.diff.assign(labels.positive.data.begin() + static_cast<std::ptrdiff_t>(v * static_cast<std::size_t>(c_n)),
                      labels.positive.data.begin() + static_cast<std::ptrdiff_t>((v + 1) * static_cast<std::size_t>(c_n)));
        batch.push_back(std::move(s));
    }
    for (std::size_t pick : rng.sample_without_replacement(neg_pool.size(), n_neg)) {
        const std::size_t v = neg_pool[pick];
        ReliabilitySample s;
        s.label = 0;
        s.diff.assign(labels.negative.data.begin() + static_cast<std::ptrdiff_t>(v * static_cast<std::size_t>(c_n)),
                      labels.negative.data.begin() + static_cast<std::ptrdiff_t>((v + 1) * static_cast<std::size_t>(c_n)));
        batch.push_back(std::move(s));
    }
    return batch;
}

inline ReliabilityTrainResult train_stage2_reliability(const std::vector<Episode>& static_episodes,
                                                       const EncoderParams& encoder,
                                                       const TrainConfig& cfg, const GridConfig& gc) {
    if (static_episodes.empty()) throw DataMissing("train_stage2: no static episodes");
    ReliabilityTrainResult out;
    out.params = init_reliability_params<float>(encoder.spec.feature_channels, cfg.reliability_hidden,
                                                mix_seed(cfg.seed, 0x2b));
    AdamState<float> adam;
    adam.learning_rate = 1e-2;  // tiny classifier; large steps are fine

    for (int iter = 0; iter < cfg.stage2_iterations; ++iter) {
        Rng rng(mix_seed(cfg.seed, 0x200000ull + static_cast<std::uint64_t>(iter)));
        const Episode& ep = static_episodes[rng.uniform_index(static_episodes.size())];
        auto [va, vb] = detail::pick_view_pair(ep, rng, false);
        GridSpec crop = detail::random_crop_spec(gc, rng);
        VoxelGrid in_i = voxelize_view(ep, va, crop);
        VoxelGrid in_j = voxelize_view(ep, vb, crop);
        VoxelGrid map_i = forward_encoder(encoder, in_i, cfg.threads);
        VoxelGrid map_j = forward_encoder(encoder, in_j, cfg.threads);
        std::vector<ReliabilitySample> batch =
            reliability_batch(in_i, in_j, map_i, map_j, cfg.pairs_per_batch / 2,
                              mix_seed(cfg.seed, 0x250000ull + static_cast<std::uint64_t>(iter)), rng);
        if (batch.empty()) continue;
        ReliabilityParams grads;
        const double loss = reliability_bce(out.params, batch, &grads);
        std::vector<TensorND<float>*> p = out.params.tensors();
        std::vector<const TensorND<float>*> g;
        for (auto* t : grads.tensors()) g.push_back(t);
        adam_step(p, g, adam);
        out.metrics.push_back({iter, loss, -1.0});
    }
    return out;
}

/// Held-out shuffle-label accuracy of the reliability classifier.
inline double reliability_accuracy(const ReliabilityParams& g, const EncoderParams& encoder,
                                   const std::vector<Episode>& episodes, const TrainConfig& cfg,
                                   const GridConfig& gc, int n_batches, std::uint64_t seed) {
    std::size_t correct = 0, total = 0;
    for (int i = 0; i < n_batches; ++i) {
        Rng rng(mix_seed(seed, 0x900000ull + static_cast<std::uint64_t>(i)));
        const Episode& ep = episodes[rng.uniform_index(episodes.size())];
        auto [va, vb] = detail::pick_view_pair(ep, rng, false);
        GridSpec crop = detail::random_crop_spec(gc, rng);
        VoxelGrid in_i = voxelize_view(ep, va, crop);
        VoxelGrid in_j = voxelize_view(ep, vb, crop);
        VoxelGrid map_i = forward_encoder(encoder, in_i, cfg.threads);
        VoxelGrid map_j = forward_encoder(encoder, in_j, cfg.threads);
        std::vector<ReliabilitySample> batch = reliability_batch(
            in_i, in_j, map_i, map_j, 128, mix_seed(seed, 0x950000ull + static_cast<std::uint64_t>(i)), rng);
        for (const auto& s : batch) {
            const double p = reliability_score(g, std::span<const float>(s.diff));
            correct += ((p >= 0.5) == (s.label == 1)) ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw NoCorrespondences("reliability_accuracy: no samples");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Stage 3: finetune the encoder on dynamic episodes across timesteps, with
// training pairs restricted to voxels the reliability network trusts.
// ---------------------------------------------------------------------------

inline void train_stage3_finetune(EncoderTrainState& st, const std::vector<Episode>& dynamic_episodes,
                                  const ReliabilityParams& selector, const TrainConfig& cfg,
                                  const GridConfig& gc, bool use_selection = true) {
    if (dynamic_episodes.empty()) throw DataMissing("train_stage3: no dynamic episodes");
    const int start = cfg.stage1_iterations;
    for (int iter = 0; iter < cfg.stage3_iterations; ++iter) {
        Rng rng(mix_seed(cfg.seed, 0x300000ull + static_cast<std::uint64_t>(iter)));
        const Episode& ep = dynamic_episodes[rng.uniform_index(dynamic_episodes.size())];
        auto [va, vb] = detail::pick_view_pair(ep, rng, true);  // across timesteps
        GridSpec crop = detail::random_crop_spec(gc, rng);
        double loss = 0.0;
        if (!detail::contrastive_step(st, ep, va, vb, crop, cfg, rng, use_selection, &selector, &loss))
            continue;
        st.metrics.push_back({start + iter, loss, -1.0});
    }
}

// ---------------------------------------------------------------------------
// Reliability checkpoints share the container format of encoder checkpoints.
// ---------------------------------------------------------------------------

inline void save_reliability_checkpoint(const std::string& path, const ReliabilityParams& params,
                                        std::int64_t step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    nlohmann::json header;
    header["kind"] = "reliability";
    header["in_channels"] = params.in_channels;
    header["hidden"] = params.hidden;
    header["step"] = step;
    os << header.dump() << "\n";
    for (const TensorND<float>* t : params.tensors()) write_f32_buffer(os, t->data.data(), t->numel());
    if (!os) throw IoError("write failed: " + path);
}

struct ReliabilityCheckpoint {
    ReliabilityParams params;
    std::int64_t step = 0;
};

inline ReliabilityCheckpoint load_reliability_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw CorruptCheckpoint("missing header: " + path);
    ReliabilityCheckpoint out;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        if (header.at("kind") != "reliability")
            throw CorruptCheckpoint("not a reliability checkpoint: " + path);
        out.params = init_reliability_params<float>(header.at("in_channels"), header.at("hidden"), 0);
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
