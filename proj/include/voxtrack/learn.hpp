#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/common.hpp"
#include "voxtrack/episode_io.hpp"
#include "voxtrack/grid.hpp"
#include "voxtrack/net.hpp"
#include "voxtrack/optim.hpp"
#include "voxtrack/rng.hpp"
#include "voxtrack/sim.hpp"

namespace voxtrack {

// ---------------------------------------------------------------------------
// Correspondence sampling. Two registered maps of the same cuboid correspond
// voxel-for-voxel, so a correspondence is one voxel index that is surface-
// occupied in both views (and allowed by the static mask).
// ---------------------------------------------------------------------------

struct VoxelIndex {
    int x = 0, y = 0, z = 0;
};

struct CorrespondencePair {
    VoxelIndex index_i;
    VoxelIndex index_j;
    std::vector<float> m_i;  // unit feature from view i's map
    std::vector<float> m_j;  // unit feature from view j's map
};

/// Voxels occupied in both input grids where the mask allows, sampled
/// uniformly without replacement, at most `n`. The mask is per-voxel in the
/// grids' own layout; pass an empty mask to allow everything.
inline std::vector<VoxelIndex> sample_static_correspondences(const VoxelGrid& input_i,
                                                             const VoxelGrid& input_j,
                                                             const std::vector<std::uint8_t>& static_mask,
                                                             std::size_t n, Rng& rng) {
    if (!input_i.spec.same_geometry(input_j.spec)) throw SpecMismatch("correspondences: grids not registered");
    if (!static_mask.empty() && static_mask.size() != input_i.voxel_count())
        throw ShapeMismatch("correspondences: mask size mismatch");
    std::vector<std::size_t> eligible;
    const std::size_t n_vox = input_i.voxel_count();
    for (std::size_t v = 0; v < n_vox; ++v) {
        if (input_i.data[v * 4 + kOccupancyChannel] <= 0.5f) continue;
        if (input_j.data[v * 4 + kOccupancyChannel] <= 0.5f) continue;
        if (!static_mask.empty() && !static_mask[v]) continue;
        eligible.push_back(v);
    }
    if (eligible.empty()) throw NoCorrespondences();
    const std::size_t take = std::min(n, eligible.size());
    std::vector<std::size_t> picks = rng.sample_without_replacement(eligible.size(), take);
    std::vector<VoxelIndex> out;
    out.reserve(take);
    const int h = input_i.spec.h, d = input_i.spec.d;
    for (std::size_t p : picks) {
        const std::size_t v = eligible[p];
        out.push_back({static_cast<int>(v / (static_cast<std::size_t>(h) * d)),
                       static_cast<int>((v / d) % h), static_cast<int>(v % d)});
    }
    return out;
}

/// Reads unit features at sampled voxels from two registered feature maps.
inline std::vector<CorrespondencePair> make_correspondence_pairs(const std::vector<VoxelIndex>& voxels,
                                                                 const VoxelGrid& map_i,
                                                                 const VoxelGrid& map_j) {
    if (!map_i.spec.same_geometry(map_j.spec) || map_i.channels != map_j.channels)
        throw SpecMismatch("correspondence pairs: maps not registered");
    std::vector<CorrespondencePair> out;
    out.reserve(voxels.size());
    for (const VoxelIndex& v : voxels) {
        CorrespondencePair p;
        p.index_i = v;
        p.index_j = v;
        const std::size_t bi = map_i.offset(v.x, v.y, v.z);
        p.m_i.assign(map_i.data.begin() + static_cast<std::ptrdiff_t>(bi),
                     map_i.data.begin() + static_cast<std::ptrdiff_t>(bi + map_i.channels));
        p.m_j.assign(map_j.data.begin() + static_cast<std::ptrdiff_t>(bi),
                     map_j.data.begin() + static_cast<std::ptrdiff_t>(bi + map_j.channels));
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Offline negative dictionary: fixed-capacity FIFO of unit features produced
// by the slow encoder.
// ---------------------------------------------------------------------------

class NegativeDictionary {
  public:
    NegativeDictionary(std::size_t capacity, int dim) : capacity_(capacity), dim_(dim) {
        store_.reserve(capacity * static_cast<std::size_t>(dim));
    }

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    int dim() const { return dim_; }

    void push(std::span<const float> feature) {
        if (feature.size() != static_cast<std::size_t>(dim_)) throw ShapeMismatch("dictionary push: wrong dim");
        double n2 = 0.0;
        for (float v : feature) n2 += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-5)
            throw ShapeMismatch("dictionary push: feature is not unit norm");
        if (size_ < capacity_) {
            store_.insert(store_.end(), feature.begin(), feature.end());
            ++size_;
        } else {
            std::copy(feature.begin(), feature.end(),
                      store_.begin() + static_cast<std::ptrdiff_t>(head_ * static_cast<std::size_t>(dim_)));
            head_ = (head_ + 1) % capacity_;  // oldest entry evicted
        }
    }

    /// Uniform with replacement; flat (n x dim) row-major output.
    std::vector<float> sample(std::size_t n, Rng& rng) const {
        if (size_ == 0) throw EmptyDictionary();
        std::vector<float> out(n * static_cast<std::size_t>(dim_));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(size_));
            std::copy_n(store_.begin() + static_cast<std::ptrdiff_t>(pick * static_cast<std::size_t>(dim_)),
                        dim_, out.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(dim_)));
        }
        return out;
    }

  private:
    std::size_t capacity_;
    int dim_;
    std::size_t size_ = 0;
    std::size_t head_ = 0;  // next eviction slot once full
    std::vector<float> store_;
};

// ---------------------------------------------------------------------------
// Contrastive loss over unit features: softmax cross entropy of the positive
// similarity against dictionary negatives, all similarities scaled by 1/tau.
// The positive term appears in the denominator by default (the standard
// normalized-softmax form, which keeps the loss nonnegative); the exclusive
// variant is available behind the flag.
// ---------------------------------------------------------------------------

struct ContrastiveResult {
    double loss = 0.0;
    std::vector<double> grad_i;  // d loss / d m_i
    std::vector<double> grad_j;  // d loss / d m_j
};

template <typename T>
ContrastiveResult contrastive_loss(std::span<const T> m_i, std::span<const T> m_j,
                                   std::span<const T> negatives, double tau,
                                   bool include_positive_in_denominator = true) {
    const std::size_t dim = m_i.size();
    if (m_j.size() != dim) throw ShapeMismatch("contrastive_loss: feature dims differ");
    if (negatives.empty() || negatives.size() % dim != 0) throw EmptyNegatives();
    const std::size_t k_n = negatives.size() / dim;

    double s_pos = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s_pos += static_cast<double>(m_i[c]) * static_cast<double>(m_j[c]);
    s_pos /= tau;

    std::vector<double> s_neg(k_n, 0.0);
    for (std::size_t k = 0; k < k_n; ++k) {
        double s = 0.0;
        const T* row = negatives.data() + k * dim;
        for (std::size_t c = 0; c < dim; ++c) s += static_cast<double>(m_i[c]) * static_cast<double>(row[c]);
        s_neg[k] = s / tau;
    }

    ContrastiveResult res;
    res.grad_i.assign(dim, 0.0);
    res.grad_j.assign(dim, 0.0);

    double max_z = include_positive_in_denominator ? s_pos : -1e300;
    for (double z : s_neg) max_z = std::max(max_z, z);
    double sum = include_positive_in_denominator ? std::exp(s_pos - max_z) : 0.0;
    for (double z : s_neg) sum += std::exp(z - max_z);
    const double log_denom = max_z + std::log(sum);
    res.loss = log_denom - s_pos;

    // d loss / d s_pos and d loss / d s_neg[k]
    const double p_pos = include_positive_in_denominator ? std::exp(s_pos - log_denom) : 0.0;
    const double d_spos = (p_pos - 1.0) / tau;
    for (std::size_t c = 0; c < dim; ++c) {
        res.grad_i[c] += d_spos * static_cast<double>(m_j[c]);
        res.grad_j[c] += d_spos * static_cast<double>(m_i[c]);
    }
    for (std::size_t k = 0; k < k_n; ++k) {
        const double d_sk = std::exp(s_neg[k] - log_denom) / tau;
        const T* row = negatives.data() + k * dim;
        for (std::size_t c = 0; c < dim; ++c) res.grad_i[c] += d_sk * static_cast<double>(row[c]);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reliability network g: a 2-layer per-voxel classifier over feature
// differences, applied fully convolutionally. Gradients never flow into the
// encoder that produced the differences (the inputs are detached values).
// ---------------------------------------------------------------------------

template <typename T>
struct ReliabilityParamsT {
    int in_channels = 16;
    int hidden = 32;
    TensorND<T> w1;  // (in, hidden)
    TensorND<T> b1;  // (hidden)
    TensorND<T> w2;  // (hidden)
    TensorND<T> b2;  // (1)

    std::vector<TensorND<T>*> tensors() { return {&w1, &b1, &w2, &b2}; }
    std::vector<const TensorND<T>*> tensors() const { return {&w1, &b1, &w2, &b2}; }
};

using ReliabilityParams = ReliabilityParamsT<float>;

template <typename T>
ReliabilityParamsT<T> init_reliability_params(int in_channels, int hidden, std::uint64_t seed) {
    ReliabilityParamsT<T> p;
    p.in_channels = in_channels;
    p.hidden = hidden;
    p.w1 = TensorND<T>({in_channels, hidden});
    p.b1 = TensorND<T>({hidden});
    p.w2 = TensorND<T>({hidden});
    p.b2 = TensorND<T>({1});
    Rng rng(seed);
    const double bound1 = std::sqrt(1.0 / in_channels);
    for (auto& v : p.w1.data) v = static_cast<T>(rng.uniform(-bound1, bound1));
    const double bound2 = std::sqrt(1.0 / hidden);
    for (auto& v : p.w2.data) v = static_cast<T>(rng.uniform(-bound2, bound2));
    return p;
}

/// Per-voxel probability that the content is static. Input x has in_channels
/// values; returns sigmoid(w2 . leaky(w1^T x + b1) + b2).
template <typename T>
double reliability_score(const ReliabilityParamsT<T>& p, std::span<const float> x) {
    double logit = static_cast<double>(p.b2.data[0]);
    for (int h = 0; h < p.hidden; ++h) {
        double a = static_cast<double>(p.b1.data[static_cast<std::size_t>(h)]);
        for (int c = 0; c < p.in_channels; ++c)
            a += static_cast<double>(x[static_cast<std::size_t>(c)]) *
                 static_cast<double>(p.w1.data[static_cast<std::size_t>(c) * p.hidden + static_cast<std::size_t>(h)]);
        if (a < 0.0) a *= kLeakySlope;
        logit += a * static_cast<double>(p.w2.data[static_cast<std::size_t>(h)]);
    }
    return 1.0 / (1.0 + std::exp(-logit));
}

/// Applies g to every voxel of a feature-difference grid; output C = 1.
template <typename T>
VoxelGrid reliability_forward(const ReliabilityParamsT<T>& p, const VoxelGrid& diff) {
    if (diff.channels != p.in_channels) throw ShapeMismatch("reliability_forward: channel mismatch");
    VoxelGrid out(diff.spec, 1);
    const std::size_t n = diff.voxel_count();
    for (std::size_t v = 0; v < n; ++v) {
        std::span<const float> x(diff.data.data() + v * static_cast<std::size_t>(diff.channels),
                                 static_cast<std::size_t>(diff.channels));
        out.data[v] = static_cast<float>(reliability_score(p, x));
    }
    return out;
}

struct ReliabilitySample {
    std::vector<float> diff;
    int label = 0;  // 1 = corresponding (static), 0 = shuffled
};

/// Mean binary cross entropy over a batch plus exact parameter gradients.
template <typename T>
double reliability_bce(const ReliabilityParamsT<T>& p, const std::vector<ReliabilitySample>& batch,
                       ReliabilityParamsT<T>* grads_out) {
    if (batch.empty()) return 0.0;
    std::vector<double> gw1(p.w1.numel(), 0.0), gb1(p.b1.numel(), 0.0), gw2(p.w2.numel(), 0.0);
    double gb2 = 0.0;
    double loss = 0.0;
    std::vector<double> hidden_pre(static_cast<std::size_t>(p.hidden));
    for (const auto& s : batch) {
        double logit = static_cast<double>(p.b2.data[0]);
        for (int h = 0; h < p.hidden; ++h) {
            double a = static_cast<double>(p.b1.data[static_cast<std::size_t>(h)]);
            for (int c = 0; c < p.in_channels; ++c)
                a += static_cast<double>(s.diff[static_cast<std::size_t>(c)]) *
                     static_cast<double>(p.w1.data[static_cast<std::size_t>(c) * p.hidden + static_cast<std::size_t>(h)]);
            hidden_pre[static_cast<std::size_t>(h)] = a;
            logit += (a < 0.0 ? a * kLeakySlope : a) * static_cast<double>(p.w2.data[static_cast<std::size_t>(h)]);
        }
        // numerically safe BCE on the logit
        const double y = s.label;
        loss += std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
        if (!grads_out) continue;
        const double prob = 1.0 / (1.0 + std::exp(-logit));
        const double d_logit = (prob - y) / static_cast<double>(batch.size());
        gb2 += d_logit;
        for (int h = 0; h < p.hidden; ++h) {
            const double act = hidden_pre[static_cast<std::size_t>(h)] < 0.0
                                   ? hidden_pre[static_cast<std::size_t>(h)] * kLeakySlope
                                   : hidden_pre[static_cast<std::size_t>(h)];
            gw2[static_cast<std::size_t>(h)] += d_logit * act;
            const double d_act = d_logit * static_cast<double>(p.w2.data[static_cast<std::size_t>(h)]);
            const double d_pre = hidden_pre[static_cast<std::size_t>(h)] < 0.0 ? d_act * kLeakySlope : d_act;
            gb1[static_cast<std::size_t>(h)] += d_pre;
            for (int c = 0; c < p.in_channels; ++c)
                gw1[static_cast<std::size_t>(c) * p.hidden + static_cast<std::size_t>(h)] +=
                    d_pre * static_cast<double>(s.diff[static_cast<std::size_t>(c)]);
        }
    }
    loss /= static_cast<double>(batch.size());
    if (grads_out) {
        grads_out->in_channels = p.in_channels;
        grads_out->hidden = p.hidden;
        grads_out->w1 = TensorND<T>({p.in_channels, p.hidden});
        grads_out->b1 = TensorND<T>({p.hidden});
        grads_out->w2 = TensorND<T>({p.hidden});
        grads_out->b2 = TensorND<T>({1});
        for (std::size_t i = 0; i < gw1.size(); ++i) grads_out->w1.data[i] = static_cast<T>(gw1[i]);
        for (std::size_t i = 0; i < gb1.size(); ++i) grads_out->b1.data[i] = static_cast<T>(gb1[i]);
        for (std::size_t i = 0; i < gw2.size(); ++i) grads_out->w2.data[i] = static_cast<T>(gw2[i]);
        grads_out->b2.data[0] = static_cast<T>(gb2);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Shuffle labels: positive inputs are registered differences M_i - M_j;
// negative inputs are M_i - shuffle(M_j), where the shuffle permutes voxel
// positions of M_j (feature vectors kept intact).
// ---------------------------------------------------------------------------

struct ReliabilityLabelInputs {
    VoxelGrid positive;                 // M_i - M_j
    VoxelGrid negative;                 // M_i - shuffle(M_j)
    std::vector<std::size_t> permutation;  // negative voxel v pairs with M_j[perm[v]]
};

inline ReliabilityLabelInputs make_reliability_labels(const VoxelGrid& map_i, const VoxelGrid& map_j,
                                                      std::uint64_t seed) {
    if (!map_i.spec.same_geometry(map_j.spec) || map_i.channels != map_j.channels)
        throw ShapeMismatch("make_reliability_labels: maps not aligned");
    ReliabilityLabelInputs out;
    out.positive = VoxelGrid(map_i.spec, map_i.channels);
    out.negative = VoxelGrid(map_i.spec, map_i.channels);
    const std::size_t n = map_i.voxel_count();
    const int c_n = map_i.channels;
    out.permutation.resize(n);
    for (std::size_t v = 0; v < n; ++v) out.permutation[v] = v;
    Rng rng(seed);
    rng.shuffle(out.permutation);
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t src = out.permutation[v];
        for (int c = 0; c < c_n; ++c) {
            const std::size_t ci = static_cast<std::size_t>(c);
            out.positive.data[v * static_cast<std::size_t>(c_n) + ci] =
                map_i.data[v * static_cast<std::size_t>(c_n) + ci] - map_j.data[v * static_cast<std::size_t>(c_n) + ci];
            out.negative.data[v * static_cast<std::size_t>(c_n) + ci] =
                map_i.data[v * static_cast<std::size_t>(c_n) + ci] - map_j.data[src * static_cast<std::size_t>(c_n) + ci];
        }
    }
    return out;
}

}  // namespace voxtrack
