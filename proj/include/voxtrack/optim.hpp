#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxtrack/common.hpp"
#include "voxtrack/net.hpp"
#include "voxtrack/tensor.hpp"

namespace voxtrack {

/// Adam with bias correction. Moments are kept in 64-bit regardless of the
/// parameter storage type.
template <typename T>
struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    void ensure_shapes(const std::vector<TensorND<T>*>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i]->numel(), 0.0);
                v[i].assign(params[i]->numel(), 0.0);
            }
        }
        if (m.size() != params.size()) throw ShapeMismatch("adam_step: parameter count changed");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (m[i].size() != params[i]->numel()) throw ShapeMismatch("adam_step: parameter shape changed");
    }
};

template <typename T>
void adam_step(const std::vector<TensorND<T>*>& params, const std::vector<const TensorND<T>*>& grads,
               AdamState<T>& state) {
    if (params.size() != grads.size()) throw ShapeMismatch("adam_step: gradient count mismatch");
    state.ensure_shapes(params);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i]->numel() != params[i]->numel()) throw ShapeMismatch("adam_step: gradient shape mismatch");
        auto& pm = state.m[i];
        auto& pv = state.v[i];
        auto& pd = params[i]->data;
        const auto& gd = grads[i]->data;
        for (std::size_t e = 0; e < pd.size(); ++e) {
            const double g = static_cast<double>(gd[e]);
            pm[e] = state.beta1 * pm[e] + (1.0 - state.beta1) * g;
            pv[e] = state.beta2 * pv[e] + (1.0 - state.beta2) * g * g;
            const double mhat = pm[e] / bc1;
            const double vhat = pv[e] / bc2;
            pd[e] = static_cast<T>(static_cast<double>(pd[e]) -
                                   state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon));
        }
    }
}

template <typename T>
void adam_step(EncoderParamsT<T>& params, const EncoderParamsT<T>& grads, AdamState<T>& state) {
    std::vector<TensorND<T>*> p = params.tensors();
    std::vector<const TensorND<T>*> g = grads.tensors();
    adam_step(p, g, state);
}

/// slow <- mu * slow + (1 - mu) * fast, per parameter.
template <typename T>
void momentum_update(EncoderParamsT<T>& slow, const EncoderParamsT<T>& fast, double mu) {
    if (!(slow.spec == fast.spec)) throw SpecMismatch("momentum_update: encoder specs differ");
    std::vector<TensorND<T>*> s = slow.tensors();
    std::vector<const TensorND<T>*> f = fast.tensors();
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t e = 0; e < s[i]->data.size(); ++e)
            s[i]->data[e] = static_cast<T>(mu * static_cast<double>(s[i]->data[e]) +
                                           (1.0 - mu) * static_cast<double>(f[i]->data[e]));
}

}  // namespace voxtrack
