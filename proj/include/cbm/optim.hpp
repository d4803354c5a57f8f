#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace cbm {

// Per-parameter moment buffers. One OptState serves one ParamSet.
struct OptState {
    std::unordered_map<std::string, std::vector<float>> m;  // first moment / velocity
    std::unordered_map<std::string, std::vector<float>> v;  // second moment (adam only)
    long step = 0;
};

// Standard Adam with bias correction; clears gradients after the update.
inline void adam_step(ParamSet& params, OptState& state, float lr,
                      float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f) {
    ++state.step;
    double bc1 = 1.0 - std::pow(static_cast<double>(beta1), state.step);
    double bc2 = 1.0 - std::pow(static_cast<double>(beta2), state.step);
    for (auto& [name, p] : params) {
        if (!p.has_grad())
            throw std::logic_error("adam_step: missing gradient for " + name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.size(), 0.0f);
        if (v.empty()) v.assign(p.size(), 0.0f);
        if (m.size() != p.size() || v.size() != p.size())
            throw std::logic_error("adam_step: state shape mismatch for " + name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            float g = p.grad[i];
            m[i] = beta1 * m[i] + (1.0f - beta1) * g;
            v[i] = beta2 * v[i] + (1.0f - beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
        p.clear_grad();
    }
}

// v <- momentum*v + g; p <- p - lr*v. Clears gradients after the update.
inline void sgd_momentum_step(ParamSet& params, OptState& state, float lr,
                              float momentum = 0.9f) {
    ++state.step;
    for (auto& [name, p] : params) {
        if (!p.has_grad())
            throw std::logic_error("sgd_momentum_step: missing gradient for " + name);
        auto& v = state.m[name];
        if (v.empty()) v.assign(p.size(), 0.0f);
        if (v.size() != p.size())
            throw std::logic_error("sgd_momentum_step: state shape mismatch for " + name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] + p.grad[i];
            p.data[i] -= lr * v[i];
        }
        p.clear_grad();
    }
}

}  // namespace cbm
