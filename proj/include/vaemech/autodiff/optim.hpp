#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "vaemech/autodiff/tape.hpp"

namespace vaemech {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam moments for a fixed list of parameters.
struct OptimState {
    AdamHyper hyper;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t t = 0;
};

inline OptimState make_optim_state(const std::vector<Parameter*>& params, AdamHyper hyper) {
    OptimState s;
    s.hyper = hyper;
    for (const Parameter* p : params) {
        s.m.emplace_back(p->value.shape());
        s.v.emplace_back(p->value.shape());
    }
    return s;
}

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Weight decay is the classic L2 form: wd * param is added to the gradient
/// before the moment updates.
inline void adam_step(const std::vector<Parameter*>& params, OptimState& state, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("adam_step: learning rate must be positive");
    if (params.size() != state.m.size()) throw ShapeError("adam_step: state was built for a different parameter list");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Parameter& p = *params[k];
        if (p.grad.shape() != p.value.shape() || state.m[k].shape() != p.value.shape()) {
            throw ShapeError("adam_step: shape mismatch for parameter '" + p.name + "'");
        }
        if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient for parameter '" + p.name + "'");
    }
    const AdamHyper& h = state.hyper;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i] + h.weight_decay * p.value[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
        }
    }
}

/// Half-cosine decay from base_lr at step 0 to 0 at total_steps.
/// Steps past the end clamp to 0 with a warning.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0) throw ValidationError("cosine_lr: total_steps must be positive");
    if (step > total_steps) {
        std::cerr << "warning: cosine_lr step " << step << " exceeds total " << total_steps << ", clamping to 0\n";
        return 0.0;
    }
    if (step == total_steps) return 0.0;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace vaemech
