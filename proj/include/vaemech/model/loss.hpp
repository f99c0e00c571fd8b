#pragma once

#include <cmath>

#include "vaemech/autodiff/ops.hpp"
#include "vaemech/model/config.hpp"

namespace vaemech {

struct LossVars {
    Var recon;
    Var kl;
    Var tc;  // empty unless the factor variant supplied one
    Var total;
};

struct LossComponents {
    double recon = 0.0;
    double kl = 0.0;
    double tc = 0.0;
    double total = 0.0;
};

/// recon: Bernoulli cross-entropy summed over pixels, averaged over batch.
/// kl:    0.5 * sum_d(mu^2 + exp(logvar) - 1 - logvar), averaged over batch.
/// total: lambda * recon + w * kl (+ gamma * tc for the factor variant),
///        w = beta for the beta variant and 1 otherwise.
inline LossVars vae_loss(const ModelConfig& cfg, const Var& x, const Var& logits, const Var& mu, const Var& logvar,
                         const Var& tc = {}) {
    const double batch = static_cast<double>(x.shape()[0]);
    LossVars out;
    out.recon = ops::scale(ops::bce_with_logits_sum(logits, x), 1.0 / batch);
    const Var kl_terms =
        ops::sub(ops::add_scalar(ops::add(ops::square(mu), ops::exp(logvar)), -1.0), logvar);
    out.kl = ops::scale(ops::sum(kl_terms), 0.5 / batch);
    out.total = ops::add(ops::scale(out.recon, cfg.lambda_recon), ops::scale(out.kl, cfg.kl_weight()));
    if (cfg.variant == Variant::factor && tc.valid()) {
        out.tc = tc;
        out.total = ops::add(out.total, ops::scale(tc, cfg.gamma));
    }
    return out;
}

inline LossComponents values(const LossVars& v) {
    LossComponents c;
    c.recon = v.recon.value().item();
    c.kl = v.kl.value().item();
    c.tc = v.tc.valid() ? v.tc.value().item() : 0.0;
    c.total = v.total.value().item();
    return c;
}

/// Loss components for given probabilities `recon` (not logits); used for
/// reporting and checks outside training.
inline LossComponents loss_components(const ModelConfig& cfg, const Tensor& x, const Tensor& recon, const Tensor& mu,
                                      const Tensor& logvar, double tc = 0.0) {
    Tape tape(false);
    Tensor logits(recon.shape());
    for (std::size_t i = 0; i < recon.numel(); ++i) {
        const double p = recon[i];
        logits[i] = std::log(p) - std::log1p(-p);
    }
    const LossVars v = vae_loss(cfg, tape.constant(x), tape.constant(logits), tape.constant(mu),
                                tape.constant(logvar), tape.constant(Tensor::scalar(tc)));
    return values(v);
}

}  // namespace vaemech
