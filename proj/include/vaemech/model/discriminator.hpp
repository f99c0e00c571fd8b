#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vaemech/autodiff/ops.hpp"
#include "vaemech/autodiff/optim.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/model/vae.hpp"

namespace vaemech {

/// MLP latent_dim -> hidden x layers -> 2 logits (class 0 = joint sample,
/// class 1 = dimension-permuted sample), leaky-ReLU between layers.
struct Discriminator {
    std::vector<LinearLayer> layers;
    double slope = 0.2;

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (auto& l : layers) out.insert(out.end(), {&l.weight, &l.bias});
        return out;
    }
    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }
    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weight.value.dim(1); }
};

inline Discriminator make_discriminator(std::size_t latent_dim, std::size_t hidden, std::size_t hidden_layers,
                                        double slope, Rng& rng, bool zero = false) {
    Discriminator d;
    d.slope = slope;
    std::size_t in = latent_dim;
    for (std::size_t i = 0; i <= hidden_layers; ++i) {
        const std::size_t out = i == hidden_layers ? 2 : hidden;
        const std::string base = "discriminator.fc" + std::to_string(i);
        Tensor w({out, in});
        if (!zero) w = detail::kaiming_uniform({out, in}, static_cast<double>(in), rng);
        d.layers.push_back({Parameter(base + ".weight", std::move(w)), Parameter(base + ".bias", Tensor({out}))});
        in = out;
    }
    return d;
}

inline Discriminator make_discriminator(const ModelConfig& cfg) {
    Rng rng = Rng(cfg.seed).derive("discriminator.init");
    return make_discriminator(cfg.latent_dim, cfg.disc_hidden, cfg.disc_layers, cfg.disc_slope, rng);
}

/// Logits (B, 2). With trainable = false the weights enter the tape as
/// constants, so gradients flow to z but never into the discriminator.
inline Var discriminator_logits(Tape& tape, Discriminator& d, const Var& z, bool trainable) {
    if (z.shape().size() != 2 || z.shape()[1] != d.input_dim()) {
        throw ShapeError("discriminator: expected (batch, " + std::to_string(d.input_dim()) + ") latents, got " +
                         shape_str(z.shape()));
    }
    Var h = z;
    for (std::size_t i = 0; i < d.layers.size(); ++i) {
        auto& l = d.layers[i];
        const Var w = trainable ? tape.parameter(l.weight) : tape.constant_ref(l.weight.value);
        const Var b = trainable ? tape.parameter(l.bias) : tape.constant_ref(l.bias.value);
        h = ops::linear(h, w, b);
        if (i + 1 < d.layers.size()) h = ops::leaky_relu(h, d.slope);
    }
    return h;
}

/// Per-row logit_joint - logit_marginal, as a (B, 1) column.
inline Var logit_gap(Tape& tape, const Var& logits) {
    const Var w = tape.constant(Tensor({1, 2}, {1.0, -1.0}));
    const Var b = tape.constant(Tensor({1}));
    return ops::linear(logits, w, b);
}

/// One independent permutation of the batch per latent column.
inline std::vector<std::vector<std::size_t>> dimension_permutations(std::size_t batch, std::size_t dims, Rng& rng) {
    std::vector<std::vector<std::size_t>> perms;
    perms.reserve(dims);
    for (std::size_t d = 0; d < dims; ++d) perms.push_back(rng.permutation(batch));
    return perms;
}

inline Tensor permute_dims(const Tensor& z, Rng& rng) {
    Tape tape(false);
    const auto perms = dimension_permutations(z.dim(0), z.dim(1), rng);
    return ops::permute_dims(tape.constant(z), perms).value();
}

struct TcEstimate {
    double tc = 0.0;
    double disc_loss = 0.0;
};

namespace detail {

inline Var discriminator_loss(Tape& tape, Discriminator& d, const Tensor& z, Rng& rng, bool trainable) {
    const std::size_t batch = z.dim(0);
    const Var zv = tape.constant(z);
    const Var zp = ops::permute_dims(zv, dimension_permutations(batch, z.dim(1), rng));
    const Var logits = discriminator_logits(tape, d, ops::concat_batch({zv, zp}), trainable);
    std::vector<std::size_t> labels(2 * batch, 0);
    std::fill(labels.begin() + static_cast<std::ptrdiff_t>(batch), labels.end(), std::size_t{1});
    return ops::cross_entropy(logits, labels);
}

inline void check_tc_batch(const Tensor& z) {
    if (z.rank() != 2) throw ShapeError("factorvae_tc: expected (batch, dims) latents, got " + shape_str(z.shape()));
    if (z.dim(0) < 2) throw ValidationError("factorvae_tc: batch of 1 cannot be permuted across dimensions");
}

}  // namespace detail

/// Density-ratio estimate of total correlation, mean(logit_joint -
/// logit_marginal) on the true codes, plus the discriminator's
/// cross-entropy on (z, z_perm). Does not update the discriminator.
inline TcEstimate factorvae_tc(const Tensor& z, Discriminator& d, Rng& rng) {
    detail::check_tc_batch(z);
    Tape tape(false);
    const Var gap = logit_gap(tape, discriminator_logits(tape, d, tape.constant(z), false));
    TcEstimate out;
    out.tc = ops::mean(gap).value().item();
    out.disc_loss = detail::discriminator_loss(tape, d, z, rng, false).value().item();
    return out;
}

/// One Adam step on the discriminator's cross-entropy. Returns the loss
/// before the update.
inline double discriminator_step(const Tensor& z, Discriminator& d, OptimState& state, double lr, Rng& rng) {
    detail::check_tc_batch(z);
    Tape tape;
    const Var loss = detail::discriminator_loss(tape, d, z, rng, true);
    tape.backward(loss);
    const double value = loss.value().item();
    adam_step(d.parameters(), state, lr);
    d.zero_grad();
    return value;
}

}  // namespace vaemech
