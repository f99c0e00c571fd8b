#pragma once

// Finite-difference gradient checks for single ops and the full VAE loss.

#include <functional>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "vaemech/autodiff/ops.hpp"
#include "vaemech/model/discriminator.hpp"
#include "vaemech/model/loss.hpp"
#include "vaemech/model/vae.hpp"

namespace gradcheck {

using namespace vaemech;

/// Builds a scalar from leaf variables on the given tape.
using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

struct OpCase {
    std::string name;
    std::vector<Tensor> inputs;
    Graph graph;
};

/// Worst grad_error over every element of every input.
inline double op_error(const OpCase& c, double h = 1e-5) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : c.inputs) leaves.push_back(tape.leaf(t));
    const Var out = c.graph(tape, leaves);
    tape.backward(out);
    auto f = [&](const std::vector<Tensor>& in) {
        Tape t(false);
        std::vector<Var> v;
        for (const auto& x : in) v.push_back(t.leaf(x));
        return c.graph(t, v).value().item();
    };
    double worst = 0.0;
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
        worst = std::max(worst, oracle::fd_max_error(f, c.inputs, k, leaves[k].grad(), h));
    }
    return worst;
}

/// sum(y * weights): turns any output into a scalar with a non-uniform
/// upstream gradient.
inline Var weighted_sum(const Var& y, const Tensor& weights) {
    Tape& t = *y.tape();
    return ops::sum(ops::mul(y, t.constant(weights)));
}

inline Tensor shifted_away_from_zero(Tensor t, double gap) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += t[i] >= 0.0 ? gap : -gap;
    return t;
}

/// Every differentiable op on small random instances.
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
    Rng rng(seed);
    auto R = [&](Shape s, double lo = -1.0, double hi = 1.0) { return oracle::random_tensor(std::move(s), rng, lo, hi); };
    std::vector<OpCase> cs;
    const Tensor w23 = R({2, 3});
    cs.push_back({"add", {R({2, 3}), R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::add(v[0], v[1]), w23); }});
    cs.push_back({"sub", {R({2, 3}), R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::sub(v[0], v[1]), w23); }});
    cs.push_back({"mul", {R({2, 3}), R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::mul(v[0], v[1]), w23); }});
    cs.push_back({"scale", {R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::scale(v[0], -1.7), w23); }});
    cs.push_back({"add_scalar", {R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::add_scalar(v[0], 0.3), w23); }});
    cs.push_back({"relu", {shifted_away_from_zero(R({2, 3}), 0.05)},
                  [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::relu(v[0]), w23); }});
    cs.push_back({"leaky_relu", {shifted_away_from_zero(R({2, 3}), 0.05)},
                  [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::leaky_relu(v[0], 0.2), w23); }});
    cs.push_back({"sigmoid", {R({2, 3}, -4, 4)}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::sigmoid(v[0]), w23); }});
    cs.push_back({"exp", {R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::exp(v[0]), w23); }});
    cs.push_back({"log", {R({2, 3}, 0.2, 2.0)}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::log(v[0]), w23); }});
    cs.push_back({"square", {R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::square(v[0]), w23); }});
    cs.push_back({"sum", {R({2, 3})}, [](Tape&, const std::vector<Var>& v) { return ops::scale(ops::sum(v[0]), 0.7); }});
    cs.push_back({"mean", {R({2, 3})}, [](Tape&, const std::vector<Var>& v) { return ops::mean(ops::square(v[0])); }});
    cs.push_back({"reshape", {R({2, 3})}, [w23](Tape&, const std::vector<Var>& v) {
                      return weighted_sum(ops::reshape(ops::reshape(v[0], {3, 2}), {2, 3}), w23);
                  }});
    const Tensor w33 = R({3, 3});
    cs.push_back({"concat_batch", {R({1, 3}), R({2, 3})},
                  [w33](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::concat_batch({v[0], v[1]}), w33); }});
    const std::vector<std::vector<std::size_t>> perms{{2, 0, 1}, {1, 2, 0}};
    const Tensor w32 = R({3, 2});
    cs.push_back({"permute_dims", {R({3, 2})},
                  [perms, w32](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::permute_dims(v[0], perms), w32); }});
    const Tensor wl = R({2, 4});
    cs.push_back({"linear", {R({2, 3}), R({4, 3}), R({4})},
                  [wl](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::linear(v[0], v[1], v[2]), wl); }});
    const Tensor wc = R({1, 3, 3, 3});
    cs.push_back({"conv2d", {R({1, 2, 6, 6}), R({3, 2, 4, 4}), R({3})},
                  [wc](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::conv2d(v[0], v[1], v[2]), wc); }});
    const Tensor wt = R({1, 2, 6, 6});
    cs.push_back({"conv_transpose2d", {R({1, 3, 3, 3}), R({3, 2, 4, 4}), R({2})},
                  [wt](Tape&, const std::vector<Var>& v) { return weighted_sum(ops::conv_transpose2d(v[0], v[1], v[2]), wt); }});
    cs.push_back({"bce_with_logits", {R({2, 3}, -3, 3), R({2, 3}, 0, 1)},
                  [](Tape&, const std::vector<Var>& v) { return ops::bce_with_logits_sum(v[0], v[1]); }});
    cs.push_back({"cross_entropy", {R({3, 2}, -2, 2)},
                  [](Tape&, const std::vector<Var>& v) { return ops::cross_entropy(v[0], {1, 0, 1}); }});
    cs.push_back({"reparameterize", {R({2, 3}), R({2, 3}), R({2, 3})},
                  [w23](Tape&, const std::vector<Var>& v) { return weighted_sum(reparameterize(v[0], v[1], v[2]), w23); }});
    return cs;
}

/// FD check of d(total loss)/d(every model parameter) for one variant.
/// Returns the worst grad_error.
inline double vae_loss_error(ModelConfig cfg, std::uint64_t seed, std::size_t batch = 2, double h = 1e-5) {
    cfg.seed = seed;
    ModelBundle model = make_model(cfg);
    Rng rng = Rng(seed).derive("gradcheck.inputs");
    // Zero biases put relu inputs exactly on the kink wherever a layer's
    // input is all zero; central differences are meaningless there.
    for (Parameter* p : model.parameters()) {
        if (p->value.rank() == 1) p->value = oracle::random_tensor(p->value.shape(), rng, -0.1, 0.1);
    }
    const Tensor x = oracle::random_tensor({batch, cfg.channels, cfg.image_size, cfg.image_size}, rng, 0.0, 1.0);
    const Tensor noise = oracle::random_tensor({batch, cfg.latent_dim}, rng, -1.0, 1.0);
    std::optional<Discriminator> disc;
    if (cfg.variant == Variant::factor) disc = make_discriminator(cfg);
    const SiteLayout lay = model.layout();

    auto loss_on = [&](Tape& tape, const BoundWeights& w) {
        ForwardStart from;
        from.input = tape.constant(x);
        from.noise = tape.constant(noise);
        from.stop = lay.recon();
        const ForwardPass pass = run_forward(tape, w, model, from);
        Var tc;
        if (disc) tc = ops::mean(logit_gap(tape, discriminator_logits(tape, *disc, pass.sites[lay.z()], false)));
        return vae_loss(cfg, from.input, pass.logits, pass.sites[lay.mu()], pass.sites[lay.logvar()], tc).total;
    };

    Tape tape;
    const BoundWeights w = bind_trainable(tape, model);
    tape.backward(loss_on(tape, w));
    std::vector<Tensor> grads;
    for (Parameter* p : model.parameters()) grads.push_back(p->grad);

    auto eval = [&]() {
        Tape t(false);
        return loss_on(t, bind_frozen(t, model)).value().item();
    };
    double worst = 0.0;
    const auto params = model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& v = params[k]->value;
        for (std::size_t i = 0; i < v.numel(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = eval();
            v[i] = orig - h;
            const double down = eval();
            v[i] = orig;
            worst = std::max(worst, oracle::grad_error(grads[k][i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

/// Small models for the end-to-end check: a 2x2 image with 2 latents, and
/// an 8x8 two-layer model for each variant.
inline std::vector<std::pair<std::string, ModelConfig>> e2e_configs() {
    std::vector<std::pair<std::string, ModelConfig>> out;
    ModelConfig tiny;
    tiny.image_size = 2;
    tiny.latent_dim = 2;
    tiny.conv_channels = {2};
    out.emplace_back("standard 2x2 / 2 latents", tiny);
    for (Variant v : {Variant::standard, Variant::beta, Variant::factor}) {
        ModelConfig c;
        c.variant = v;
        c.image_size = 8;
        c.latent_dim = 3;
        c.conv_channels = {2, 3};
        c.disc_hidden = 5;
        c.disc_layers = 2;
        c.gamma = 2.0;
        out.emplace_back(std::string(to_string(v)) + " 8x8 / 3 latents", c);
    }
    return out;
}

}  // namespace gradcheck
