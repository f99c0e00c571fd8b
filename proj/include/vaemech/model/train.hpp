#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vaemech/autodiff/optim.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/model/discriminator.hpp"
#include "vaemech/model/loss.hpp"
#include "vaemech/model/vae.hpp"

namespace vaemech {

struct StepRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;  // global, 0-based
    std::size_t batch = 0;
    double lr = 0.0;
    LossComponents loss;
    double disc_loss = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;  // rate used by the epoch's last step
    LossComponents loss;  // sample-weighted means over the epoch
    double disc_loss = 0.0;
    double recon_per_pixel = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::size_t steps = 0;
};

struct TrainResult {
    ModelBundle model;
    std::optional<Discriminator> discriminator;
    TrainingLog log;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Rows `idx` of an (N, ...) tensor gathered into a new batch.
inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
    Shape s = t.shape();
    s[0] = count;
    Tensor out(s);
    const std::size_t row = t.row_size();
    for (std::size_t i = 0; i < count; ++i) {
        const auto src = t.data().subspan(idx[begin + i] * row, row);
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    return out;
}

inline Tensor normal_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    return t;
}

/// Minibatch Adam with cosine decay over epochs * ceil(N / batch) steps.
/// Shuffling, reparameterization noise and discriminator permutations use
/// separate streams derived from config.seed, so the VAE trajectory does
/// not depend on whether a discriminator is trained alongside it.
inline TrainResult train(const Tensor& images, const ModelConfig& cfg, const StepCallback& on_step = {}) {
    cfg.validate();
    if (images.rank() != 4 || images.dim(0) == 0) {
        throw ValidationError("train: dataset is empty or not an image batch, got " + shape_str(images.shape()));
    }
    TrainResult res{make_model(cfg), std::nullopt, {}};
    ModelBundle& model = res.model;
    check_image_batch(model, slice_rows(images, 0, 1), "train");

    const std::size_t n = images.dim(0);
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = cfg.epochs * batches;
    const double pixels = static_cast<double>(cfg.channels * cfg.image_size * cfg.image_size);
    const SiteLayout lay = model.layout();

    const Rng root(cfg.seed);
    Rng shuffle_rng = root.derive("train.shuffle");
    Rng noise_rng = root.derive("train.noise");
    Rng disc_rng = root.derive("train.discriminator");

    const auto params = model.parameters();
    OptimState opt = make_optim_state(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    OptimState disc_opt;
    if (cfg.variant == Variant::factor) {
        res.discriminator = make_discriminator(cfg);
        disc_opt = make_optim_state(res.discriminator->parameters(), {cfg.disc_lr, 0.9, 0.999, 1e-8, 0.0});
    }

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffle_rng.permutation(n);
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, n - begin);
            const double lr = cosine_lr(step, total, cfg.lr);
            StepRecord sr{epoch, step, count, lr, {}, 0.0};
            try {
                const Tensor xb = gather_rows(images, order, begin, count);
                Tape tape;
                const BoundWeights w = bind_trainable(tape, model);
                ForwardStart from;
                from.input = tape.constant(xb);
                from.noise = tape.constant(normal_tensor({count, cfg.latent_dim}, noise_rng));
                from.stop = lay.recon();
                const ForwardPass pass = run_forward(tape, w, model, from);
                const Var z = pass.sites[lay.z()];

                Var tc;
                if (res.discriminator) {
                    tc = ops::mean(logit_gap(tape, discriminator_logits(tape, *res.discriminator, z, false)));
                }
                const LossVars lv = vae_loss(cfg, from.input, pass.logits, pass.sites[lay.mu()],
                                             pass.sites[lay.logvar()], tc);
                sr.loss = values(lv);
                tape.backward(lv.total);
                adam_step(params, opt, lr);
                model.zero_grad();

                if (res.discriminator && count >= 2) {
                    sr.disc_loss = discriminator_step(z.value(), *res.discriminator, disc_opt, cfg.disc_lr, disc_rng);
                }
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step) + ": " + e.what());
            }
            const double wgt = static_cast<double>(count) / static_cast<double>(n);
            rec.loss.recon += wgt * sr.loss.recon;
            rec.loss.kl += wgt * sr.loss.kl;
            rec.loss.tc += wgt * sr.loss.tc;
            rec.loss.total += wgt * sr.loss.total;
            rec.disc_loss += wgt * sr.disc_loss;
            rec.lr = lr;
            if (on_step) on_step(sr);
        }
        rec.recon_per_pixel = rec.loss.recon / pixels;
        res.log.epochs.push_back(rec);
    }
    res.log.steps = step;
    return res;
}

}  // namespace vaemech
