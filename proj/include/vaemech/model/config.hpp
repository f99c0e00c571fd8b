#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vaemech/core/error.hpp"

namespace vaemech {

enum class Variant { standard, beta, factor };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::standard: return "standard";
        case Variant::beta: return "beta";
        case Variant::factor: return "factor";
    }
    return "standard";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "standard") return Variant::standard;
    if (s == "beta") return Variant::beta;
    if (s == "factor") return Variant::factor;
    throw ValidationError("unknown model variant '" + std::string(s) + "' (expected standard, beta or factor)");
}

struct ModelConfig {
    Variant variant = Variant::standard;
    std::size_t latent_dim = 10;
    double beta = 4.0;
    double gamma = 40.0;
    double lambda_recon = 1.0;
    std::size_t image_size = 64;
    std::size_t channels = 1;
    /// Encoder conv widths; the decoder mirrors them in reverse.
    std::vector<std::size_t> conv_channels{32, 64, 128};
    double lr = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 10;
    double weight_decay = 1e-5;
    double disc_lr = 5e-5;
    std::size_t disc_hidden = 256;
    std::size_t disc_layers = 3;
    double disc_slope = 0.2;
    std::uint64_t seed = 0;

    /// KL weight: beta for the beta variant, 1 otherwise.
    double kl_weight() const { return variant == Variant::beta ? beta : 1.0; }

    /// Spatial extent after the encoder convs (each halves the resolution).
    std::size_t bottleneck_extent() const { return image_size >> conv_channels.size(); }

    void validate() const {
        if (latent_dim < 1) throw ValidationError("model.latent_dim must be >= 1");
        if (!(beta > 0.0)) throw ValidationError("model.beta must be > 0");
        if (!(gamma >= 0.0)) throw ValidationError("model.gamma must be >= 0");
        if (!(lambda_recon > 0.0)) throw ValidationError("model.lambda_recon must be > 0");
        if (channels < 1) throw ValidationError("model.channels must be >= 1");
        if (conv_channels.empty()) throw ValidationError("model.conv_channels must name at least one layer");
        for (std::size_t c : conv_channels) {
            if (c < 1) throw ValidationError("model.conv_channels entries must be >= 1");
        }
        const std::size_t factor = std::size_t{1} << conv_channels.size();
        if (image_size < factor || image_size % factor != 0) {
            throw ValidationError("model.image_size " + std::to_string(image_size) + " must be a positive multiple of " +
                                  std::to_string(factor) + " for " + std::to_string(conv_channels.size()) +
                                  " stride-2 layers");
        }
        if (!(lr > 0.0)) throw ValidationError("model.lr must be > 0");
        if (batch_size < 1) throw ValidationError("model.batch_size must be >= 1");
        if (variant == Variant::factor && batch_size < 2) {
            throw ValidationError("model.batch_size must be >= 2 for the factor variant");
        }
        if (!(weight_decay >= 0.0)) throw ValidationError("model.weight_decay must be >= 0");
        if (!(disc_lr > 0.0)) throw ValidationError("model.disc_lr must be > 0");
        if (disc_hidden < 1 || disc_layers < 1) throw ValidationError("model discriminator needs >= 1 hidden layer");
        if (!(disc_slope >= 0.0)) throw ValidationError("model.disc_slope must be >= 0");
    }
};

}  // namespace vaemech
