#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vaemech/autodiff/ops.hpp"
#include "vaemech/autodiff/tape.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/model/config.hpp"
#include "vaemech/model/trace.hpp"

namespace vaemech {

struct ConvLayer {
    Parameter weight;
    Parameter bias;
};

struct LinearLayer {
    Parameter weight;
    Parameter bias;
};

/// Where each named activation lives in the forward order. For L conv
/// layers: encoder_conv_0..L-1, mu, logvar, z, decoder_conv_0..L-1, recon.
class SiteLayout {
public:
    explicit SiteLayout(std::size_t layers = 3) : layers_(layers) {}

    std::size_t layers() const noexcept { return layers_; }
    std::size_t count() const noexcept { return 2 * layers_ + 4; }
    std::size_t encoder(std::size_t k) const noexcept { return k; }
    std::size_t mu() const noexcept { return layers_; }
    std::size_t logvar() const noexcept { return layers_ + 1; }
    std::size_t z() const noexcept { return layers_ + 2; }
    std::size_t decoder(std::size_t k) const noexcept { return layers_ + 3 + k; }
    std::size_t recon() const noexcept { return 2 * layers_ + 3; }

    bool is_encoder(std::size_t s) const noexcept { return s < layers_; }
    bool is_latent(std::size_t s) const noexcept { return s >= mu() && s <= z(); }
    bool is_decoder(std::size_t s) const noexcept { return s >= decoder(0) && s < recon(); }
    /// Sites whose units are channels of a (B, C, H, W) map.
    bool is_spatial(std::size_t s) const noexcept { return !is_latent(s); }

    std::string name(std::size_t s) const {
        if (is_encoder(s)) return "encoder_conv_" + std::to_string(s);
        if (s == mu()) return "mu";
        if (s == logvar()) return "logvar";
        if (s == z()) return "z";
        if (is_decoder(s)) return "decoder_conv_" + std::to_string(s - decoder(0));
        if (s == recon()) return "recon";
        throw ValidationError("site index " + std::to_string(s) + " out of range");
    }

    std::size_t index(std::string_view name) const {
        for (std::size_t s = 0; s < count(); ++s) {
            if (this->name(s) == name) return s;
        }
        throw ValidationError("unknown activation site '" + std::string(name) + "'");
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (std::size_t s = 0; s < count(); ++s) out.push_back(name(s));
        return out;
    }

private:
    std::size_t layers_;
};

/// Encoder/decoder weights plus the configuration that produced them.
class ModelBundle {
public:
    ModelConfig config;
    std::vector<ConvLayer> encoder;
    LinearLayer mu_head;
    LinearLayer logvar_head;
    LinearLayer projection;
    std::vector<ConvLayer> decoder;

    SiteLayout layout() const { return SiteLayout(config.conv_channels.size()); }
    std::vector<std::string> site_names() const { return layout().names(); }

    /// Flattened width of the last encoder map.
    std::size_t bottleneck_width() const {
        const std::size_t e = config.bottleneck_extent();
        return config.conv_channels.back() * e * e;
    }

    /// Activation shape at a site for a given batch size.
    Shape site_shape(std::size_t site, std::size_t batch) const {
        const SiteLayout lay = layout();
        const std::size_t L = lay.layers();
        const auto& ch = config.conv_channels;
        if (lay.is_encoder(site)) {
            const std::size_t e = config.image_size >> (site + 1);
            return {batch, ch[site], e, e};
        }
        if (lay.is_latent(site)) return {batch, config.latent_dim};
        if (lay.is_decoder(site)) {
            const std::size_t k = site - lay.decoder(0);
            const std::size_t e = config.image_size >> (L - 1 - k);
            const std::size_t c = (k + 1 < L) ? ch[L - 2 - k] : config.channels;
            return {batch, c, e, e};
        }
        if (site == lay.recon()) return {batch, config.channels, config.image_size, config.image_size};
        throw ValidationError("site index out of range");
    }

    /// Number of analysable units at a site: channels or latent dims.
    std::size_t site_units(std::size_t site) const { return site_shape(site, 1)[1]; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (auto& l : encoder) out.insert(out.end(), {&l.weight, &l.bias});
        for (LinearLayer* l : {&mu_head, &logvar_head, &projection}) out.insert(out.end(), {&l->weight, &l->bias});
        for (auto& l : decoder) out.insert(out.end(), {&l.weight, &l.bias});
        return out;
    }

    std::vector<const Parameter*> parameters() const {
        std::vector<const Parameter*> out;
        for (Parameter* p : const_cast<ModelBundle*>(this)->parameters()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }
};

namespace detail {

/// Kaiming-uniform with ReLU gain: U(-b, b), b = sqrt(6 / fan_in).
inline Tensor kaiming_uniform(Shape shape, double fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace detail

/// Allocate a model with every weight and bias set to zero.
inline ModelBundle make_zero_model(const ModelConfig& cfg) {
    cfg.validate();
    ModelBundle m;
    m.config = cfg;
    const auto& ch = cfg.conv_channels;
    const std::size_t L = ch.size();
    const std::size_t k = 4;
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t cin = i == 0 ? cfg.channels : ch[i - 1];
        const std::string base = "encoder.conv" + std::to_string(i);
        m.encoder.push_back({Parameter(base + ".weight", Tensor({ch[i], cin, k, k})),
                             Parameter(base + ".bias", Tensor({ch[i]}))});
    }
    const std::size_t flat = m.bottleneck_width();
    m.mu_head = {Parameter("encoder.mu.weight", Tensor({cfg.latent_dim, flat})),
                 Parameter("encoder.mu.bias", Tensor({cfg.latent_dim}))};
    m.logvar_head = {Parameter("encoder.logvar.weight", Tensor({cfg.latent_dim, flat})),
                     Parameter("encoder.logvar.bias", Tensor({cfg.latent_dim}))};
    m.projection = {Parameter("decoder.projection.weight", Tensor({flat, cfg.latent_dim})),
                    Parameter("decoder.projection.bias", Tensor({flat}))};
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t cin = ch[L - 1 - i];
        const std::size_t cout = (i + 1 < L) ? ch[L - 2 - i] : cfg.channels;
        const std::string base = "decoder.deconv" + std::to_string(i);
        m.decoder.push_back({Parameter(base + ".weight", Tensor({cin, cout, k, k})),
                             Parameter(base + ".bias", Tensor({cout}))});
    }
    return m;
}

/// Seeded Kaiming-uniform (fan-in) weights, zero biases. For transposed
/// convs the fan-in counts the taps reaching one output pixel, Cin*K*K/s^2.
inline ModelBundle make_model(const ModelConfig& cfg) {
    ModelBundle m = make_zero_model(cfg);
    Rng rng = Rng(cfg.seed).derive("vae.init");
    for (auto& l : m.encoder) {
        const Shape s = l.weight.value.shape();
        l.weight.value = detail::kaiming_uniform(s, static_cast<double>(s[1] * s[2] * s[3]), rng);
    }
    for (LinearLayer* l : {&m.mu_head, &m.logvar_head, &m.projection}) {
        const Shape s = l->weight.value.shape();
        l->weight.value = detail::kaiming_uniform(s, static_cast<double>(s[1]), rng);
    }
    for (auto& l : m.decoder) {
        const Shape s = l.weight.value.shape();
        l.weight.value = detail::kaiming_uniform(s, static_cast<double>(s[0] * s[2] * s[3]) / 4.0, rng);
    }
    m.zero_grad();
    return m;
}

/// Model weights placed on a tape, either as trainable parameters or as
/// read-only constants.
struct BoundWeights {
    struct Pair {
        Var weight;
        Var bias;
    };
    std::vector<Pair> encoder;
    Pair mu_head;
    Pair logvar_head;
    Pair projection;
    std::vector<Pair> decoder;
};

inline BoundWeights bind_trainable(Tape& tape, ModelBundle& m) {
    BoundWeights b;
    auto bind = [&](Parameter& w, Parameter& bias) { return BoundWeights::Pair{tape.parameter(w), tape.parameter(bias)}; };
    for (auto& l : m.encoder) b.encoder.push_back(bind(l.weight, l.bias));
    b.mu_head = bind(m.mu_head.weight, m.mu_head.bias);
    b.logvar_head = bind(m.logvar_head.weight, m.logvar_head.bias);
    b.projection = bind(m.projection.weight, m.projection.bias);
    for (auto& l : m.decoder) b.decoder.push_back(bind(l.weight, l.bias));
    return b;
}

inline BoundWeights bind_frozen(Tape& tape, const ModelBundle& m) {
    BoundWeights b;
    auto bind = [&](const Parameter& w, const Parameter& bias) {
        return BoundWeights::Pair{tape.constant_ref(w.value), tape.constant_ref(bias.value)};
    };
    for (const auto& l : m.encoder) b.encoder.push_back(bind(l.weight, l.bias));
    b.mu_head = bind(m.mu_head.weight, m.mu_head.bias);
    b.logvar_head = bind(m.logvar_head.weight, m.logvar_head.bias);
    b.projection = bind(m.projection.weight, m.projection.bias);
    for (const auto& l : m.decoder) b.decoder.push_back(bind(l.weight, l.bias));
    return b;
}

/// z = mu + exp(0.5 * logvar) * noise
inline Var reparameterize(const Var& mu, const Var& logvar, const Var& noise) {
    if (mu.shape() != logvar.shape() || mu.shape() != noise.shape()) {
        throw ShapeError("reparameterize: mu " + shape_str(mu.shape()) + ", logvar " + shape_str(logvar.shape()) +
                         ", noise " + shape_str(noise.shape()) + " must match");
    }
    return ops::add(mu, ops::mul(ops::exp(ops::scale(logvar, 0.5)), noise));
}

inline Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise) {
    Tape tape(false);
    return reparameterize(tape.constant(mu), tape.constant(logvar), tape.constant(noise)).value();
}

/// Called after every computed site; may return a replacement activation.
using SiteHook = std::function<Var(std::size_t site, Var activation)>;

struct ForwardPass {
    std::vector<Var> sites;  // indexed by SiteLayout; empty past `stop`
    Var logits;              // pre-sigmoid decoder output, when the decoder ran
};

/// Which slice of the network to run. Sites in [start, stop) are computed;
/// sites before `start` are read from `preset` (unused entries may stay
/// empty); `input` is the image batch when start == 0. With `noise` set,
/// z = mu + exp(0.5 logvar) * noise, otherwise z = mu.
struct ForwardStart {
    std::size_t start = 0;
    std::size_t stop = static_cast<std::size_t>(-1);
    Var input;
    std::vector<Var> preset;
    Var noise;
};

inline ForwardPass run_forward(Tape& /*tape*/, const BoundWeights& w, const ModelBundle& model, const ForwardStart& from,
                               const SiteHook& hook = {}) {
    const SiteLayout lay = model.layout();
    const std::size_t L = lay.layers();
    const auto& cfg = model.config;
    std::vector<Var> v(lay.count());
    for (std::size_t s = 0; s < from.start && s < from.preset.size(); ++s) v[s] = from.preset[s];

    auto need = [&](std::size_t s) -> const Var& {
        if (!v[s].valid()) throw Error("forward: site '" + lay.name(s) + "' is required but was not provided");
        return v[s];
    };

    ForwardPass out;
    const std::size_t stop = std::min(from.stop, lay.count());
    for (std::size_t s = from.start; s < stop; ++s) {
        if (lay.is_encoder(s)) {
            const Var& in = s == 0 ? from.input : need(s - 1);
            if (!in.valid()) throw Error("forward: missing input image batch");
            v[s] = ops::relu(ops::conv2d(in, w.encoder[s].weight, w.encoder[s].bias));
        } else if (s == lay.mu() || s == lay.logvar()) {
            const Var& feat = need(lay.encoder(L - 1));
            const Var flat = ops::reshape(feat, {feat.shape()[0], model.bottleneck_width()});
            const auto& head = s == lay.mu() ? w.mu_head : w.logvar_head;
            v[s] = ops::linear(flat, head.weight, head.bias);
        } else if (s == lay.z()) {
            v[s] = from.noise.valid() ? reparameterize(need(lay.mu()), need(lay.logvar()), from.noise) : need(lay.mu());
        } else if (lay.is_decoder(s)) {
            const std::size_t k = s - lay.decoder(0);
            Var in;
            if (k == 0) {
                const Var& z = need(lay.z());
                const std::size_t e = cfg.bottleneck_extent();
                const Var h = ops::relu(ops::linear(z, w.projection.weight, w.projection.bias));
                in = ops::reshape(h, {z.shape()[0], cfg.conv_channels.back(), e, e});
            } else {
                in = need(s - 1);
            }
            const Var y = ops::conv_transpose2d(in, w.decoder[k].weight, w.decoder[k].bias);
            if (k + 1 < L) {
                v[s] = ops::relu(y);
            } else {
                out.logits = y;
                v[s] = ops::sigmoid(y);
            }
        } else {
            v[s] = need(s - 1);
        }
        if (hook) v[s] = hook(s, v[s]);
    }
    out.sites = std::move(v);
    return out;
}

inline void check_image_batch(const ModelBundle& m, const Tensor& x, const char* who) {
    const auto& c = m.config;
    if (x.rank() != 4 || x.dim(1) != c.channels || x.dim(2) != c.image_size || x.dim(3) != c.image_size) {
        throw ShapeError(std::string(who) + ": expected input (batch, " + std::to_string(c.channels) + ", " +
                         std::to_string(c.image_size) + ", " + std::to_string(c.image_size) + "), got " +
                         shape_str(x.shape()));
    }
}

inline void check_latent_batch(const ModelBundle& m, const Tensor& z, const char* who) {
    if (z.rank() != 2 || z.dim(1) != m.config.latent_dim) {
        throw ShapeError(std::string(who) + ": expected latent batch (batch, " + std::to_string(m.config.latent_dim) +
                         "), got " + shape_str(z.shape()));
    }
}

struct EncodeResult {
    Tensor mu;
    Tensor logvar;
    ActivationTrace trace;
};

/// Deterministic encoder pass; the trace holds every encoder site.
inline EncodeResult encode(const ModelBundle& model, const Tensor& x) {
    check_image_batch(model, x, "encode");
    const SiteLayout lay = model.layout();
    Tape tape(false);
    const BoundWeights w = bind_frozen(tape, model);
    ForwardStart from;
    from.stop = lay.z();
    from.input = tape.constant_ref(x);
    const ForwardPass pass = run_forward(tape, w, model, from);
    EncodeResult out;
    for (std::size_t s = 0; s < lay.z(); ++s) out.trace.set(lay.name(s), pass.sites[s].value());
    out.mu = pass.sites[lay.mu()].value();
    out.logvar = pass.sites[lay.logvar()].value();
    return out;
}

struct DecodeResult {
    Tensor recon;
    ActivationTrace trace;
};

/// Decoder pass from latent codes; output in [0, 1] through a final sigmoid.
inline DecodeResult decode(const ModelBundle& model, const Tensor& z) {
    check_latent_batch(model, z, "decode");
    const SiteLayout lay = model.layout();
    Tape tape(false);
    const BoundWeights w = bind_frozen(tape, model);
    ForwardStart from;
    from.start = lay.decoder(0);
    from.preset.assign(lay.count(), Var{});
    from.preset[lay.z()] = tape.constant_ref(z);
    const ForwardPass pass = run_forward(tape, w, model, from);
    DecodeResult out;
    for (std::size_t s = lay.decoder(0); s < lay.count(); ++s) out.trace.set(lay.name(s), pass.sites[s].value());
    out.recon = pass.sites[lay.recon()].value();
    return out;
}

}  // namespace vaemech
