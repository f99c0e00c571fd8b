#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/model/trace.hpp"
#include "vaemech/model/vae.hpp"

namespace vaemech {

/// Units at one site. An empty unit list means every unit of the site.
struct PatchSpec {
    std::string site;
    std::vector<std::size_t> units;
};

enum class Probe { mu, recon };

inline std::string_view to_string(Probe p) { return p == Probe::mu ? "mu" : "recon"; }

inline Probe parse_probe(std::string_view s) {
    if (s == "mu") return Probe::mu;
    if (s == "recon") return Probe::recon;
    throw ValidationError("unknown mediation probe '" + std::string(s) + "' (expected mu or recon)");
}

namespace detail {

/// Edits a site's value in place after it is computed.
using SiteEdit = std::function<void(std::size_t site, Tensor& value)>;
using SiteFilter = std::function<bool(std::size_t site)>;

/// Site values of a frozen model for sites [start, stop). Values before
/// `start` come from `given`; `input` feeds site 0. Without noise z = mu.
inline std::vector<Tensor> propagate(const ModelBundle& model, const Tensor* input, const std::vector<Tensor>& given,
                                     std::size_t start, std::size_t stop, const SiteFilter& edits_site = {},
                                     const SiteEdit& edit = {}, const Tensor* noise = nullptr) {
    const SiteLayout lay = model.layout();
    Tape tape(false);
    const BoundWeights w = bind_frozen(tape, model);
    ForwardStart from;
    from.start = start;
    from.stop = stop;
    if (input) from.input = tape.constant_ref(*input);
    if (noise) from.noise = tape.constant_ref(*noise);
    from.preset.assign(lay.count(), Var{});
    for (std::size_t s = 0; s < start && s < given.size(); ++s) {
        if (!given[s].empty()) from.preset[s] = tape.constant_ref(given[s]);
    }
    SiteHook hook;
    if (edit) {
        hook = [&](std::size_t s, Var v) -> Var {
            if (edits_site && !edits_site(s)) return v;
            Tensor t = v.value();
            edit(s, t);
            return tape.constant(std::move(t));
        };
    }
    const ForwardPass pass = run_forward(tape, w, model, from, hook);
    std::vector<Tensor> out(lay.count());
    for (std::size_t s = 0; s < start && s < given.size(); ++s) out[s] = given[s];
    const std::size_t end = std::min(stop, lay.count());
    for (std::size_t s = start; s < end; ++s) out[s] = pass.sites[s].value();
    return out;
}

inline ActivationTrace to_trace(const SiteLayout& lay, const std::vector<Tensor>& values) {
    ActivationTrace t;
    for (std::size_t s = 0; s < values.size(); ++s) {
        if (!values[s].empty()) t.set(lay.name(s), values[s]);
    }
    return t;
}

inline std::vector<Tensor> from_trace(const SiteLayout& lay, const ActivationTrace& t) {
    std::vector<Tensor> v(lay.count());
    for (std::size_t s = 0; s < lay.count(); ++s) {
        if (t.contains(lay.name(s))) v[s] = t.at(lay.name(s));
    }
    return v;
}

inline void check_same_batch(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(who) + ": inputs differ in shape, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline void check_units(const ModelBundle& m, std::size_t site, const std::vector<std::size_t>& units) {
    const std::size_t n = m.site_units(site);
    for (std::size_t u : units) {
        if (u >= n) {
            throw ValidationError("unit " + std::to_string(u) + " out of range for site '" + m.layout().name(site) +
                                  "' with " + std::to_string(n) + " units");
        }
    }
}

}  // namespace detail

/// Copy the given units of `src` into `dst`: whole channel planes at
/// spatial sites, single columns at latent sites. Empty `units` copies all.
inline void replace_units(Tensor& dst, const Tensor& src, const std::vector<std::size_t>& units) {
    if (dst.shape() != src.shape()) {
        throw ShapeError("replace_units: shapes differ, " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
    }
    if (units.empty()) {
        dst = src;
        return;
    }
    const std::size_t batch = dst.dim(0), ch = dst.dim(1);
    const std::size_t plane = dst.numel() / (batch * ch);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t u : units) {
            if (u >= ch) throw ValidationError("replace_units: unit " + std::to_string(u) + " out of range");
            const std::size_t off = (b * ch + u) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[off + i] = src[off + i];
        }
    }
}

/// Full forward with every site recorded. Without noise, z = mu.
inline ActivationTrace capture(const ModelBundle& model, const Tensor& x, const Tensor* noise = nullptr) {
    check_image_batch(model, x, "capture");
    if (noise) check_latent_batch(model, *noise, "capture noise");
    const SiteLayout lay = model.layout();
    return detail::to_trace(lay, detail::propagate(model, &x, {}, 0, lay.count(), {}, {}, noise));
}

struct InputEffect {
    Tensor dz;                  // at the mu site
    ActivationTrace deltas;     // A_s(x~) - A_s(x) for every site
};

inline InputEffect input_effect(const ModelBundle& model, const Tensor& x, const Tensor& x_tilde) {
    detail::check_same_batch(x, x_tilde, "input_effect");
    const ActivationTrace a = capture(model, x);
    const ActivationTrace b = capture(model, x_tilde);
    InputEffect out;
    for (std::size_t i = 0; i < a.size(); ++i) out.deltas.set(a.names()[i], b.value(i) - a.value(i));
    out.dz = out.deltas.at("mu");
    return out;
}

struct LatentEffect {
    Tensor base;         // D(z)
    Tensor intervened;   // D(z~)
    Tensor delta;        // D(z~) - D(z)
};

/// Codes z = mu(x) with dimension `dim` set to each value, decoded in one
/// batch of rows ordered (item, value).
inline Tensor decode_with_dim(const ModelBundle& model, const Tensor& z, std::size_t dim,
                              const std::vector<double>& values) {
    check_latent_batch(model, z, "latent intervention");
    if (dim >= model.config.latent_dim) {
        throw ValidationError("latent dimension " + std::to_string(dim) + " out of range for latent_dim " +
                              std::to_string(model.config.latent_dim));
    }
    const std::size_t n = z.dim(0), d = z.dim(1), k = values.size();
    Tensor zt({n * k, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t c = 0; c < d; ++c) zt[(i * k + j) * d + c] = z[i * d + c];
            zt[(i * k + j) * d + dim] = values[j];
        }
    }
    return decode(model, zt).recon;
}

inline LatentEffect latent_intervene(const ModelBundle& model, const Tensor& x, std::size_t dim, double value) {
    const Tensor z = encode(model, x).mu;
    LatentEffect out;
    out.base = decode(model, z).recon;
    out.intervened = decode_with_dim(model, z, dim, {value});
    out.delta = out.intervened - out.base;
    return out;
}

/// Default traversal grid: 13 evenly spaced points on [-3, 3].
inline std::vector<double> default_grid(std::size_t points = 13, double lo = -3.0, double hi = 3.0) {
    if (points < 1) throw ValidationError("traversal grid needs at least one point");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
        g[i] = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
}

struct Traversal {
    Tensor base;                  // D(z) for the single input
    std::vector<Tensor> recons;   // one (1, C, S, S) reconstruction per grid value
    std::vector<Tensor> deltas;   // recons[j] - base
};

inline Traversal latent_traverse(const ModelBundle& model, const Tensor& x, std::size_t dim,
                                 const std::vector<double>& grid) {
    if (grid.empty()) throw ValidationError("latent_traverse: grid is empty");
    if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("latent_traverse: expects a single input (1, C, S, S)");
    const Tensor z = encode(model, x).mu;
    Traversal out;
    out.base = decode(model, z).recon;
    const Tensor all = decode_with_dim(model, z, dim, grid);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        out.recons.push_back(slice_rows(all, j, 1));
        out.deltas.push_back(out.recons.back() - out.base);
    }
    return out;
}

struct PatchResult {
    Tensor recon;
    ActivationTrace trace;  // x1's forward with the patch applied
};

/// Run x1 forward; after spec.site is computed, overwrite the chosen units
/// with x2's activations there and continue. z = mu throughout.
inline PatchResult patch(const ModelBundle& model, const Tensor& x1, const Tensor& x2, const PatchSpec& spec) {
    detail::check_same_batch(x1, x2, "patch");
    check_image_batch(model, x1, "patch");
    const SiteLayout lay = model.layout();
    const std::size_t site = lay.index(spec.site);
    detail::check_units(model, site, spec.units);
    const auto donor = detail::propagate(model, &x2, {}, 0, site + 1);
    const auto vals = detail::propagate(
        model, &x1, {}, 0, lay.count(), [site](std::size_t s) { return s == site; },
        [&](std::size_t, Tensor& v) { replace_units(v, donor[site], spec.units); });
    PatchResult out;
    out.recon = vals[lay.recon()];
    out.trace = detail::to_trace(lay, vals);
    return out;
}

/// Continue a forward pass from the site after `site`, using `values` for
/// every earlier site.
inline ActivationTrace resume_from(const ModelBundle& model, const ActivationTrace& values, const std::string& site) {
    const SiteLayout lay = model.layout();
    const std::size_t s = lay.index(site);
    const auto given = detail::from_trace(lay, values);
    return detail::to_trace(lay, detail::propagate(model, nullptr, given, s + 1, lay.count()));
}

/// A set of units, possibly spanning several sites, spliced as one.
using Component = std::vector<PatchSpec>;

struct MediationResult {
    Probe probe = Probe::mu;
    double total_effect = 0.0;
    std::vector<double> mediated;  // one per component
};

inline std::size_t probe_site(const SiteLayout& lay, Probe p) { return p == Probe::mu ? lay.mu() : lay.recon(); }

inline double l2_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

namespace detail {

/// Site index -> units (empty = all) of a component, after validation.
inline std::vector<std::optional<std::vector<std::size_t>>> component_map(const ModelBundle& model,
                                                                          const Component& c) {
    const SiteLayout lay = model.layout();
    std::vector<std::optional<std::vector<std::size_t>>> map(lay.count());
    for (const PatchSpec& p : c) {
        const std::size_t s = lay.index(p.site);
        check_units(model, s, p.units);
        if (!map[s]) {
            map[s] = p.units;
        } else if (map[s]->empty() || p.units.empty()) {
            map[s] = std::vector<std::size_t>{};
        } else {
            map[s]->insert(map[s]->end(), p.units.begin(), p.units.end());
        }
    }
    return map;
}

inline void check_disjoint(const ModelBundle& model, const std::vector<Component>& comps) {
    const SiteLayout lay = model.layout();
    std::vector<std::vector<int>> owner(lay.count());
    for (std::size_t s = 0; s < lay.count(); ++s) owner[s].assign(model.site_units(s), -1);
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        const auto map = component_map(model, comps[ci]);
        for (std::size_t s = 0; s < lay.count(); ++s) {
            if (!map[s]) continue;
            std::vector<std::size_t> units = *map[s];
            if (units.empty()) {
                for (std::size_t u = 0; u < owner[s].size(); ++u) units.push_back(u);
            }
            for (std::size_t u : units) {
                const int prev = owner[s][u];
                if (prev >= 0 && prev != static_cast<int>(ci)) {
                    throw ValidationError("mediation components " + std::to_string(prev) + " and " +
                                          std::to_string(ci) + " overlap at site '" + lay.name(s) + "' unit " +
                                          std::to_string(u));
                }
                owner[s][u] = static_cast<int>(ci);
            }
        }
    }
}

}  // namespace detail

/// TE = ||probe(x) - probe(x~)||_2. ME_C = ||probe(x) - probe(x with C's
/// activations taken from x~)||_2, splicing every site of C in order.
inline MediationResult mediate(const ModelBundle& model, const Tensor& x, const Tensor& x_tilde,
                               const std::vector<Component>& components, Probe probe = Probe::mu) {
    detail::check_same_batch(x, x_tilde, "mediate");
    check_image_batch(model, x, "mediate");
    detail::check_disjoint(model, components);
    const SiteLayout lay = model.layout();
    const std::size_t ps = probe_site(lay, probe);
    const auto base = detail::propagate(model, &x, {}, 0, ps + 1);
    const auto donor = detail::propagate(model, &x_tilde, {}, 0, ps + 1);
    MediationResult out;
    out.probe = probe;
    out.total_effect = l2_distance(base[ps], donor[ps]);
    for (const Component& c : components) {
        const auto map = detail::component_map(model, c);
        bool any = false;
        for (std::size_t s = 0; s <= ps; ++s) any = any || map[s].has_value();
        if (!any) {
            out.mediated.push_back(0.0);
            continue;
        }
        const auto spliced = detail::propagate(
            model, &x, {}, 0, ps + 1, [&](std::size_t s) { return map[s].has_value(); },
            [&](std::size_t s, Tensor& v) { replace_units(v, donor[s], *map[s]); });
        out.mediated.push_back(l2_distance(base[ps], spliced[ps]));
    }
    return out;
}

/// Per-unit, per-probe-element mediation at one site for a single input
/// pair: entry (u, d) = |probe_d(x) - probe_d(x with unit u from x~)|.
/// Also returns the per-element total effect |probe_d(x) - probe_d(x~)|.
struct UnitMediation {
    std::size_t units = 0;
    std::size_t dims = 0;
    std::vector<double> effect;  // units x dims
    std::vector<double> total;   // dims
};

inline UnitMediation unit_mediation(const ModelBundle& model, const Tensor& x, const Tensor& x_tilde,
                                    const std::string& site, Probe probe = Probe::mu) {
    detail::check_same_batch(x, x_tilde, "unit_mediation");
    check_image_batch(model, x, "unit_mediation");
    if (x.dim(0) != 1) throw ShapeError("unit_mediation: expects a single input pair");
    const SiteLayout lay = model.layout();
    const std::size_t s = lay.index(site);
    const std::size_t ps = probe_site(lay, probe);
    if (s >= ps) {
        throw ValidationError("site '" + site + "' does not precede the " + std::string(to_string(probe)) + " probe");
    }
    const auto base = detail::propagate(model, &x, {}, 0, ps + 1);
    const auto donor = detail::propagate(model, &x_tilde, {}, 0, ps + 1);
    const std::size_t units = model.site_units(s);

    // One batch row per unit, each with a single unit spliced.
    std::vector<Tensor> given(s + 1);
    for (std::size_t t = 0; t <= s; ++t) {
        std::vector<Tensor> reps(units, base[t]);
        given[t] = concat_rows(reps);
    }
    const std::size_t plane = base[s].numel() / units;
    for (std::size_t u = 0; u < units; ++u) {
        for (std::size_t i = 0; i < plane; ++i) given[s][(u * units + u) * plane + i] = donor[s][u * plane + i];
    }
    const auto spliced = detail::propagate(model, nullptr, given, s + 1, ps + 1);

    UnitMediation out;
    out.units = units;
    out.dims = base[ps].numel();
    out.total.resize(out.dims);
    for (std::size_t d = 0; d < out.dims; ++d) out.total[d] = std::abs(base[ps][d] - donor[ps][d]);
    out.effect.resize(units * out.dims);
    for (std::size_t u = 0; u < units; ++u) {
        for (std::size_t d = 0; d < out.dims; ++d) {
            out.effect[u * out.dims + d] = std::abs(base[ps][d] - spliced[ps][u * out.dims + d]);
        }
    }
    return out;
}

}  // namespace vaemech
