#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/intervention/engine.hpp"
#include "vaemech/model/vae.hpp"

namespace vaemech {

struct MetricsConfig {
    double eps = 1e-6;
    std::vector<double> grid = default_grid();
    double monosemantic_threshold = 1.5;
    std::size_t mi_bins = 20;

    void validate() const {
        if (!(eps > 0.0)) throw ValidationError("metrics.eps must be > 0");
        if (grid.empty()) throw ValidationError("metrics.grid must not be empty");
        if (!(monosemantic_threshold > 0.0)) throw ValidationError("metrics.monosemantic_threshold must be > 0");
        if (mi_bins < 2) throw ValidationError("metrics.mi_bins must be >= 2");
    }
};

/// 1 / (H(p) + eps), p the squared deltas normalized to sum 1, natural log.
/// An all-zero delta has no distribution and yields 0.
inline double specificity(std::span<const double> delta, double eps = 1e-6) {
    if (!(eps > 0.0)) throw ValidationError("specificity: eps must be > 0");
    double total = 0.0;
    for (double d : delta) total += d * d;
    if (total == 0.0) return 0.0;
    double h = 0.0;
    for (double d : delta) {
        const double p = d * d / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return 1.0 / (std::max(h, 0.0) + eps);
}

inline bool all_zero(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Pearson correlation; nullopt when either vector has zero variance.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need two equal vectors of length >= 2");
    // Test constancy exactly: a rounded mean leaves tiny residuals that
    // would otherwise correlate perfectly.
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(a) || constant(b)) return std::nullopt;
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct ModularityResult {
    double value = 0.0;
    std::size_t pairs = 0;
    /// Pairs involving a zero-variance row; their |rho| counts as 0.
    std::size_t degenerate_pairs = 0;
};

/// M = 1 - mean_{i<j} |rho(D_i, D_j)| over the K rows of a (K, N) matrix
/// of activation changes.
inline ModularityResult modularity_detail(const Tensor& deltas) {
    if (deltas.rank() != 2) throw ShapeError("modularity: expected a (K, N) matrix, got " + shape_str(deltas.shape()));
    const std::size_t k = deltas.dim(0), n = deltas.dim(1);
    if (k < 2) throw ValidationError("modularity: need at least 2 interventions, got " + std::to_string(k));
    if (n < 2) throw ValidationError("modularity: need at least 2 units, got " + std::to_string(n));
    if (!deltas.all_finite()) throw NumericError("modularity: non-finite activation change");
    ModularityResult r;
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
            const auto rho = pearson(deltas.row(i), deltas.row(j));
            ++r.pairs;
            if (rho) {
                sum += std::abs(*rho);
            } else {
                ++r.degenerate_pairs;
            }
        }
    }
    r.value = 1.0 - sum / static_cast<double>(r.pairs);
    return r;
}

inline double modularity(const Tensor& deltas) { return modularity_detail(deltas).value; }

/// PS = sum r^2 / (sum r)^2 * |F|. nullopt marks an inactive unit.
inline std::optional<double> polysemanticity(std::span<const double> r) {
    if (r.size() < 2) throw ValidationError("polysemanticity: need at least 2 factors");
    double s = 0.0, s2 = 0.0;
    for (double v : r) {
        if (!(v >= 0.0)) throw ValidationError("polysemanticity: responses must be finite and nonnegative");
        s += v;
        s2 += v * v;
    }
    if (s == 0.0) return std::nullopt;
    // Clamp away rounding; exact arithmetic stays within [1, |F|].
    const double f = static_cast<double>(r.size());
    return std::clamp(s2 / (s * s) * f, 1.0, f);
}

struct PolysemanticitySummary {
    std::vector<std::optional<double>> values;
    double mean = 0.0;  // over active units
    std::size_t inactive_count = 0;
};

/// Per-unit PS over the rows of a (units, factors) response profile.
inline PolysemanticitySummary polysemanticity_rows(const Tensor& profile) {
    if (profile.rank() != 2) throw ShapeError("polysemanticity: expected (units, factors)");
    PolysemanticitySummary out;
    double sum = 0.0;
    for (std::size_t n = 0; n < profile.dim(0); ++n) {
        out.values.push_back(polysemanticity(profile.row(n)));
        if (out.values.back()) {
            sum += *out.values.back();
        } else {
            ++out.inactive_count;
        }
    }
    const std::size_t active = out.values.size() - out.inactive_count;
    out.mean = active ? sum / static_cast<double>(active) : 0.0;
    return out;
}

/// Share of active units with PS <= threshold.
inline double monosemantic_fraction(const std::vector<std::optional<double>>& ps, double threshold) {
    std::size_t active = 0, mono = 0;
    for (const auto& v : ps) {
        if (!v) continue;
        ++active;
        if (*v <= threshold) ++mono;
    }
    if (active == 0) throw ValidationError("monosemantic_fraction: every unit is inactive");
    return static_cast<double>(mono) / static_cast<double>(active);
}

/// argmax_f R[n, f], lowest index on ties.
inline std::vector<std::size_t> primary_factors(const Tensor& profile) {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < profile.dim(0); ++n) {
        const auto r = profile.row(n);
        out.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
    }
    return out;
}

/// Size-weighted mean over clusters of (largest same-factor count / size).
inline double cluster_coherence(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& primary) {
    if (labels.size() != primary.size()) throw ShapeError("cluster_coherence: labels and factors differ in length");
    if (labels.empty()) throw ValidationError("cluster_coherence: no units");
    std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) ++counts[labels[i]][primary[i]];
    std::size_t agree = 0;
    for (const auto& [label, by_factor] : counts) {
        std::size_t best = 0;
        for (const auto& [f, c] : by_factor) best = std::max(best, c);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(labels.size());
}

// ---- model-level metrics ----------------------------------------------

struct DimEffect {
    double ces = 0.0;
    double specificity = 0.0;
    /// Interventions whose reconstruction change was exactly zero.
    std::size_t zero_deltas = 0;
};

/// CES and specificity from decoded traversals: `base` holds the N
/// unmodified reconstructions, `all` the N * K intervened ones ordered
/// (point, value). Both average over every (point, value) pair.
inline DimEffect dim_effect_from(const Tensor& base, const Tensor& all, std::size_t k, double eps = 1e-6) {
    const std::size_t n = base.dim(0), px = base.row_size();
    if (k == 0 || all.dim(0) != n * k || all.row_size() != px) throw ShapeError("dim_effect_from: traversal shape mismatch");
    DimEffect out;
    std::vector<double> d(px);
    for (std::size_t i = 0; i < n; ++i) {
        const auto b = base.row(i);
        for (std::size_t v = 0; v < k; ++v) {
            const auto r = all.row(i * k + v);
            for (std::size_t p = 0; p < px; ++p) d[p] = r[p] - b[p];
            out.ces += l2_norm(d);
            out.specificity += specificity(d, eps);
            if (all_zero(d)) ++out.zero_deltas;
        }
    }
    out.ces /= static_cast<double>(n * k);
    out.specificity /= static_cast<double>(n * k);
    return out;
}

/// CES and specificity of latent dim `dim` with z = mu.
inline DimEffect latent_dim_effect(const ModelBundle& model, const Tensor& x, std::size_t dim,
                                   const std::vector<double>& grid, double eps = 1e-6) {
    if (x.rank() == 0 || x.dim(0) == 0) throw ValidationError("latent_dim_effect: empty sample");
    if (grid.empty()) throw ValidationError("latent_dim_effect: grid is empty");
    const Tensor z = encode(model, x).mu;
    return dim_effect_from(decode(model, z).recon, decode_with_dim(model, z, dim, grid), grid.size(), eps);
}

inline double ces(const ModelBundle& model, const Tensor& x, std::size_t dim, const std::vector<double>& grid) {
    return latent_dim_effect(model, x, dim, grid).ces;
}

/// Paired inputs for one factor: x and do(f)-modified x~, same batch size.
struct FactorPairs {
    Tensor x;
    Tensor x_tilde;
};

/// Mean over items of |A_n(x) - A_n(x~)| for one site's units. Channel
/// units average the absolute change over spatial positions.
inline Tensor unit_abs_change(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() < 2) throw ShapeError("unit_abs_change: shape mismatch");
    const std::size_t batch = a.dim(0), units = a.dim(1);
    const std::size_t plane = a.numel() / (batch * units);
    Tensor out({units});
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t u = 0; u < units; ++u) {
            const std::size_t base = (i * units + u) * plane;
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += std::abs(a[base + p] - b[base + p]);
            out[u] += s / static_cast<double>(plane);
        }
    }
    for (std::size_t u = 0; u < units; ++u) out[u] /= static_cast<double>(batch);
    return out;
}

/// R[n, f] for each requested site: one (units, factors) profile per site.
/// Captures run with z = mu.
inline std::vector<Tensor> factor_response(const ModelBundle& model, const std::vector<FactorPairs>& pairs,
                                           const std::vector<std::size_t>& sites) {
    if (pairs.size() < 2) throw ValidationError("factor_response: need at least 2 factors");
    const SiteLayout lay = model.layout();
    std::vector<Tensor> out;
    for (std::size_t s : sites) {
        if (s >= lay.count()) throw ValidationError("factor_response: site index out of range");
        out.emplace_back(Shape{model.site_units(s), pairs.size()});
    }
    for (std::size_t f = 0; f < pairs.size(); ++f) {
        const auto& p = pairs[f];
        if (p.x.rank() == 0 || p.x.dim(0) == 0) {
            throw ValidationError("factor_response: factor " + std::to_string(f) + " has no intervention pairs");
        }
        detail::check_same_batch(p.x, p.x_tilde, "factor_response");
        const ActivationTrace a = capture(model, p.x);
        const ActivationTrace b = capture(model, p.x_tilde);
        for (std::size_t k = 0; k < sites.size(); ++k) {
            const Tensor r = unit_abs_change(a.value(sites[k]), b.value(sites[k]));
            for (std::size_t n = 0; n < r.numel(); ++n) out[k][n * pairs.size() + f] = r[n];
        }
    }
    return out;
}

/// Rows = factors, columns = units: the per-intervention change vectors
/// that modularity correlates.
inline Tensor transpose2(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("transpose2: expected a matrix");
    Tensor out({t.dim(1), t.dim(0)});
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) out[j * t.dim(0) + i] = t[i * t.dim(1) + j];
    return out;
}

// ---- disentanglement proxy --------------------------------------------

/// Equal-width bin index of each value over its observed range; a
/// constant input maps to bin 0.
inline std::vector<std::size_t> equal_width_bins(std::span<const double> v, std::size_t bins) {
    if (bins < 1) throw ValidationError("equal_width_bins: bins must be >= 1");
    std::vector<std::size_t> out(v.size(), 0);
    if (v.empty()) return out;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double width = (*hi - *lo) / static_cast<double>(bins);
    if (!(width > 0.0)) return out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto b = static_cast<std::size_t>((v[i] - *lo) / width);
        out[i] = std::min(b, bins - 1);
    }
    return out;
}

inline double entropy_of(const std::vector<std::size_t>& labels) {
    std::map<std::size_t, std::size_t> c;
    for (auto l : labels) ++c[l];
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [k, m] : c) {
        const double p = static_cast<double>(m) / n;
        h -= p * std::log(p);
    }
    return h;
}

/// Plug-in mutual information (nats) between two discrete label vectors.
inline double mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("mutual_information: need equal nonempty inputs");
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> joint;
    std::map<std::size_t, std::size_t> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++ca[a[i]];
        ++cb[b[i]];
    }
    const double n = static_cast<double>(a.size());
    double mi = 0.0;
    for (const auto& [ab, m] : joint) {
        const double pab = static_cast<double>(m) / n;
        mi += pab * std::log(pab * n * n / (static_cast<double>(ca[ab.first]) * static_cast<double>(cb[ab.second])));
    }
    return std::max(mi, 0.0);
}

/// MI-gap style score: for each factor with nonzero entropy, (largest MI -
/// second largest MI over latent dims) / H(factor), averaged over factors.
/// latents: (N, D); factor_labels[f][i] is the discrete class of item i.
inline double disentanglement_proxy(const Tensor& latents, const std::vector<std::vector<std::size_t>>& factor_labels,
                                    std::size_t bins = 20) {
    if (latents.rank() != 2 || latents.dim(0) < 2) throw ShapeError("disentanglement_proxy: need (N >= 2, D) latents");
    const std::size_t n = latents.dim(0), d = latents.dim(1);
    std::vector<std::vector<std::size_t>> binned(d);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = latents[i * d + j];
        binned[j] = equal_width_bins(col, bins);
    }
    double total = 0.0;
    std::size_t used = 0;
    for (const auto& labels : factor_labels) {
        if (labels.size() != n) throw ShapeError("disentanglement_proxy: factor labels do not match latents");
        const double h = entropy_of(labels);
        if (h <= 0.0) continue;
        double first = 0.0, second = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double mi = mutual_information(binned[j], labels);
            if (mi > first) {
                second = first;
                first = mi;
            } else if (mi > second) {
                second = mi;
            }
        }
        total += std::clamp((first - second) / h, 0.0, 1.0);
        ++used;
    }
    if (used == 0) throw ValidationError("disentanglement_proxy: every factor is constant in the sample");
    return total / static_cast<double>(used);
}

}  // namespace vaemech
