#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaemech/core/error.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/data/factors.hpp"
#include "vaemech/intervention/engine.hpp"
#include "vaemech/model/vae.hpp"

namespace vaemech {

// ---- clustering -------------------------------------------------------

struct CircuitClusters {
    std::string site;
    std::size_t k = 0;
    std::vector<std::size_t> labels;
    Tensor centroids;                // (k, features)
    std::vector<double> objective;   // within-cluster sum of squares after each assignment
    std::size_t iterations = 0;
    bool converged = false;
};

/// Each row scaled to unit L2 norm; all-zero rows are left at zero.
inline Tensor normalize_rows(const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        const double n = l2_norm(t.row(i));
        if (n > 0.0) {
            for (double& v : out.row(i)) v /= n;
        }
    }
    return out;
}

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// k-means on the row-normalized profile: k-means++ seeding, Lloyd
/// iterations up to max_iter. Ties go to the lower centroid index; an
/// emptied cluster keeps its previous centroid.
inline CircuitClusters cluster_units(const Tensor& profile, std::size_t k, std::uint64_t seed,
                                     std::size_t max_iter = 100, std::string site = {}) {
    if (profile.rank() != 2) throw ShapeError("cluster_units: expected (units, features)");
    const std::size_t n = profile.dim(0), f = profile.dim(1);
    if (k < 1 || k > n) {
        throw ValidationError("cluster_units: k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
    }
    const Tensor x = normalize_rows(profile);
    Rng rng = Rng(seed).derive("kmeans.init");

    CircuitClusters out;
    out.site = std::move(site);
    out.k = k;
    out.centroids = Tensor({k, f});
    std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(n))};
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::sq_dist(x.row(i), x.row(chosen.back())));
            total += d2[i];
        }
        std::size_t next = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            next = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && r < acc) {
                    next = i;
                    break;
                }
            }
            while (d2[next] == 0.0) --next;  // only reachable through rounding at the tail
        } else {
            // Every point coincides with a centre: take the first unchosen index.
            while (std::find(chosen.begin(), chosen.end(), next) != chosen.end()) ++next;
        }
        chosen.push_back(next);
    }
    for (std::size_t c = 0; c < k; ++c) std::copy(x.row(chosen[c]).begin(), x.row(chosen[c]).end(), out.centroids.row(c).begin());

    out.labels.assign(n, 0);
    for (std::size_t it = 0; it < max_iter; ++it) {
        bool changed = it == 0;
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = detail::sq_dist(x.row(i), out.centroids.row(c));
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (best != out.labels[i]) changed = true;
            out.labels[i] = best;
            sse += bd;
        }
        out.objective.push_back(sse);
        out.iterations = it + 1;
        if (!changed) {
            out.converged = true;
            break;
        }
        Tensor sums({k, f});
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[out.labels[i]];
            auto dst = sums.row(out.labels[i]);
            const auto src = x.row(i);
            for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) continue;
            auto dst = out.centroids.row(c);
            const auto src = sums.row(c);
            for (std::size_t j = 0; j < f; ++j) dst[j] = src[j] / static_cast<double>(count[c]);
        }
    }
    return out;
}

/// Units ranked by R[., factor] descending, lower index first on ties.
inline std::vector<std::size_t> top_channels(const Tensor& profile, std::size_t factor, std::size_t top_k) {
    if (profile.rank() != 2 || factor >= profile.dim(1)) throw ValidationError("top_channels: factor out of range");
    const std::size_t n = profile.dim(0), f = profile.dim(1);
    if (top_k > n) throw ValidationError("top_channels: top_k exceeds the number of units");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return profile[a * f + factor] > profile[b * f + factor]; });
    idx.resize(top_k);
    return idx;
}

// ---- factor probes ----------------------------------------------------

/// Image statistics used to read a factor back off a reconstruction.
/// Pixels above the median (the background level, since shapes cover well
/// under half the frame) carry weight p - median.
struct ImageStats {
    double background = 0.0;  // median intensity
    double area = 0.0;        // share of pixels above half the peak excess
    double cx = 0.5;          // excess-weighted centroid, in [0, 1]
    double cy = 0.5;
    std::vector<double> histogram;  // 16 bins over [0, 1], sums to 1
};

inline constexpr std::size_t kHistogramBins = 16;

inline ImageStats image_stats(std::span<const double> img, std::size_t size) {
    if (img.size() != size * size) throw ShapeError("image_stats: expected a single square plane");
    ImageStats s;
    std::vector<double> sorted(img.begin(), img.end());
    const std::size_t mid = sorted.size() / 2;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
    s.background = sorted[mid];
    double peak = 0.0, mass = 0.0, mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            const double w = std::max(img[i * size + j] - s.background, 0.0);
            peak = std::max(peak, w);
            mass += w;
            mx += w * (static_cast<double>(j) + 0.5);
            my += w * (static_cast<double>(i) + 0.5);
        }
    }
    if (mass > 0.0) {
        s.cx = mx / mass / static_cast<double>(size);
        s.cy = my / mass / static_cast<double>(size);
        std::size_t above = 0;
        for (double p : img) above += (p - s.background) > 0.5 * peak;
        s.area = static_cast<double>(above) / static_cast<double>(img.size());
    }
    s.histogram.assign(kHistogramBins, 0.0);
    for (double p : img) {
        const auto b = static_cast<std::size_t>(std::clamp(p, 0.0, 1.0) * static_cast<double>(kHistogramBins));
        s.histogram[std::min(b, kHistogramBins - 1)] += 1.0;
    }
    for (double& h : s.histogram) h /= static_cast<double>(img.size());
    return s;
}

/// Total-variation distance between two normalized histograms.
inline double histogram_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

/// How much factor f appears to change between two reconstructions:
/// scale -> area, pos_x/pos_y -> centroid, background -> median level,
/// shape/orientation/contrast -> intensity histogram distance.
inline double probe_change(Factor f, const ImageStats& a, const ImageStats& b) {
    switch (f) {
        case Factor::scale: return std::abs(a.area - b.area);
        case Factor::pos_x: return std::abs(a.cx - b.cx);
        case Factor::pos_y: return std::abs(a.cy - b.cy);
        case Factor::background: return std::abs(a.background - b.background);
        case Factor::shape:
        case Factor::orientation:
        case Factor::contrast: return histogram_distance(a.histogram, b.histogram);
    }
    return 0.0;
}

/// Row i of the effect matrix from one dim's traversal: mean over points
/// and values of probe_change for each factor. `all` is ordered (point, value).
inline std::vector<double> factor_effects_from(const std::vector<ImageStats>& base, const Tensor& all, std::size_t k,
                                               std::size_t size, const std::vector<Factor>& factors) {
    const std::size_t n = base.size();
    if (k == 0 || all.dim(0) != n * k) throw ShapeError("factor_effects_from: traversal shape mismatch");
    std::vector<double> e(factors.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t v = 0; v < k; ++v) {
            const ImageStats s = image_stats(all.row(i * k + v), size);
            for (std::size_t f = 0; f < factors.size(); ++f) e[f] += probe_change(factors[f], base[i], s);
        }
    }
    for (double& v : e) v /= static_cast<double>(n * k);
    return e;
}

/// E[i, f]: mean over sample points and grid values of the probe change
/// for factor f when latent dim i is set to each grid value. z = mu.
inline Tensor latent_factor_effects(const ModelBundle& model, const Tensor& x, const std::vector<Factor>& factors,
                                    const std::vector<double>& grid) {
    if (x.rank() == 0 || x.dim(0) == 0) throw ValidationError("latent_factor_effects: empty sample");
    if (grid.empty()) throw ValidationError("latent_factor_effects: grid is empty");
    if (model.config.channels != 1) throw ValidationError("latent_factor_effects: probes need single-channel images");
    const std::size_t size = model.config.image_size, d = model.config.latent_dim;
    const Tensor z = encode(model, x).mu;
    const Tensor base = decode(model, z).recon;
    std::vector<ImageStats> bs;
    for (std::size_t i = 0; i < base.dim(0); ++i) bs.push_back(image_stats(base.row(i), size));
    Tensor e({d, factors.size()});
    for (std::size_t dim = 0; dim < d; ++dim) {
        const auto row = factor_effects_from(bs, decode_with_dim(model, z, dim, grid), grid.size(), size, factors);
        std::copy(row.begin(), row.end(), e.row(dim).begin());
    }
    return e;
}

// ---- causal graph -----------------------------------------------------

struct GraphEdge {
    std::size_t dim = 0;
    std::string factor;
    double weight = 0.0;  // effect / max effect for that factor
};

struct CausalGraph {
    std::vector<std::string> factors;
    std::size_t latent_dims = 0;
    double threshold = 0.5;
    std::vector<GraphEdge> edges;
};

/// Edge i -> f iff E[i, f] / max_j E[j, f] >= threshold. Factors whose
/// column is all zero get no edges. Edges ordered by factor, then dim.
inline CausalGraph build_causal_graph(const Tensor& effects, const std::vector<std::string>& factor_names,
                                      double threshold = 0.5) {
    if (effects.rank() != 2 || effects.dim(1) != factor_names.size()) {
        throw ShapeError("build_causal_graph: effect matrix must be (dims, factors)");
    }
    if (!effects.all_finite()) throw NumericError("build_causal_graph: non-finite effect");
    const std::size_t d = effects.dim(0), nf = effects.dim(1);
    CausalGraph g;
    g.factors = factor_names;
    g.latent_dims = d;
    g.threshold = threshold;
    for (std::size_t f = 0; f < nf; ++f) {
        double mx = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (effects[i * nf + f] < 0.0) throw ValidationError("build_causal_graph: effects must be nonnegative");
            mx = std::max(mx, effects[i * nf + f]);
        }
        if (mx <= 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) {
            const double w = effects[i * nf + f] / mx;
            if (w >= threshold) g.edges.push_back({i, factor_names[f], w});
        }
    }
    return g;
}

inline std::string to_dot(const CausalGraph& g) {
    std::ostringstream out;
    out.precision(6);
    out << "digraph causal_graph {\n  rankdir=LR;\n";
    for (std::size_t i = 0; i < g.latent_dims; ++i) out << "  z" << i << " [shape=circle];\n";
    for (const auto& f : g.factors) out << "  \"" << f << "\" [shape=box];\n";
    for (const auto& e : g.edges) {
        out << "  z" << e.dim << " -> \"" << e.factor << "\" [label=\"" << e.weight << "\", penwidth="
            << 1.0 + 2.0 * e.weight << "];\n";
    }
    out << "}\n";
    return out.str();
}

inline nlohmann::json to_json(const CausalGraph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) edges.push_back({{"dim", e.dim}, {"factor", e.factor}, {"weight", e.weight}});
    return {{"threshold", g.threshold}, {"latent_dims", g.latent_dims}, {"factors", g.factors}, {"edges", edges}};
}

inline double modularity_effect_product(double modularity, double mean_ces) {
    if (!std::isfinite(modularity) || !std::isfinite(mean_ces)) {
        throw NumericError("modularity_effect_product: non-finite input");
    }
    return modularity * mean_ces;
}

}  // namespace vaemech
