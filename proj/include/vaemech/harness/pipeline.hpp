#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaemech/circuits/circuits.hpp"
#include "vaemech/core/error.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/data/dataset.hpp"
#include "vaemech/harness/checkpoint.hpp"
#include "vaemech/harness/config.hpp"
#include "vaemech/harness/schema.hpp"
#include "vaemech/intervention/engine.hpp"
#include "vaemech/io/pgm.hpp"
#include "vaemech/metrics/metrics.hpp"
#include "vaemech/model/train.hpp"

namespace vaemech {

namespace fs = std::filesystem;

/// Appends one JSON object per line to run.jsonl. A default-constructed
/// log discards everything.
class RunLog {
public:
    RunLog() = default;
    explicit RunLog(const std::string& path) : out_(std::make_shared<std::ofstream>(path, std::ios::app)) {
        if (!*out_) throw Error("cannot write run log '" + path + "'");
    }

    void write(const json& record) const {
        if (!out_) return;
        *out_ << record.dump() << "\n";
        out_->flush();
    }

private:
    std::shared_ptr<std::ofstream> out_;
};

inline DatasetHandle build_dataset(const RunConfig& cfg) {
    if (cfg.dataset.source == Source::synthetic) {
        return generate_synthetic(cfg.dataset.scm, cfg.dataset.n, cfg.dataset_seed(), cfg.model.image_size);
    }
    return load_dsprites(cfg.dataset.path, cfg.dataset.stride, cfg.dataset.offset);
}

inline json step_json(const StepRecord& s) {
    return {{"stage", "train_step"}, {"epoch", s.epoch},         {"step", s.step},
            {"batch", s.batch},      {"lr", s.lr},               {"loss", s.loss.total},
            {"recon", s.loss.recon}, {"kl", s.loss.kl},          {"tc", s.loss.tc},
            {"disc_loss", s.disc_loss}};
}

inline TrainResult train_run(const RunConfig& cfg, const DatasetHandle& data, const RunLog& log = {}) {
    TrainResult r = train(data.images, cfg.model, [&](const StepRecord& s) { log.write(step_json(s)); });
    for (const EpochRecord& e : r.log.epochs) {
        log.write({{"stage", "train_epoch"},
                   {"epoch", e.epoch},
                   {"lr", e.lr},
                   {"loss", e.loss.total},
                   {"recon", e.loss.recon},
                   {"kl", e.loss.kl},
                   {"tc", e.loss.tc},
                   {"disc_loss", e.disc_loss},
                   {"recon_per_pixel", e.recon_per_pixel}});
    }
    return r;
}

// ---- analysis ---------------------------------------------------------

/// First `count` entries of a seeded permutation of [0, n).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng rng) {
    auto p = rng.permutation(n);
    p.resize(std::min(count, n));
    return p;
}

inline Tensor gather_items(const DatasetHandle& h, const std::vector<std::size_t>& idx) {
    return gather_rows(h.images, idx, 0, idx.size());
}

/// Target value for do(f = v) on item idx: a different shape class, or a
/// uniform draw over the factor's generative range. dSprites picks one of
/// the other archive classes.
inline double draw_intervention_value(const DatasetHandle& h, std::size_t idx, Factor f, Rng& rng) {
    const FactorVector& cur = h.factors.at(idx);
    if (h.source == Source::dsprites) {
        const std::size_t col = dsprites_column(f);
        const auto& vals = h.archive->class_values(col);
        const auto own = static_cast<std::size_t>(h.archive->classes(h.rows.at(idx))[col]);
        if (vals.size() < 2) return f == Factor::shape ? static_cast<double>(own) : vals[own];
        std::size_t c = static_cast<std::size_t>(rng.below(vals.size() - 1));
        if (c >= own) ++c;
        return f == Factor::shape ? static_cast<double>(c) : vals[c];
    }
    const ScmParams& p = h.scm;
    switch (f) {
        case Factor::shape: return static_cast<double>((cur.shape + 1 + static_cast<int>(rng.below(2))) % 3);
        case Factor::scale: return rng.uniform(0.5, 1.0);
        case Factor::orientation: return rng.uniform(0.0, 2.0 * std::numbers::pi);
        case Factor::pos_x:
        case Factor::pos_y: return rng.uniform(p.position_lo, p.position_hi);
        case Factor::background: return rng.uniform(p.background_lo, p.background_hi);
        case Factor::contrast: return rng.uniform(0.2, 1.0);
    }
    return 0.0;
}

/// Batched (x, x~) for do(f) on each listed item.
inline FactorPairs intervention_batch(const DatasetHandle& h, const std::vector<std::size_t>& items, Factor f,
                                      Rng rng) {
    std::vector<Tensor> xs, xt;
    for (std::size_t idx : items) {
        const InputPair p = intervene_input(h, idx, f, draw_intervention_value(h, idx, f, rng));
        xs.push_back(p.x);
        xt.push_back(p.x_tilde);
    }
    return {concat_rows(xs), concat_rows(xt)};
}

/// Discrete class of each factor per item: shape class as is, continuous
/// factors in equal-width bins (dSprites uses its archive classes).
inline std::vector<std::vector<std::size_t>> factor_labels(const DatasetHandle& h, const std::vector<std::size_t>& idx,
                                                           std::size_t bins) {
    std::vector<std::vector<std::size_t>> out;
    for (Factor f : factors_of(h.source)) {
        std::vector<std::size_t> labels;
        if (h.source == Source::dsprites) {
            const std::size_t col = dsprites_column(f);
            for (std::size_t i : idx) labels.push_back(static_cast<std::size_t>(h.archive->classes(h.rows[i])[col]));
        } else if (f == Factor::shape) {
            for (std::size_t i : idx) labels.push_back(static_cast<std::size_t>(h.factors[i].shape));
        } else {
            std::vector<double> v;
            for (std::size_t i : idx) v.push_back(h.factors[i].get(f));
            labels = equal_width_bins(v, bins);
        }
        out.push_back(std::move(labels));
    }
    return out;
}

inline json tensor_rows(const Tensor& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.dim(0); ++i) rows.push_back(std::vector<double>(t.row(i).begin(), t.row(i).end()));
    return rows;
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline double vector_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Equal-width PS histogram over [1, |F|].
inline json ps_histogram(const std::vector<std::optional<double>>& ps, std::size_t factors, std::size_t bins = 10) {
    std::vector<double> edges(bins + 1);
    const double hi = static_cast<double>(factors);
    for (std::size_t b = 0; b <= bins; ++b) edges[b] = 1.0 + (hi - 1.0) * static_cast<double>(b) / static_cast<double>(bins);
    std::vector<std::size_t> counts(bins, 0);
    for (const auto& v : ps) {
        if (!v) continue;
        auto b = static_cast<std::size_t>((*v - 1.0) / (hi - 1.0) * static_cast<double>(bins));
        ++counts[std::min(b, bins - 1)];
    }
    return {{"edges", edges}, {"counts", counts}};
}

using StageLog = std::function<void(const std::string& stage, double seconds)>;

inline constexpr const char* kPolysemanticityNote =
    "polysemanticity is sum_f R^2 / (sum_f R)^2 * |F|: a unit driven by one factor scores |F| and a unit driven "
    "equally by all factors scores 1, which is the reverse of the verbal reading attached to the formula; "
    "monosemantic_fraction counts PS <= threshold as stated";

/// Every analysis on a trained model, as the metrics.json object. A stage
/// that throws leaves its fields null and its message in "errors".
inline json analyze_model(const RunConfig& cfg, const DatasetHandle& data, const ModelBundle& model,
                          const StageLog& on_stage = {}) {
    const AnalysisConfig& ac = cfg.analysis;
    const MetricsConfig& mc = ac.metrics;
    const SiteLayout lay = model.layout();
    const Rng root = Rng(cfg.seed).derive("analysis");
    const std::vector<Factor> factors = factors_of(data.source);
    std::vector<std::string> factor_names;
    for (Factor f : factors) factor_names.emplace_back(to_string(f));

    json r;
    r["variant"] = to_string(model.config.variant);
    r["seed"] = cfg.seed;
    r["dataset"] = {{"source", to_string(data.source)}, {"size", data.size()}, {"image_size", data.image_size()}};
    r["analysis"] = to_json_analysis(ac);
    for (const char* k : {"disentanglement_proxy", "ces", "specificity", "modularity", "polysemanticity",
                          "monosemantic_fraction", "response_profiles", "cluster_labels", "cluster_coherence",
                          "cluster_coherence_per_site", "motifs", "causal_graph", "mediation", "m_times_ces"}) {
        r[k] = nullptr;
    }
    r["notes"] = json::array({kPolysemanticityNote});
    r["errors"] = json::array();

    auto stage = [&](const std::string& name, const std::function<void()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const std::exception& e) {
            r["errors"].push_back(name + ": " + e.what());
        }
        if (on_stage) on_stage(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };

    // Latent traversals: CES, specificity and the factor-probe effect matrix
    // come from the same decodes.
    stage("latent_effects", [&] {
        const auto idx = sample_indices(data.size(), ac.sample_size, root.derive("sample"));
        const Tensor x = gather_items(data, idx);
        const Tensor z = encode(model, x).mu;
        const Tensor base = decode(model, z).recon;
        std::vector<ImageStats> stats;
        for (std::size_t i = 0; i < base.dim(0); ++i) stats.push_back(image_stats(base.row(i), data.image_size()));
        std::vector<double> ces_v, spec_v;
        std::vector<std::size_t> zeros;
        Tensor effects({model.config.latent_dim, factors.size()});
        for (std::size_t d = 0; d < model.config.latent_dim; ++d) {
            const Tensor all = decode_with_dim(model, z, d, mc.grid);
            const DimEffect e = dim_effect_from(base, all, mc.grid.size(), mc.eps);
            ces_v.push_back(e.ces);
            spec_v.push_back(e.specificity);
            zeros.push_back(e.zero_deltas);
            const auto row = factor_effects_from(stats, all, mc.grid.size(), data.image_size(), factors);
            std::copy(row.begin(), row.end(), effects.row(d).begin());
        }
        r["ces"] = {{"per_dim", ces_v}, {"mean", vector_mean(ces_v)}};
        r["specificity"] = {{"per_dim", spec_v}, {"mean", vector_mean(spec_v)}, {"zero_deltas", zeros}};
        json g = to_json(build_causal_graph(effects, factor_names, ac.graph_threshold));
        g["effects"] = tensor_rows(effects);
        r["causal_graph"] = g;
    });

    stage("unit_responses", [&] {
        const auto items = sample_indices(data.size(), ac.intervention_pairs, root.derive("interventions"));
        std::vector<FactorPairs> pairs;
        for (Factor f : factors) {
            pairs.push_back(intervention_batch(data, items, f, root.derive("do." + std::string(to_string(f)))));
        }
        std::vector<std::size_t> sites;
        for (const auto& s : ac.sites) sites.push_back(lay.index(s));
        const std::vector<Tensor> profiles = factor_response(model, pairs, sites);

        json mod = {{"per_site", json::object()}, {"degenerate_pairs", json::object()}};
        json ps = {{"factors", factor_names}, {"per_site", json::object()}};
        json labels = {{"per_site", json::object()}};
        json coherence = json::object(), motifs = json::object(), prof = json::object();
        for (std::size_t k = 0; k < sites.size(); ++k) {
            const std::string& name = ac.sites[k];
            const Tensor& R = profiles[k];
            prof[name] = tensor_rows(R);
            if (R.dim(0) >= 2) {
                const ModularityResult m = modularity_detail(transpose2(R));
                mod["per_site"][name] = m.value;
                mod["degenerate_pairs"][name] = m.degenerate_pairs;
            } else {
                mod["per_site"][name] = nullptr;
                mod["degenerate_pairs"][name] = 0;
            }
            const PolysemanticitySummary s = polysemanticity_rows(R);
            json values = json::array();
            for (const auto& v : s.values) values.push_back(optional_json(v));
            const std::size_t active = s.values.size() - s.inactive_count;
            ps["per_site"][name] = {
                {"mean", active ? json(s.mean) : json(nullptr)},
                {"values", values},
                {"inactive_count", s.inactive_count},
                {"monosemantic_fraction",
                 active ? json(monosemantic_fraction(s.values, mc.monosemantic_threshold)) : json(nullptr)},
                {"histogram", ps_histogram(s.values, factors.size())}};

            const std::size_t kk = std::min(ac.cluster_k, R.dim(0));
            const CircuitClusters c = cluster_units(R, kk, cfg.seed, 100, name);
            labels["per_site"][name] = c.labels;
            coherence[name] = cluster_coherence(c.labels, primary_factors(R));

            json m = json::object();
            for (std::size_t f = 0; f < factors.size(); ++f) {
                m[factor_names[f]] = top_channels(R, f, std::min(ac.top_k, R.dim(0)));
            }
            motifs[name] = m;
        }
        r["modularity"] = mod;
        r["polysemanticity"] = ps;
        r["response_profiles"] = prof;
        r["cluster_labels"] = labels;
        r["cluster_coherence_per_site"] = coherence;
        r["motifs"] = motifs;
        if (coherence.contains("mu")) r["cluster_coherence"] = coherence["mu"];
        if (ps["per_site"].contains("mu")) r["monosemantic_fraction"] = ps["per_site"]["mu"]["monosemantic_fraction"];
    });

    stage("disentanglement_proxy", [&] {
        const auto idx = sample_indices(data.size(), ac.proxy_sample, root.derive("proxy"));
        std::vector<Tensor> mus;
        for (std::size_t b = 0; b < idx.size(); b += 64) {
            const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                                 idx.begin() + static_cast<std::ptrdiff_t>(std::min(b + 64, idx.size())));
            mus.push_back(encode(model, gather_items(data, chunk)).mu);
        }
        r["disentanglement_proxy"] = disentanglement_proxy(concat_rows(mus), factor_labels(data, idx, mc.mi_bins), mc.mi_bins);
    });

    stage("mediation", [&] {
        const auto items = sample_indices(data.size(), ac.mediation_pairs, root.derive("mediation"));
        Rng rng = root.derive("mediation.do");
        std::vector<std::string> layers;
        for (std::size_t k = 0; k < lay.layers(); ++k) layers.push_back(lay.name(lay.encoder(k)));
        const bool per_dim = ac.mediation_probe == Probe::mu;
        std::vector<std::vector<double>> table;
        std::vector<double> layer_mean;
        std::vector<InputPair> pairs;
        for (std::size_t idx : items) {
            pairs.push_back(intervene_input(data, idx, Factor::shape, draw_intervention_value(data, idx, Factor::shape, rng)));
        }
        // Entry (layer, d): mean over pairs and channels of the single-channel
        // effect on mu_d relative to the total effect on mu_d (0 when the
        // total is below 1e-9). A recon probe collapses pixels with L2.
        for (const auto& layer : layers) {
            std::vector<double> row(per_dim ? model.config.latent_dim : 1, 0.0);
            double count = 0.0;
            for (const InputPair& p : pairs) {
                const UnitMediation um = unit_mediation(model, p.x, p.x_tilde, layer, ac.mediation_probe);
                const double te = l2_norm(um.total);
                for (std::size_t u = 0; u < um.units; ++u) {
                    const auto eff = std::span<const double>(um.effect).subspan(u * um.dims, um.dims);
                    if (per_dim) {
                        for (std::size_t d = 0; d < um.dims; ++d) {
                            if (um.total[d] > 1e-9) row[d] += eff[d] / um.total[d];
                        }
                    } else if (te > 1e-9) {
                        row[0] += l2_norm(eff) / te;
                    }
                }
                count += static_cast<double>(um.units);
            }
            for (double& v : row) v /= count;
            layer_mean.push_back(vector_mean(row));
            table.push_back(std::move(row));
        }
        r["mediation"] = {{"probe", to_string(ac.mediation_probe)},
                          {"factor", "shape"},
                          {"layers", layers},
                          {"per_layer_per_dim", table},
                          {"per_layer_mean", layer_mean}};
    });

    if (r["modularity"].is_object() && r["modularity"]["per_site"].contains("mu") &&
        r["modularity"]["per_site"]["mu"].is_number() && r["ces"].is_object()) {
        r["m_times_ces"] = modularity_effect_product(r["modularity"]["per_site"]["mu"].get<double>(),
                                                     r["ces"]["mean"].get<double>());
    }
    return r;
}

// ---- report emission --------------------------------------------------

inline std::string csv_number(const json& v) { return v.is_null() ? std::string() : v.dump(); }

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

/// CSV tables, built from the metrics object alone so that each can be
/// regenerated from metrics.json.
inline void write_tables(const json& m, const fs::path& dir) {
    fs::create_directories(dir);
    auto at = [](const json& j, std::initializer_list<const char*> path) -> json {
        const json* cur = &j;
        for (const char* k : path) {
            if (!cur->is_object() || !cur->contains(k)) return nullptr;
            cur = &(*cur)[k];
        }
        return *cur;
    };
    {
        std::ostringstream t;
        t << "metric,value\n";
        t << "disentanglement," << csv_number(m["disentanglement_proxy"]) << "\n";
        t << "ces_mean," << csv_number(at(m, {"ces", "mean"})) << "\n";
        t << "specificity_mean," << csv_number(at(m, {"specificity", "mean"})) << "\n";
        t << "mu_modularity," << csv_number(at(m, {"modularity", "per_site", "mu"})) << "\n";
        t << "m_times_ces," << csv_number(m["m_times_ces"]) << "\n";
        write_text(dir / "table1_summary.csv", t.str());
    }
    if (m["ces"].is_object() && m["specificity"].is_object()) {
        std::ostringstream t;
        t << "dim,ces,specificity\n";
        for (std::size_t d = 0; d < m["ces"]["per_dim"].size(); ++d) {
            t << d << "," << csv_number(m["ces"]["per_dim"][d]) << "," << csv_number(m["specificity"]["per_dim"][d]) << "\n";
        }
        write_text(dir / "table2_dimensions.csv", t.str());
    }
    if (m["polysemanticity"].is_object()) {
        std::ostringstream t, h;
        t << "site,mean_ps,inactive_count,monosemantic_fraction,cluster_coherence\n";
        h << "site,bin_lo,bin_hi,count\n";
        for (const auto& [site, s] : m["polysemanticity"]["per_site"].items()) {
            t << site << "," << csv_number(s["mean"]) << "," << s["inactive_count"].dump() << ","
              << csv_number(s["monosemantic_fraction"]) << ","
              << csv_number(at(m, {"cluster_coherence_per_site", site.c_str()})) << "\n";
            const json& edges = s["histogram"]["edges"];
            const json& counts = s["histogram"]["counts"];
            for (std::size_t b = 0; b < counts.size(); ++b) {
                h << site << "," << edges[b].dump() << "," << edges[b + 1].dump() << "," << counts[b].dump() << "\n";
            }
        }
        write_text(dir / "table3_polysemanticity.csv", t.str());
        write_text(dir / "ps_histogram.csv", h.str());
    }
    if (m["modularity"].is_object()) {
        std::ostringstream t;
        t << "site,modularity,degenerate_pairs\n";
        for (const auto& [site, v] : m["modularity"]["per_site"].items()) {
            t << site << "," << csv_number(v) << "," << m["modularity"]["degenerate_pairs"][site].dump() << "\n";
        }
        write_text(dir / "table4_modularity.csv", t.str());
    }
    if (m["mediation"].is_object()) {
        const json& med = m["mediation"];
        const std::size_t cols = med["per_layer_per_dim"].empty() ? 0 : med["per_layer_per_dim"][0].size();
        std::ostringstream t;
        t << "layer";
        for (std::size_t d = 0; d < cols; ++d) t << ",dim_" << d;
        t << ",mean\n";
        for (std::size_t l = 0; l < med["layers"].size(); ++l) {
            t << med["layers"][l].get<std::string>();
            for (const auto& v : med["per_layer_per_dim"][l]) t << "," << csv_number(v);
            t << "," << csv_number(med["per_layer_mean"][l]) << "\n";
        }
        write_text(dir / "table5_mediation.csv", t.str());
    }
    if (m["causal_graph"].is_object()) {
        std::ostringstream t;
        t << "dim,factor,weight\n";
        for (const auto& e : m["causal_graph"]["edges"]) {
            t << e["dim"].dump() << "," << e["factor"].get<std::string>() << "," << e["weight"].dump() << "\n";
        }
        write_text(dir / "causal_graph_edges.csv", t.str());
    }
}

inline CausalGraph graph_from_json(const json& g) {
    CausalGraph out;
    out.threshold = g["threshold"].get<double>();
    out.latent_dims = g["latent_dims"].get<std::size_t>();
    out.factors = g["factors"].get<std::vector<std::string>>();
    for (const auto& e : g["edges"]) {
        out.edges.push_back({e["dim"].get<std::size_t>(), e["factor"].get<std::string>(), e["weight"].get<double>()});
    }
    return out;
}

inline std::string image_name(const char* stem, std::size_t i) {
    std::ostringstream s;
    s << stem << std::setw(2) << std::setfill('0') << i << ".pgm";
    return s.str();
}

/// Reconstruction grid, per-dim traversal strips and delta heatmaps for
/// the first analysis sample item(s).
inline void write_images(const RunConfig& cfg, const DatasetHandle& data, const ModelBundle& model, const fs::path& dir) {
    fs::create_directories(dir);
    const Rng root = Rng(cfg.seed).derive("analysis");
    const auto idx = sample_indices(data.size(), std::min<std::size_t>(8, data.size()), root.derive("sample"));
    const Tensor x = gather_items(data, idx);
    const Tensor z = encode(model, x).mu;
    const Tensor recon = decode(model, z).recon;
    const std::size_t s = data.image_size();
    auto plane = [&](const Tensor& t, std::size_t i) { return Tensor({s, s}, std::vector<double>(t.row(i).begin(), t.row(i).end())); };

    std::vector<Tensor> grid;
    for (std::size_t i = 0; i < x.dim(0); ++i) grid.push_back(plane(x, i));
    for (std::size_t i = 0; i < x.dim(0); ++i) grid.push_back(plane(recon, i));
    std::size_t w = 0, h = 0;
    auto pix = tile_planes(grid, x.dim(0), w, h);
    write_pgm((dir / "recon_grid.pgm").string(), pix, w, h);

    const Tensor z0 = slice_rows(z, 0, 1);
    const Tensor base0 = slice_rows(recon, 0, 1);
    const auto& g = cfg.analysis.metrics.grid;
    for (std::size_t d = 0; d < model.config.latent_dim; ++d) {
        const Tensor all = decode_with_dim(model, z0, d, g);
        std::vector<Tensor> strip;
        for (std::size_t v = 0; v < g.size(); ++v) strip.push_back(plane(all, v));
        pix = tile_planes(strip, strip.size(), w, h);
        write_pgm((dir / image_name("traversal_dim", d)).string(), pix, w, h);

        // |delta| at the largest grid value, scaled so the peak is white.
        const auto last = all.row(g.size() - 1);
        std::vector<double> delta(s * s);
        double peak = 0.0;
        for (std::size_t p = 0; p < delta.size(); ++p) {
            delta[p] = std::abs(last[p] - base0[p]);
            peak = std::max(peak, delta[p]);
        }
        if (peak > 0.0) {
            for (double& v : delta) v /= peak;
        }
        write_pgm((dir / image_name("delta_dim", d)).string(), delta, s, s);
    }
}

inline std::string dump_metrics(const json& m) { return m.dump(2) + "\n"; }

/// metrics.json, tables/, images/ and the causal graph in DOT and JSON.
/// Refuses to write a report that fails the schema.
inline void write_report(const RunConfig& cfg, const DatasetHandle& data, const ModelBundle& model, const json& metrics,
                         const fs::path& out) {
    const auto problems = validate_metrics(metrics);
    if (!problems.empty()) throw Error("metrics report fails its schema: " + problems.front());
    fs::create_directories(out);
    write_text(out / "metrics.json", dump_metrics(metrics));
    write_tables(metrics, out / "tables");
    write_images(cfg, data, model, out / "images");
    if (metrics["causal_graph"].is_object()) {
        const CausalGraph g = graph_from_json(metrics["causal_graph"]);
        write_text(out / "causal_graph.dot", to_dot(g));
        write_text(out / "causal_graph.json", to_json(g).dump(2) + "\n");
    }
}

inline StageLog stage_logger(const RunLog& log) {
    return [log](const std::string& stage, double seconds) {
        log.write({{"stage", "analysis"}, {"name", stage}, {"seconds", seconds}});
    };
}

struct PipelineResult {
    json metrics;
    TrainingLog log;
};

/// generate -> train -> checkpoint -> analyze -> report, all under `out`.
inline PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    const RunLog log((out / "run.jsonl").string());
    log.write({{"stage", "config"}, {"config", to_json(cfg)}});
    const DatasetHandle data = build_dataset(cfg);
    log.write({{"stage", "dataset"}, {"size", data.size()}});
    TrainResult trained = train_run(cfg, data, log);
    save_checkpoint((out / "checkpoint.vcp").string(), trained.model);
    json metrics = analyze_model(cfg, data, trained.model, stage_logger(log));
    write_report(cfg, data, trained.model, metrics, out);
    return {std::move(metrics), std::move(trained.log)};
}

}  // namespace vaemech
