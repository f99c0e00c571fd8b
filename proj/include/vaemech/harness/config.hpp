#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vaemech/core/error.hpp"
#include "vaemech/data/factors.hpp"
#include "vaemech/data/synthetic.hpp"
#include "vaemech/intervention/engine.hpp"
#include "vaemech/metrics/metrics.hpp"
#include "vaemech/model/config.hpp"

namespace vaemech {

using nlohmann::json;

struct DatasetConfig {
    Source source = Source::synthetic;
    std::size_t n = 5000;  // synthetic only
    std::string path;      // dsprites archive
    std::size_t stride = 1;
    std::size_t offset = 0;
    std::optional<std::uint64_t> seed;  // defaults to the run seed
    ScmParams scm;
};

struct AnalysisConfig {
    MetricsConfig metrics;
    std::vector<std::string> sites{"encoder_conv_0", "encoder_conv_1", "encoder_conv_2", "mu",
                                   "decoder_conv_0", "decoder_conv_1", "decoder_conv_2"};
    std::size_t cluster_k = 3;
    double graph_threshold = 0.5;
    std::size_t sample_size = 32;         // points for CES, specificity and graph effects
    std::size_t intervention_pairs = 32;  // items per factor for R(n, f)
    std::size_t proxy_sample = 1000;      // items for the disentanglement proxy
    std::size_t mediation_pairs = 4;
    Probe mediation_probe = Probe::mu;
    std::size_t top_k = 3;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    DatasetConfig dataset;
    ModelConfig model;
    AnalysisConfig analysis;

    std::uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }

    void validate() const {
        ModelConfig m = model;
        m.validate();
        dataset.scm.validate();
        analysis.metrics.validate();
        if (dataset.source == Source::synthetic && dataset.n < 2) throw ValidationError("dataset.n must be >= 2");
        if (dataset.source == Source::dsprites && dataset.path.empty()) {
            throw ValidationError("dataset.path is required for dsprites");
        }
        if (dataset.stride < 1) throw ValidationError("dataset.stride must be >= 1");
        if (model.channels != 1) throw ValidationError("model.channels must be 1 for the provided datasets");
        if (dataset.source == Source::dsprites && model.image_size != 64) {
            throw ValidationError("model.image_size must be 64 for dsprites");
        }
        const SiteLayout lay(model.conv_channels.size());
        for (const auto& s : analysis.sites) lay.index(s);
        if (analysis.cluster_k < 1) throw ValidationError("analysis.cluster_k must be >= 1");
        if (!(analysis.graph_threshold >= 0.0)) throw ValidationError("analysis.graph_threshold must be >= 0");
        if (analysis.sample_size < 1 || analysis.intervention_pairs < 1 || analysis.mediation_pairs < 1) {
            throw ValidationError("analysis sample sizes must be >= 1");
        }
        if (analysis.proxy_sample < 2) throw ValidationError("analysis.proxy_sample must be >= 2");
        if (analysis.top_k < 1) throw ValidationError("analysis.top_k must be >= 1");
    }
};

namespace detail {

/// Reads an object field by field and rejects any key it was not asked for.
class StrictObject {
public:
    StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ValidationError(where_ + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError(path(key) + " has the wrong type");
        }
    }

    void get(const char* key, std::size_t& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0)) {
            throw ValidationError(path(key) + " must be a nonnegative integer");
        }
        out = v.get<std::size_t>();
    }

    void get(const char* key, double& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        if (!j_.at(key).is_number()) throw ValidationError(path(key) + " must be a number");
        out = j_.at(key).get<double>();
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ValidationError("unknown key '" + where_ + "." + k + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
    RunConfig c;
    detail::StrictObject root(j, "config");
    std::size_t seed = 0;
    root.get("seed", seed);
    c.seed = seed;
    root.get("output_dir", c.output_dir);

    if (const json* d = root.child("dataset")) {
        detail::StrictObject o(*d, "config.dataset");
        std::string source = "synthetic";
        o.get("source", source);
        c.dataset.source = parse_source(source);
        o.get("n", c.dataset.n);
        o.get("path", c.dataset.path);
        o.get("stride", c.dataset.stride);
        o.get("offset", c.dataset.offset);
        if (const json* s = o.child("seed")) {
            if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0)) {
                throw ValidationError("config.dataset.seed must be a nonnegative integer");
            }
            c.dataset.seed = s->get<std::uint64_t>();
        }
        if (const json* s = o.child("scm")) {
            detail::StrictObject p(*s, "config.dataset.scm");
            std::vector<double> base(c.dataset.scm.base_size.begin(), c.dataset.scm.base_size.end());
            p.get("base_size", base);
            if (base.size() != 3) throw ValidationError("config.dataset.scm.base_size needs 3 entries");
            std::copy(base.begin(), base.end(), c.dataset.scm.base_size.begin());
            p.get("size_noise", c.dataset.scm.size_noise);
            p.get("contrast_noise", c.dataset.scm.contrast_noise);
            p.get("background_lo", c.dataset.scm.background_lo);
            p.get("background_hi", c.dataset.scm.background_hi);
            p.get("position_lo", c.dataset.scm.position_lo);
            p.get("position_hi", c.dataset.scm.position_hi);
            p.finish();
        }
        o.finish();
    }

    if (const json* m = root.child("model")) {
        detail::StrictObject o(*m, "config.model");
        std::string variant(to_string(c.model.variant));
        o.get("variant", variant);
        c.model.variant = parse_variant(variant);
        o.get("latent_dim", c.model.latent_dim);
        o.get("beta", c.model.beta);
        o.get("gamma", c.model.gamma);
        o.get("lambda_recon", c.model.lambda_recon);
        o.get("image_size", c.model.image_size);
        o.get("channels", c.model.channels);
        o.get("conv_channels", c.model.conv_channels);
        o.get("lr", c.model.lr);
        o.get("batch_size", c.model.batch_size);
        o.get("epochs", c.model.epochs);
        o.get("weight_decay", c.model.weight_decay);
        o.get("disc_lr", c.model.disc_lr);
        o.get("disc_hidden", c.model.disc_hidden);
        o.get("disc_layers", c.model.disc_layers);
        o.get("disc_slope", c.model.disc_slope);
        o.finish();
    }

    if (const json* a = root.child("analysis")) {
        detail::StrictObject o(*a, "config.analysis");
        auto& mc = c.analysis.metrics;
        if (const json* g = o.child("grid")) {
            if (g->is_array()) {
                try {
                    mc.grid = g->get<std::vector<double>>();
                } catch (const json::exception&) {
                    throw ValidationError("config.analysis.grid must be a list of numbers");
                }
            } else {
                detail::StrictObject go(*g, "config.analysis.grid");
                std::size_t points = 13;
                double lo = -3.0, hi = 3.0;
                go.get("points", points);
                go.get("lo", lo);
                go.get("hi", hi);
                go.finish();
                mc.grid = default_grid(points, lo, hi);
            }
        }
        o.get("eps", mc.eps);
        o.get("monosemantic_threshold", mc.monosemantic_threshold);
        o.get("mi_bins", mc.mi_bins);
        o.get("sites", c.analysis.sites);
        o.get("cluster_k", c.analysis.cluster_k);
        o.get("graph_threshold", c.analysis.graph_threshold);
        o.get("sample_size", c.analysis.sample_size);
        o.get("intervention_pairs", c.analysis.intervention_pairs);
        o.get("proxy_sample", c.analysis.proxy_sample);
        o.get("mediation_pairs", c.analysis.mediation_pairs);
        std::string probe(to_string(c.analysis.mediation_probe));
        o.get("mediation_probe", probe);
        c.analysis.mediation_probe = parse_probe(probe);
        o.get("top_k", c.analysis.top_k);
        o.finish();
    }
    root.finish();
    c.model.seed = c.seed;
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

inline json to_json_analysis(const AnalysisConfig& a) {
    return {{"grid", a.metrics.grid},
            {"eps", a.metrics.eps},
            {"monosemantic_threshold", a.metrics.monosemantic_threshold},
            {"mi_bins", a.metrics.mi_bins},
            {"sites", a.sites},
            {"cluster_k", a.cluster_k},
            {"graph_threshold", a.graph_threshold},
            {"sample_size", a.sample_size},
            {"intervention_pairs", a.intervention_pairs},
            {"proxy_sample", a.proxy_sample},
            {"mediation_pairs", a.mediation_pairs},
            {"mediation_probe", to_string(a.mediation_probe)},
            {"top_k", a.top_k}};
}

/// Full echo of a validated config; parse_run_config(to_json(c)) == c.
inline json to_json(const RunConfig& c) {
    json ds = {{"source", to_string(c.dataset.source)},
               {"n", c.dataset.n},
               {"path", c.dataset.path},
               {"stride", c.dataset.stride},
               {"offset", c.dataset.offset},
               {"scm",
                {{"base_size", c.dataset.scm.base_size},
                 {"size_noise", c.dataset.scm.size_noise},
                 {"contrast_noise", c.dataset.scm.contrast_noise},
                 {"background_lo", c.dataset.scm.background_lo},
                 {"background_hi", c.dataset.scm.background_hi},
                 {"position_lo", c.dataset.scm.position_lo},
                 {"position_hi", c.dataset.scm.position_hi}}}};
    if (c.dataset.seed) ds["seed"] = *c.dataset.seed;
    const ModelConfig& m = c.model;
    json model = {{"variant", to_string(m.variant)}, {"latent_dim", m.latent_dim},
                  {"beta", m.beta},                  {"gamma", m.gamma},
                  {"lambda_recon", m.lambda_recon},  {"image_size", m.image_size},
                  {"channels", m.channels},          {"conv_channels", m.conv_channels},
                  {"lr", m.lr},                      {"batch_size", m.batch_size},
                  {"epochs", m.epochs},              {"weight_decay", m.weight_decay},
                  {"disc_lr", m.disc_lr},            {"disc_hidden", m.disc_hidden},
                  {"disc_layers", m.disc_layers},    {"disc_slope", m.disc_slope}};
    return {{"seed", c.seed}, {"output_dir", c.output_dir}, {"dataset", ds}, {"model", model}, {"analysis", to_json_analysis(c.analysis)}};
}

}  // namespace vaemech
