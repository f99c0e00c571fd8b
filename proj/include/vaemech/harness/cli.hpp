#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vaemech/core/error.hpp"
#include "vaemech/harness/checkpoint.hpp"
#include "vaemech/harness/compare.hpp"
#include "vaemech/harness/config.hpp"
#include "vaemech/harness/pipeline.hpp"

namespace vaemech {

namespace cli_detail {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string checkpoint;
    std::size_t index = 0;
    std::size_t donor = 1;
    std::optional<std::size_t> dim;
    std::string site = "mu";
    std::vector<std::size_t> units;
    std::string factor = "shape";
    std::optional<double> value;
    std::string probe = "mu";
    std::vector<std::string> runs;
};

inline RunConfig load_config(const Options& o) {
    if (o.config.empty()) throw ValidationError("--config is required");
    RunConfig cfg = load_run_config(o.config);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.model.seed = *o.seed;
    }
    return cfg;
}

inline fs::path out_dir(const Options& o, const RunConfig* cfg) {
    if (!o.out.empty()) return o.out;
    if (cfg) return cfg->output_dir;
    throw ValidationError("--out is required");
}

inline ModelBundle load_model(const Options& o, const RunConfig& cfg) {
    if (o.checkpoint.empty()) throw ValidationError("--checkpoint is required");
    if (!fs::exists(o.checkpoint)) throw ValidationError("checkpoint file '" + o.checkpoint + "' does not exist");
    ModelBundle m = load_checkpoint(o.checkpoint);
    const ModelConfig& a = m.config;
    const ModelConfig& b = cfg.model;
    if (a.latent_dim != b.latent_dim || a.image_size != b.image_size || a.channels != b.channels ||
        a.conv_channels != b.conv_channels) {
        throw ValidationError("checkpoint architecture does not match the config's model block");
    }
    return m;
}

inline int cmd_gen_data(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    export_dataset(build_dataset(cfg), out.string());
    return 0;
}

inline int cmd_train(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    fs::create_directories(out);
    const RunLog log((out / "run.jsonl").string());
    log.write({{"stage", "config"}, {"config", to_json(cfg)}});
    const DatasetHandle data = build_dataset(cfg);
    const TrainResult r = train_run(cfg, data, log);
    save_checkpoint((out / "checkpoint.vcp").string(), r.model);
    return 0;
}

inline int finish_report(const json& metrics) {
    if (metrics["errors"].empty()) return 0;
    for (const auto& e : metrics["errors"]) std::cerr << "analysis stage failed: " << e.get<std::string>() << "\n";
    return 2;
}

inline int cmd_metrics(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    const ModelBundle model = load_model(o, cfg);
    const DatasetHandle data = build_dataset(cfg);
    fs::create_directories(out);
    const RunLog log((out / "run.jsonl").string());
    const json metrics = analyze_model(cfg, data, model, stage_logger(log));
    write_report(cfg, data, model, metrics, out);
    return finish_report(metrics);
}

inline int cmd_analyze(const Options& o) {
    const RunConfig cfg = load_config(o);
    return finish_report(run_pipeline(cfg, out_dir(o, &cfg)).metrics);
}

inline int cmd_traverse(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    const ModelBundle model = load_model(o, cfg);
    const DatasetHandle data = build_dataset(cfg);
    fs::create_directories(out);
    if (o.dim && *o.dim >= model.config.latent_dim) throw ValidationError("--dim is out of range");
    const auto& grid = cfg.analysis.metrics.grid;
    const Tensor x = data.image(o.index);
    json summary = {{"index", o.index}, {"grid", grid}, {"dims", json::array()}};
    for (std::size_t d = 0; d < model.config.latent_dim; ++d) {
        if (o.dim && *o.dim != d) continue;
        const Traversal t = latent_traverse(model, x, d, grid);
        std::vector<Tensor> planes;
        std::vector<double> l2;
        for (std::size_t v = 0; v < grid.size(); ++v) {
            planes.push_back(t.recons[v]);
            l2.push_back(l2_norm(t.deltas[v].data()));
        }
        std::size_t w = 0, h = 0;
        const auto pix = tile_planes(planes, planes.size(), w, h);
        write_pgm((out / image_name("traversal_dim", d)).string(), pix, w, h);
        summary["dims"].push_back({{"dim", d}, {"delta_l2", l2}});
    }
    write_text(out / "traversal.json", summary.dump(2) + "\n");
    return 0;
}

inline int cmd_patch(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    const ModelBundle model = load_model(o, cfg);
    const DatasetHandle data = build_dataset(cfg);
    fs::create_directories(out);
    const Tensor x1 = data.image(o.index), x2 = data.image(o.donor);
    const PatchResult p = patch(model, x1, x2, {o.site, o.units});
    const Tensor base = capture(model, x1).at("recon");
    const Tensor donor = capture(model, x2).at("recon");
    write_pgm((out / "patched.pgm").string(), p.recon);
    const json summary = {{"base", o.index},
                          {"donor", o.donor},
                          {"site", o.site},
                          {"units", o.units},
                          {"distance_to_base", l2_distance(p.recon, base)},
                          {"distance_to_donor", l2_distance(p.recon, donor)}};
    write_text(out / "patch.json", summary.dump(2) + "\n");
    return 0;
}

inline int cmd_mediate(const Options& o) {
    const RunConfig cfg = load_config(o);
    const fs::path out = out_dir(o, &cfg);
    const ModelBundle model = load_model(o, cfg);
    const DatasetHandle data = build_dataset(cfg);
    fs::create_directories(out);
    const Factor f = parse_factor(o.factor);
    double value = 0.0;
    if (o.value) {
        value = *o.value;
    } else {
        Rng rng = Rng(cfg.seed).derive("cli.mediate");
        value = draw_intervention_value(data, o.index, f, rng);
    }
    const InputPair pair = intervene_input(data, o.index, f, value);
    const Probe probe = parse_probe(o.probe);
    const SiteLayout lay = model.layout();
    std::vector<Component> comps;
    std::vector<std::string> names;
    for (std::size_t s = 0; s < lay.count(); ++s) {
        names.push_back(lay.name(s));
        comps.push_back({{lay.name(s), {}}});
    }
    const MediationResult m = mediate(model, pair.x, pair.x_tilde, {}, probe);
    json per_site = json::object();
    for (std::size_t s = 0; s < comps.size(); ++s) {
        per_site[names[s]] = mediate(model, pair.x, pair.x_tilde, {comps[s]}, probe).mediated.front();
    }
    const json summary = {{"index", o.index},   {"factor", o.factor},   {"value", value},
                          {"probe", o.probe},   {"total_effect", m.total_effect}, {"mediated", per_site}};
    write_text(out / "mediation.json", summary.dump(2) + "\n");
    return 0;
}

inline json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ValidationError("cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

inline int cmd_report(const Options& o) {
    if (o.out.empty()) throw ValidationError("--out is required");
    std::vector<json> reports;
    for (const auto& r : o.runs) {
        const fs::path p = fs::is_directory(r) ? fs::path(r) / "metrics.json" : fs::path(r);
        reports.push_back(read_json_file(p));
    }
    const Comparison c = compare_runs(reports);
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "comparison.csv", c.side_by_side_csv);
    write_text(fs::path(o.out) / "table1_comparison.csv", c.table1_csv);
    write_text(fs::path(o.out) / "orderings.json", c.orderings_json().dump(2) + "\n");
    for (const auto& ord : c.orderings) std::cerr << ord.hypothesis << ": majority " << ord.majority << "\n";
    return 0;
}

}  // namespace cli_detail

/// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
inline int run_cli(int argc, const char* const* argv) {
    using namespace cli_detail;
    Options o;
    CLI::App app{"Causal-intervention analysis of small convolutional VAEs", "vaemech"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", o.config, "Run configuration (JSON)");
    app.add_option("--seed", o.seed, "Override the configured seed");
    app.add_option("--out", o.out, "Output directory");

    auto with_checkpoint = [&](CLI::App* c) { c->add_option("--checkpoint", o.checkpoint, "Model checkpoint (VCP1)"); };
    CLI::App* gen = app.add_subcommand("gen-data", "Write the dataset as PGM images plus factors.csv");
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model and save checkpoint.vcp");
    CLI::App* traverse = app.add_subcommand("traverse", "Latent traversal strips for one item");
    with_checkpoint(traverse);
    traverse->add_option("--index", o.index, "Dataset item");
    traverse->add_option("--dim", o.dim, "Only this latent dimension");
    CLI::App* patch_cmd = app.add_subcommand("patch", "Patch donor activations into a base input");
    with_checkpoint(patch_cmd);
    patch_cmd->add_option("--index", o.index, "Base dataset item");
    patch_cmd->add_option("--donor", o.donor, "Donor dataset item");
    patch_cmd->add_option("--site", o.site, "Activation site");
    patch_cmd->add_option("--units", o.units, "Units to patch (default: all)")->delimiter(',');
    CLI::App* mediate_cmd = app.add_subcommand("mediate", "Per-site mediation of a factor intervention");
    with_checkpoint(mediate_cmd);
    mediate_cmd->add_option("--index", o.index, "Dataset item");
    mediate_cmd->add_option("--factor", o.factor, "Factor to intervene on");
    mediate_cmd->add_option("--value", o.value, "Intervention value (default: drawn)");
    mediate_cmd->add_option("--probe", o.probe, "mu or recon");
    CLI::App* metrics_cmd = app.add_subcommand("metrics", "Analyze a checkpoint and write the report");
    with_checkpoint(metrics_cmd);
    CLI::App* analyze = app.add_subcommand("analyze", "Generate, train, analyze and report in one run");
    CLI::App* report = app.add_subcommand("report", "Compare metrics.json files across runs");
    report->add_option("--runs", o.runs, "Run directories or metrics.json files")->required()->expected(2, -1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cerr << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*train_cmd) return cmd_train(o);
        if (*traverse) return cmd_traverse(o);
        if (*patch_cmd) return cmd_patch(o);
        if (*mediate_cmd) return cmd_mediate(o);
        if (*metrics_cmd) return cmd_metrics(o);
        if (*analyze) return cmd_analyze(o);
        if (*report) return cmd_report(o);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}

}  // namespace vaemech
