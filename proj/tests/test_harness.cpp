#include "catch_amalgamated.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vaemech/harness/checkpoint.hpp"
#include "vaemech/harness/cli.hpp"
#include "vaemech/harness/compare.hpp"
#include "vaemech/harness/config.hpp"
#include "vaemech/harness/pipeline.hpp"
#include "vaemech/harness/schema.hpp"
#include "vaemech/io/pgm.hpp"

using namespace vaemech;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "vaemech_test_harness" / name;
    fs::create_directories(p.parent_path());
    return p;
}

json tiny_json() {
    return json::parse(R"({
      "seed": 3,
      "dataset": {"source": "synthetic", "n": 64},
      "model": {"variant": "factor", "latent_dim": 4, "image_size": 16, "conv_channels": [4, 8],
                "batch_size": 16, "epochs": 1, "disc_hidden": 16, "disc_layers": 2},
      "analysis": {"sample_size": 8, "intervention_pairs": 8, "proxy_sample": 32, "mediation_pairs": 2,
                   "grid": {"points": 5, "lo": -2, "hi": 2},
                   "sites": ["encoder_conv_0", "encoder_conv_1", "mu", "decoder_conv_0"]}
    })");
}

std::string write_config(const std::string& name, const json& j) {
    const fs::path p = scratch(name);
    std::ofstream(p) << j.dump(2);
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Shell {
    int code = -1;
    std::string err;
};

// Runs the CLI binary named by VAEMECH_CLI, capturing stderr.
Shell run_cli_binary(const std::string& args) {
    const char* exe = std::getenv("VAEMECH_CLI");
    if (!exe) SKIP("VAEMECH_CLI is not set");
    const fs::path err = scratch("stderr.txt");
    const int status = std::system((std::string(exe) + " " + args + " 2> " + err.string()).c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

void collect_numbers(const json& j, std::set<std::string>& out) {
    if (j.is_number()) out.insert(j.dump());
    if (j.is_structured())
        for (const auto& v : j) collect_numbers(v, out);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream s(line);
        std::string c;
        while (std::getline(s, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

json fake_report(const std::string& variant, std::uint64_t seed, double ces, double mod, double mono) {
    return {{"variant", variant},
            {"seed", seed},
            {"dataset", {{"source", "synthetic"}}},
            {"analysis", {{"grid", {-1, 1}}}},
            {"disentanglement_proxy", 0.05},
            {"ces", {{"mean", ces}}},
            {"specificity", {{"mean", 0.2}}},
            {"modularity", {{"per_site", {{"mu", mod}}}}},
            {"monosemantic_fraction", mono}};
}

}  // namespace

TEST_CASE("config parsing is strict", "[config]") {
    CHECK_NOTHROW(parse_run_config(tiny_json()));
    json j = tiny_json();
    j["colour"] = 1;
    CHECK_THROWS_WITH(parse_run_config(j), Catch::Matchers::ContainsSubstring("config.colour"));
    j = tiny_json();
    j["model"]["learning_rate"] = 0.1;
    CHECK_THROWS_WITH(parse_run_config(j), Catch::Matchers::ContainsSubstring("config.model.learning_rate"));
    j = tiny_json();
    j["model"]["latent_dim"] = -1;
    CHECK_THROWS_AS(parse_run_config(j), ValidationError);
    j = tiny_json();
    j["model"]["image_size"] = 15;
    CHECK_THROWS_AS(parse_run_config(j), ValidationError);
    j = tiny_json();
    j["analysis"]["sites"] = {"mu", "encoder_conv_7"};
    CHECK_THROWS_AS(parse_run_config(j), ValidationError);
    j = tiny_json();
    j["dataset"]["source"] = "dsprites";
    CHECK_THROWS_AS(parse_run_config(j), ValidationError);
    CHECK_THROWS_AS(parse_run_config(json::array()), ValidationError);
}

TEST_CASE("config survives a JSON round trip", "[config]") {
    const RunConfig a = parse_run_config(tiny_json());
    const RunConfig b = parse_run_config(to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK(b.analysis.metrics.grid == std::vector<double>{-2, -1, 0, 1, 2});
    CHECK(b.model.seed == 3);
}

TEST_CASE("missing config file names the path", "[config]") {
    CHECK_THROWS_WITH(load_run_config("/nonexistent/run.json"), Catch::Matchers::ContainsSubstring("/nonexistent/run.json"));
}

TEST_CASE("checkpoint round trip is bit-exact", "[checkpoint]") {
    ModelConfig cfg;
    cfg.variant = Variant::beta;
    cfg.image_size = 16;
    cfg.latent_dim = 5;
    cfg.conv_channels = {3, 4};
    cfg.seed = 12;
    const ModelBundle m = make_model(cfg);
    const std::string path = scratch("model.vcp").string();
    save_checkpoint(path, m);
    const ModelBundle back = load_checkpoint(path);
    const auto pa = m.parameters(), pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(pa[i]->value.storage() == pb[i]->value.storage());
    }
    CHECK(back.config.variant == Variant::beta);
    CHECK(back.site_names() == m.site_names());
    save_checkpoint(scratch("model2.vcp").string(), back);
    CHECK(slurp(path) == slurp(scratch("model2.vcp")));
}

TEST_CASE("damaged checkpoints are rejected", "[checkpoint]") {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.conv_channels = {2};
    const std::string path = scratch("damaged.vcp").string();
    save_checkpoint(path, make_model(cfg));
    const auto size = fs::file_size(path);

    const std::string cut = scratch("cut.vcp").string();
    fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
    fs::resize_file(cut, size - 8);
    CHECK_THROWS_AS(load_checkpoint(cut), FormatError);
    // The header is intact, so inspection still works without the payload.
    const CheckpointInfo info = inspect_checkpoint(cut);
    CHECK(info.tensors.size() == make_model(cfg).parameters().size());
    CHECK(info.tensors[0].name == make_model(cfg).parameters()[0]->name);
    CHECK(info.sites.size() == 2 * 1 + 4);

    std::string bytes = slurp(path);
    bytes[0] = 'X';
    std::ofstream(scratch("magic.vcp"), std::ios::binary) << bytes;
    CHECK_THROWS_WITH(load_checkpoint(scratch("magic.vcp").string()), Catch::Matchers::ContainsSubstring("magic"));

    fs::resize_file(cut, 20);
    CHECK_THROWS_AS(inspect_checkpoint(cut), FormatError);
    CHECK_THROWS_AS(load_checkpoint(scratch("absent.vcp").string()), FormatError);
}

TEST_CASE("embedded schema matches the shipped schema file", "[schema]") {
    const fs::path file = fs::path(__FILE__).parent_path().parent_path() / "schemas" / "metrics.schema.json";
    REQUIRE(fs::exists(file));
    CHECK(json::parse(slurp(file)) == json::parse(kMetricsSchema));
}

TEST_CASE("compare: identical reports tie", "[compare]") {
    std::vector<json> reports;
    for (const char* v : {"standard", "beta", "factor"}) reports.push_back(fake_report(v, 1, 1.0, 0.1, 0.5));
    const Comparison c = compare_runs(reports);
    REQUIRE(c.orderings.size() == 3);
    for (const auto& o : c.orderings) {
        CHECK(o.per_seed.at(1) == "tie");
        CHECK(o.majority == "tie");
    }
}

TEST_CASE("compare: reference effect strengths pass the ordering", "[compare]") {
    const std::vector<json> reports{fake_report("factor", 1, 4.59, 0.1, 0.587), fake_report("standard", 1, 3.99, 0.051, 0.3),
                                    fake_report("beta", 1, 3.43, 0.438, 0.4)};
    const Comparison c = compare_runs(reports);
    for (const auto& o : c.orderings) CHECK(o.per_seed.at(1) == "pass");

    const auto rows = [&] {
        std::vector<std::string> out;
        std::stringstream s(c.table1_csv);
        std::string line;
        while (std::getline(s, line)) out.push_back(line.substr(0, line.find(',')));
        return out;
    }();
    CHECK(rows == std::vector<std::string>{"metric", "disentanglement", "ces_mean", "specificity_mean", "mu_modularity"});
    CHECK(c.table1_csv.rfind("metric,standard,beta,factor\n", 0) == 0);
    CHECK(c.table1_csv.find("ces_mean,3.99,3.43,4.59") != std::string::npos);
}

TEST_CASE("compare: majority is a simple count over seeds", "[compare]") {
    std::vector<json> reports;
    const double ces[3][3] = {{4, 3, 2}, {4, 3, 2}, {1, 3, 2}};  // factor, standard, beta per seed
    for (std::uint64_t s = 0; s < 3; ++s) {
        reports.push_back(fake_report("factor", s, ces[s][0], 0.1, 0.5));
        reports.push_back(fake_report("standard", s, ces[s][1], 0.1, 0.5));
        reports.push_back(fake_report("beta", s, ces[s][2], 0.1, 0.5));
    }
    const Comparison c = compare_runs(reports);
    CHECK(c.orderings[0].passes == 2);
    CHECK(c.orderings[0].fails == 1);
    CHECK(c.orderings[0].majority == "pass");
    reports.resize(6);
    reports[3]["ces"]["mean"] = 1.0;  // seed 1 factor now fails
    CHECK(compare_runs(reports).orderings[0].majority == "split");
}

TEST_CASE("compare: incompatible reports are rejected", "[compare]") {
    json a = fake_report("factor", 1, 1, 1, 1), b = fake_report("beta", 1, 1, 1, 1);
    CHECK_THROWS_AS(compare_runs({a}), ValidationError);
    b["analysis"]["grid"] = {0};
    CHECK_THROWS_AS(compare_runs({a, b}), ValidationError);
    b = fake_report("factor", 1, 1, 1, 1);
    CHECK_THROWS_AS(compare_runs({a, b}), ValidationError);
}

TEST_CASE("pipeline report contents", "[pipeline]") {
    const RunConfig cfg = parse_run_config(tiny_json());
    const fs::path out = scratch("pipeline");
    fs::remove_all(out);
    const PipelineResult r = run_pipeline(cfg, out);
    const json m = json::parse(slurp(out / "metrics.json"));

    SECTION("schema round trip") {
        CHECK(validate_metrics(m).empty());
        CHECK(m == r.metrics);
        json broken = m;
        broken.erase("ces");
        CHECK_FALSE(validate_metrics(broken).empty());
        broken = m;
        broken["modularity"] = "high";
        CHECK_FALSE(validate_metrics(broken).empty());
    }
    SECTION("every table number appears in metrics.json") {
        std::set<std::string> numbers;
        collect_numbers(m, numbers);
        std::size_t checked = 0;
        for (const auto& e : fs::directory_iterator(out / "tables")) {
            const auto rows = read_csv(e.path());
            for (std::size_t i = 1; i < rows.size(); ++i)
                for (std::size_t c = 1; c < rows[i].size(); ++c) {
                    const std::string& cell = rows[i][c];
                    if (cell.empty() || !(std::isdigit(static_cast<unsigned char>(cell[0])) || cell[0] == '-')) continue;
                    INFO(e.path().filename().string() << " row " << i << " col " << c << " = " << cell);
                    CHECK(numbers.count(cell) == 1);
                    ++checked;
                }
        }
        CHECK(checked > 20);
    }
    SECTION("delta heatmaps have the input size") {
        for (std::size_t d = 0; d < 4; ++d) {
            const PgmImage img = read_pgm((out / "images" / image_name("delta_dim", d)).string());
            CHECK(img.width == 16);
            CHECK(img.height == 16);
        }
    }
    SECTION("training log and graph files") {
        CHECK(fs::exists(out / "run.jsonl"));
        CHECK(fs::exists(out / "checkpoint.vcp"));
        CHECK(fs::exists(out / "causal_graph.dot"));
        CHECK(r.log.epochs.size() == 1);
        CHECK(m["errors"].empty());
    }
}

TEST_CASE("analyze twice gives byte-identical metrics", "[pipeline][determinism]") {
    const RunConfig cfg = parse_run_config(tiny_json());
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    fs::remove_all(a);
    fs::remove_all(b);
    run_pipeline(cfg, a);
    run_pipeline(cfg, b);
    CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
    CHECK(slurp(a / "checkpoint.vcp") == slurp(b / "checkpoint.vcp"));
}

TEST_CASE("cli: train then metrics equals analyze", "[cli]") {
    const std::string cfg = write_config("compose.json", tiny_json());
    const fs::path one = scratch("cli_one"), two = scratch("cli_two");
    fs::remove_all(one);
    fs::remove_all(two);
    REQUIRE(run_cli_binary("analyze --config " + cfg + " --out " + one.string()).code == 0);
    REQUIRE(run_cli_binary("train --config " + cfg + " --out " + two.string()).code == 0);
    REQUIRE(run_cli_binary("metrics --config " + cfg + " --out " + two.string() + " --checkpoint " +
                           (two / "checkpoint.vcp").string())
                .code == 0);
    CHECK(slurp(one / "metrics.json") == slurp(two / "metrics.json"));
    CHECK(slurp(one / "checkpoint.vcp") == slurp(two / "checkpoint.vcp"));

    const fs::path cmp = scratch("cli_cmp");
    fs::remove_all(cmp);
    const Shell rep = run_cli_binary("report --runs " + one.string() + " " + two.string() + " --out " + cmp.string());
    // Two reports for the same variant and seed cannot be ordered.
    CHECK(rep.code == 1);
}

TEST_CASE("cli: exit codes and messages", "[cli]") {
    const Shell missing = run_cli_binary("analyze --config /nonexistent/cfg.json");
    CHECK(missing.code == 1);
    CHECK(missing.err.find("/nonexistent/cfg.json") != std::string::npos);

    CHECK(run_cli_binary("frobnicate").code == 1);
    CHECK(run_cli_binary("analyze --bogus-flag 1").code == 1);

    json bad = tiny_json();
    bad["model"]["epochs"] = "ten";
    CHECK(run_cli_binary("train --config " + write_config("bad.json", bad)).code == 1);

    const std::string cfg = write_config("cli_cfg.json", tiny_json());
    const fs::path dir = scratch("cli_sub");
    fs::remove_all(dir);
    REQUIRE(run_cli_binary("train --config " + cfg + " --out " + dir.string()).code == 0);
    const std::string ck = " --checkpoint " + (dir / "checkpoint.vcp").string();
    CHECK(run_cli_binary("traverse --config " + cfg + " --out " + (dir / "trav").string() + ck + " --dim 1").code == 0);
    CHECK(run_cli_binary("patch --config " + cfg + " --out " + (dir / "patch").string() + ck + " --site mu --units 0,2").code == 0);
    CHECK(run_cli_binary("mediate --config " + cfg + " --out " + (dir / "med").string() + ck + " --factor pos_x").code == 0);
    CHECK(run_cli_binary("patch --config " + cfg + " --out " + (dir / "p2").string() + ck + " --site nowhere").code == 1);
    CHECK(run_cli_binary("gen-data --config " + cfg + " --out " + (dir / "data").string()).code == 0);
    CHECK(fs::exists(dir / "data" / "factors.csv"));

    std::ofstream(dir / "junk.vcp") << "not a checkpoint";
    CHECK(run_cli_binary("metrics --config " + cfg + " --out " + (dir / "m").string() + " --checkpoint " +
                         (dir / "junk.vcp").string())
              .code == 2);
}
