// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--only 1,3,8]
//
// Exit status is nonzero when any hard criterion fails. Criterion 7 is soft:
// it reports per-seed ordering verdicts and fails only if the comparison
// itself cannot be produced.

#include <malloc.h>
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/model_oracle.hpp"
#include "support/npz_writer.hpp"
#include "vaemech/vaemech.hpp"

using namespace vaemech;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failures for one criterion; the first few are kept for the report.
struct Check {
    std::size_t total = 0;
    std::size_t failed = 0;
    std::vector<std::string> first;

    void operator()(bool ok, const std::string& what) {
        ++total;
        if (ok) return;
        ++failed;
        if (first.size() < 5) first.push_back(what);
    }
    bool ok() const { return failed == 0; }
    std::string summary() const {
        std::ostringstream s;
        s << total - failed << "/" << total << " checks";
        for (const auto& f : first) s << "; " << f;
        return s.str();
    }
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

bool all_zero(const Tensor& t) {
    for (double v : t.data())
        if (v != 0.0) return false;
    return true;
}

// ---------------------------------------------------------------- 1

Outcome gradients() {
    const auto t0 = Clock::now();
    Check check;
    double worst_op = 0.0, worst_e2e = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        for (const auto& c : gradcheck::op_cases(seed)) {
            const double e = gradcheck::op_error(c);
            worst_op = std::max(worst_op, e);
            check(e < 1e-4, c.name + " seed " + std::to_string(seed) + " err " + fmt(e));
        }
    }
    for (std::uint64_t seed : {11u, 12u}) {
        for (const auto& [name, cfg] : gradcheck::e2e_configs()) {
            const double e = gradcheck::vae_loss_error(cfg, seed);
            worst_e2e = std::max(worst_e2e, e);
            check(e < 1e-3, name + " seed " + std::to_string(seed) + " err " + fmt(e));
        }
    }
    const double secs = seconds_since(t0);
    check(secs < 60.0, "suite took " + fmt(secs) + " s");
    return {check.ok(), "worst op rel err " + fmt(worst_op, 3) + ", worst end-to-end " + fmt(worst_e2e, 3) + ", " +
                            fmt(secs, 3) + " s, " + check.summary()};
}

// ---------------------------------------------------------------- 2

std::vector<double> random_vector(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> v(n);
    for (auto& x : v) x = rng.below(k);
    return v;
}

// R for one site by direct loops: per item, per unit, the plane mean.
std::vector<double> response_oracle(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.dim(0), u = a.dim(1), plane = a.numel() / (n * u);
    std::vector<double> out(u, 0.0);
    for (std::size_t unit = 0; unit < u; ++unit) {
        double items = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t at = (i * u + unit) * plane + p;
                s += std::abs(a[at] - b[at]);
            }
            items += s / static_cast<double>(plane);
        }
        out[unit] = items / static_cast<double>(n);
    }
    return out;
}

Outcome metric_oracles() {
    constexpr double tol = 1e-10;
    constexpr int trials = 150;
    Check check;
    auto near = [&](double a, double b, const std::string& what) { check(std::abs(a - b) <= tol, what + " " + fmt(a, 17) + " vs " + fmt(b, 17)); };

    // Worked examples.
    const Tensor three({3, 4}, {1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0});
    near(modularity(three), 2.0 / 3.0, "M example");
    near(modularity(three), oracle::modularity(three), "M example vs oracle");
    near(*polysemanticity(std::vector<double>{2, 1, 1, 0}), 1.5, "PS example");
    near(specificity(std::vector<double>(4, 0.2)), 1.0 / (std::log(4.0) + 1e-6), "S example");
    near(specificity(std::vector<double>(4, 0.2)), oracle::specificity(std::vector<double>(4, 0.2)), "S example vs oracle");
    check(std::abs(specificity(std::vector<double>(4, 0.2)) - 1.0 / std::log(4.0)) < 1e-6, "S example vs 1/ln 4");

    Rng rng(2024);
    for (int t = 0; t < trials; ++t) {
        const std::string tag = "trial " + std::to_string(t);
        const auto d = random_vector(1 + rng.below(100), rng);
        near(specificity(d), oracle::specificity(d), "S " + tag);

        const Tensor m = oracle::random_matrix(2 + rng.below(6), 2 + rng.below(12), rng, false);
        near(modularity(m), oracle::modularity(m), "M " + tag);

        const Tensor r = oracle::random_matrix(1 + rng.below(12), 2 + rng.below(6), rng, true);
        const PolysemanticitySummary ps = polysemanticity_rows(r);
        std::vector<std::optional<double>> ref;
        for (std::size_t n = 0; n < r.dim(0); ++n) {
            ref.push_back(oracle::polysemanticity(oracle::row_of(r, n)));
            check(ps.values[n].has_value() == ref.back().has_value(), "PS activity " + tag);
            if (ref.back() && ps.values[n]) near(*ps.values[n], *ref.back(), "PS " + tag);
        }
        if (ps.inactive_count < r.dim(0)) {
            const double th = rng.uniform(1.0, static_cast<double>(r.dim(1)));
            near(monosemantic_fraction(ps.values, th), oracle::monosemantic_fraction(ref, th), "mono " + tag);
        }

        const std::size_t units = 1 + rng.below(30);
        const auto labels = random_labels(units, 1 + rng.below(5), rng);
        const auto primary = random_labels(units, 1 + rng.below(4), rng);
        near(cluster_coherence(labels, primary), oracle::cluster_coherence(labels, primary), "coherence " + tag);

        const std::size_t n = 20 + rng.below(200), dims = 1 + rng.below(4);
        Tensor z({n, dims});
        for (std::size_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
        std::vector<std::vector<std::size_t>> f{random_labels(n, 2 + rng.below(3), rng), random_labels(n, 3, rng)};
        for (std::size_t i = 0; i < n; ++i) z[i * dims] += static_cast<double>(f[0][i]);
        const std::size_t nb = 2 + rng.below(20);
        near(disentanglement_proxy(z, f, nb), oracle::disentanglement_proxy(z, f, nb), "MI proxy " + tag);

        const Shape shape = rng.below(2) == 0 ? Shape{1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(5)}
                                              : Shape{1 + rng.below(4), 1 + rng.below(12)};
        const Tensor a = oracle::random_tensor(shape, rng), b = oracle::random_tensor(shape, rng);
        const Tensor got = unit_abs_change(a, b);
        const auto want = response_oracle(a, b);
        for (std::size_t u = 0; u < want.size(); ++u) near(got[u], want[u], "R " + tag);
    }

    // CES and R through real models against the loop forward.
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.latent_dim = 2;
    cfg.conv_channels = {2, 3};
    for (int t = 0; t < 100; ++t) {
        const std::string tag = "model trial " + std::to_string(t);
        cfg.seed = 100 + static_cast<std::uint64_t>(t);
        const ModelBundle model = make_model(cfg);
        const Tensor x = oracle::random_tensor({1 + rng.below(3), 1, 8, 8}, rng, 0, 1);
        std::vector<double> grid(1 + rng.below(6));
        for (auto& g : grid) g = rng.uniform(-3.0, 3.0);
        const std::size_t dim = rng.below(2);
        near(ces(model, x, dim, grid), oracle::ces(model, x, dim, grid), "CES " + tag);

        if (t % 4 == 0) {
            const Tensor xt = oracle::random_tensor(x.shape(), rng, 0, 1);
            const SiteLayout lay = model.layout();
            const std::vector<std::size_t> sites{0, lay.mu(), lay.decoder(0)};
            const auto rs = factor_response(model, {{x, xt}, {xt, x}}, sites);
            const auto sa = oracle::forward_sites(model, x), sb = oracle::forward_sites(model, xt);
            for (std::size_t k = 0; k < sites.size(); ++k) {
                const auto want = response_oracle(sa[sites[k]], sb[sites[k]]);
                for (std::size_t u = 0; u < want.size(); ++u) {
                    near(rs[k][u * 2], want[u], "R(model) " + tag);
                    near(rs[k][u * 2 + 1], want[u], "R(model, swapped) " + tag);
                }
            }
        }
    }
    return {check.ok(), std::to_string(trials) + " random trials per metric, 100 CES model trials, " + check.summary()};
}

// ---------------------------------------------------------------- 3

ModelConfig law_config(std::size_t layers) {
    ModelConfig c;
    c.image_size = 16;
    c.latent_dim = 3;
    c.conv_channels = layers == 3 ? std::vector<std::size_t>{4, 6, 8} : std::vector<std::size_t>{4, 6};
    c.batch_size = 8;
    c.epochs = 2;
    c.disc_hidden = 8;
    c.disc_layers = 2;
    return c;
}

ModelBundle random_weight_model(std::size_t layers, std::uint64_t seed) {
    ModelConfig c = law_config(layers);
    c.seed = seed;
    ModelBundle m = make_model(c);
    Rng rng = Rng(seed).derive("acceptance.bias");
    for (Parameter* p : m.parameters())
        if (p->value.rank() == 1) p->value = oracle::random_tensor(p->value.shape(), rng, -0.2, 0.2);
    return m;
}

Outcome intervention_laws() {
    const DatasetHandle data = generate_synthetic(ScmParams{}, 64, 23, 16);
    std::vector<std::pair<std::string, ModelBundle>> models;
    for (std::uint64_t s : {1u, 2u, 3u}) models.emplace_back("random 3-layer seed " + std::to_string(s), random_weight_model(3, s));
    models.emplace_back("random 2-layer seed 4", random_weight_model(2, 4));
    for (Variant v : {Variant::standard, Variant::beta, Variant::factor}) {
        ModelConfig c = law_config(3);
        c.variant = v;
        c.seed = 7;
        models.emplace_back(std::string("trained ") + std::string(to_string(v)), train(data.images, c).model);
    }

    Check check;
    Rng rng(99);
    std::size_t ten_site_models = 0;
    for (const auto& [name, m] : models) {
        const SiteLayout lay = m.layout();
        const auto sites = m.site_names();
        ten_site_models += sites.size() == 10;
        check(sites.size() == 2 * m.encoder.size() + 4, name + ": site count");
        for (int trial = 0; trial < 4; ++trial) {
            const std::string tag = name + " trial " + std::to_string(trial);
            const std::size_t b = 1 + rng.below(3);
            auto draw = [&] {
                if (rng.below(2) == 0) return oracle::random_tensor({b, 1, 16, 16}, rng, 0, 1);
                return slice_rows(data.images, rng.below(data.size() - b), b);
            };
            const Tensor x = draw(), xt = draw();
            const ActivationTrace own = capture(m, x), donor = capture(m, xt);

            // Self-patch identity and full-site patch equivalence.
            for (const auto& site : sites) {
                const PatchResult self = patch(m, x, x, {site, {}});
                check(self.trace == own, tag + ": self-patch at " + site);
                const PatchResult full = patch(m, x, xt, {site, {}});
                check(full.trace.at(site).storage() == donor.at(site).storage(), tag + ": patched value at " + site);
                // logvar feeds nothing downstream when z = mu.
                const ActivationTrace& expect = site == "logvar" ? own : donor;
                for (std::size_t s = lay.index(site) + 1; s < lay.count(); ++s) {
                    if (site == "mu" && s == lay.logvar()) continue;  // sibling head, not downstream
                    check(full.trace.value(s).storage() == expect.value(s).storage(),
                          tag + ": full patch at " + site + " vs donor at " + lay.name(s));
                }
            }

            // Null interventions.
            const InputEffect none = input_effect(m, x, x);
            check(all_zero(none.dz), tag + ": input effect dz");
            for (std::size_t s = 0; s < none.deltas.size(); ++s) check(all_zero(none.deltas.value(s)), tag + ": input effect delta");
            const Tensor x1 = slice_rows(x, 0, 1);
            const Tensor mu = encode(m, x1).mu;
            for (std::size_t d = 0; d < m.config.latent_dim; ++d)
                check(all_zero(latent_intervene(m, x1, d, mu[d]).delta), tag + ": latent set to own value");
            const MediationResult same = mediate(m, x, x, {{{"encoder_conv_0", {0}}}, {{"mu", {}}}});
            check(same.total_effect == 0.0 && same.mediated[0] == 0.0 && same.mediated[1] == 0.0, tag + ": mediation of x with itself");

            // Mediation boundaries.
            for (Probe probe : {Probe::mu, Probe::recon}) {
                const std::size_t ps = probe_site(lay, probe);
                Component all;
                for (std::size_t s = 0; s < ps; ++s) all.push_back({lay.name(s), {}});
                const MediationResult r = mediate(m, x, xt, {{}, all}, probe);
                const double te = l2_distance(own.value(ps), donor.value(ps));
                const std::string ptag = tag + " probe " + std::string(to_string(probe));
                check(r.total_effect == te, ptag + ": TE");
                check(r.mediated[0] == 0.0, ptag + ": ME_empty");
                check(r.mediated[1] == r.total_effect, ptag + ": ME_all");
                // Single full sites are disjoint, so they can share one call.
                std::vector<Component> cuts;
                for (std::size_t s = 0; s < lay.count(); ++s)
                    if (lay.is_encoder(s) || s == lay.mu() || s == lay.z()) cuts.push_back({{lay.name(s), {}}});
                const MediationResult c = mediate(m, x, xt, cuts, probe);
                for (std::size_t k = 0; k < cuts.size(); ++k) {
                    const std::size_t s = lay.index(cuts[k][0].site);
                    // Every path to the probe crosses each full encoder site, and
                    // the probe site itself; sites after the probe mediate nothing.
                    check(c.mediated[k] == (s <= ps ? c.total_effect : 0.0), ptag + ": full cut at " + cuts[k][0].site);
                }
            }
        }
    }
    check(ten_site_models >= 1, "no 10-site model exercised");
    return {check.ok(), std::to_string(models.size()) + " models (" + std::to_string(ten_site_models) + " with 10 sites), " +
                            check.summary()};
}

// ---------------------------------------------------------------- 4

Outcome range_invariants() {
    Check check;
    Rng rng(4242);
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.latent_dim = 2;
    cfg.conv_channels = {2};
    double lo_m = 1.0, hi_m = 0.0, lo_ps = 1e9, hi_ps_gap = 1e9, lo_s = 1e300, lo_ces = 1e300;
    for (int t = 0; t < 10000; ++t) {
        const std::string tag = "input " + std::to_string(t);
        const Tensor m = oracle::random_matrix(2 + rng.below(5), 2 + rng.below(10), rng, rng.below(2) == 0);
        const double mv = modularity(m);
        lo_m = std::min(lo_m, mv);
        hi_m = std::max(hi_m, mv);
        check(mv >= 0.0 && mv <= 1.0, "M out of range at " + tag + ": " + fmt(mv, 17));

        std::vector<double> r(2 + rng.below(6));
        const std::size_t kind = rng.below(4);
        for (auto& v : r) {
            v = rng.below(4) == 0 ? 0.0 : rng.uniform(0.0, 3.0);
            if (kind == 0) v = 0.1;  // uniform rows sit on the lower bound
        }
        if (const auto ps = polysemanticity(r)) {
            const double f = static_cast<double>(r.size());
            lo_ps = std::min(lo_ps, *ps);
            hi_ps_gap = std::min(hi_ps_gap, f - *ps);
            check(*ps >= 1.0 && *ps <= f, "PS out of range at " + tag + ": " + fmt(*ps, 17));
        }

        auto d = random_vector(1 + rng.below(50), rng);
        if (rng.below(5) == 0)
            for (std::size_t i = 1; i < d.size(); ++i) d[i] = 0.0;  // one-hot deltas
        if (!vaemech::all_zero(std::span<const double>(d))) {
            const double s = specificity(d);
            lo_s = std::min(lo_s, s);
            check(s > 0.0, "S not positive at " + tag);
        }

        if (t % 20 == 0) {
            cfg.seed = static_cast<std::uint64_t>(t);
            const ModelBundle model = make_model(cfg);
            const Tensor x = oracle::random_tensor({1 + rng.below(2), 1, 8, 8}, rng, 0, 1);
            std::vector<double> grid(1 + rng.below(5));
            for (auto& g : grid) g = rng.uniform(-3.0, 3.0);
            const double c = ces(model, x, rng.below(2), grid);
            lo_ces = std::min(lo_ces, c);
            check(c >= 0.0, "CES negative at " + tag);
        }
    }
    return {check.ok(), "M in [" + fmt(lo_m) + ", " + fmt(hi_m) + "], min PS " + fmt(lo_ps, 17) + ", min |F|-PS " +
                            fmt(hi_ps_gap, 3) + ", min S " + fmt(lo_s) + ", min CES " + fmt(lo_ces) + ", " + check.summary()};
}

// ---------------------------------------------------------------- 5

Outcome desk_training() {
    const auto t0 = Clock::now();
    const DatasetHandle data = generate_synthetic(ScmParams{}, 5000, 1, 64);
    ModelConfig cfg;  // standard, 64x64, 32/64/128 channels, latent 10
    cfg.epochs = 10;
    cfg.batch_size = 64;
    cfg.lr = 1e-3;
    cfg.seed = 1;
    const TrainResult r = train(data.images, cfg);
    const double secs = seconds_since(t0);
    Check check;
    const auto& ep = r.log.epochs;
    check(ep.size() == 10, "expected 10 epochs");
    const double bce = ep.back().recon_per_pixel;
    check(bce < 0.3, "final per-pixel BCE " + fmt(bce));
    std::ostringstream losses;
    for (std::size_t i = 0; i < ep.size(); ++i) {
        losses << (i ? " " : "") << fmt(ep[i].loss.total, 6);
        if (i >= 2) check(ep[i].loss.total <= ep[i - 1].loss.total, "epoch " + std::to_string(i + 1) + " loss rose");
    }
    check(secs < 900.0, "runtime " + fmt(secs) + " s");
    return {check.ok(), "final per-pixel BCE " + fmt(bce) + ", epoch losses [" + losses.str() + "], " + fmt(secs, 4) + " s, " +
                            check.summary()};
}

// ---------------------------------------------------------------- 6, 7

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr const char* kVariants[] = {"standard", "beta", "factor"};

RunConfig desk_run(const std::string& variant, std::uint64_t seed, const fs::path& out) {
    json j = {{"seed", seed},
              {"output_dir", out.string()},
              {"dataset", {{"source", "synthetic"}, {"n", 2000}}},
              {"model", {{"variant", variant}, {"epochs", 5}}}};
    return parse_run_config(j);
}

/// Reduced-scale runs shared by criteria 6 and 7, produced once.
const std::map<std::pair<std::string, std::uint64_t>, json>& desk_reports(const fs::path& work) {
    static std::map<std::pair<std::string, std::uint64_t>, json> reports;
    if (!reports.empty()) return reports;
    for (std::uint64_t seed : kSeeds) {
        for (const char* v : kVariants) {
            const fs::path out = work / "desk" / (std::string(v) + "_seed" + std::to_string(seed));
            const auto t0 = Clock::now();
            const PipelineResult r = run_pipeline(desk_run(v, seed, out), out);
            std::cerr << "  desk run " << v << " seed " << seed << ": " << fmt(seconds_since(t0), 3) << " s, final BCE/pixel "
                      << fmt(r.log.epochs.back().recon_per_pixel) << "\n";
            reports[{v, seed}] = r.metrics;
        }
    }
    return reports;
}

Outcome graph_recovery(const fs::path& work) {
    const auto& reports = desk_reports(work);
    std::size_t good = 0;
    std::ostringstream detail;
    for (std::uint64_t seed : kSeeds) {
        const json& m = reports.at({"standard", seed});
        bool seed_ok = m["causal_graph"].is_object();
        detail << (seed == kSeeds[0] ? "" : "; ") << "seed " << seed << ":";
        for (const char* f : {"pos_x", "pos_y"}) {
            std::size_t edges = 0;
            double best = 0.0;
            if (m["causal_graph"].is_object())
                for (const auto& e : m["causal_graph"]["edges"])
                    if (e["factor"] == f && e["weight"].get<double>() >= 0.5) {
                        ++edges;
                        best = std::max(best, e["weight"].get<double>());
                    }
            seed_ok = seed_ok && edges > 0;
            detail << " " << f << " " << edges << " dims (max w " << fmt(best, 3) << ")";
        }
        good += seed_ok;
    }
    return {good >= 2, std::to_string(good) + "/3 seeds assign both positions; " + detail.str()};
}

Outcome variant_ordering(const fs::path& work) {
    const auto& reports = desk_reports(work);
    std::vector<json> all;
    for (const auto& [key, m] : reports) all.push_back(m);
    const Comparison c = compare_runs(all);
    const fs::path dir = work / "desk" / "comparison";
    fs::create_directories(dir);
    std::ofstream(dir / "comparison.csv") << c.side_by_side_csv;
    std::ofstream(dir / "table1_comparison.csv") << c.table1_csv;
    std::ostringstream detail;
    bool complete = c.orderings.size() == 3;
    for (const auto& o : c.orderings) {
        detail << "; " << o.hypothesis << ": majority " << o.majority << " (";
        for (const auto& [seed, v] : o.per_seed) detail << (seed == o.per_seed.begin()->first ? "" : " ") << "s" << seed << "=" << v;
        detail << ")";
        complete = complete && o.missing == 0 && o.per_seed.size() == 3;
    }
    return {complete, "soft, verdicts reported" + detail.str()};
}

// ---------------------------------------------------------------- 8

int run_command(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& work) {
    Check check;
    const fs::path dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const json cfg = json::parse(R"({
      "seed": 5,
      "dataset": {"source": "synthetic", "n": 256},
      "model": {"variant": "factor", "latent_dim": 4, "image_size": 32, "conv_channels": [4, 8, 8],
                "batch_size": 32, "epochs": 2, "disc_hidden": 16, "disc_layers": 2},
      "analysis": {"sample_size": 8, "intervention_pairs": 8, "proxy_sample": 128, "mediation_pairs": 2}
    })");
    const fs::path cfg_path = dir / "config.json";
    std::ofstream(cfg_path) << cfg.dump(2);

    std::string how;
    if (const char* exe = std::getenv("VAEMECH_CLI")) {
        how = "via CLI analyze";
        for (const char* run : {"a", "b"}) {
            const int code = run_command(std::string(exe) + " analyze --config " + cfg_path.string() + " --out " + (dir / run).string() +
                                         " > " + (dir / (std::string(run) + ".log")).string() + " 2>&1");
            check(code == 0, std::string("analyze run ") + run + " exited " + std::to_string(code));
        }
    } else {
        how = "in-process (VAEMECH_CLI unset)";
        const RunConfig rc = parse_run_config(cfg);
        run_pipeline(rc, dir / "a");
        run_pipeline(rc, dir / "b");
    }
    const std::string a = slurp(dir / "a" / "metrics.json"), b = slurp(dir / "b" / "metrics.json");
    check(!a.empty() && a == b, "metrics.json differs between runs");
    check(slurp(dir / "a" / "checkpoint.vcp") == slurp(dir / "b" / "checkpoint.vcp"), "checkpoints differ between runs");

    // Round trip of a trained checkpoint: parameters and bytes.
    const ModelBundle m = load_checkpoint((dir / "a" / "checkpoint.vcp").string());
    save_checkpoint((dir / "resaved.vcp").string(), m);
    check(slurp(dir / "a" / "checkpoint.vcp") == slurp(dir / "resaved.vcp"), "re-saved checkpoint bytes differ");
    const ModelBundle back = load_checkpoint((dir / "resaved.vcp").string());
    const auto pa = m.parameters(), pb = back.parameters();
    check(pa.size() == pb.size(), "parameter count changed");
    for (std::size_t i = 0; i < std::min(pa.size(), pb.size()); ++i)
        check(pa[i]->value.storage() == pb[i]->value.storage(), "parameter " + pa[i]->name + " changed");
    const Tensor x = generate_synthetic(ScmParams{}, 4, 8, 32).images;
    check(capture(m, x) == capture(back, x), "reloaded model computes differently");
    return {check.ok(), how + ", metrics.json " + std::to_string(a.size()) + " bytes, " + check.summary()};
}

// ---------------------------------------------------------------- 9

Outcome dsprites_ingestion(const fs::path& work) {
    Check check;
    const fs::path dir = work / "dsprites";
    fs::create_directories(dir);
    const fixture::DspritesFixture g = fixture::make_dsprites({});
    const std::string path = (dir / "fixture.npz").string();
    fixture::write_dsprites(path, g);

    // Validation: malformed archives are rejected.
    auto rejected = [&](const std::string& name, const fixture::Bytes& imgs, const std::vector<std::int64_t>& cls,
                        const std::vector<double>& vals, std::size_t n, std::size_t size) {
        const std::string p = (dir / name).string();
        fixture::write_npz(p,
                           {{"imgs", fixture::npy("|u1", {n, size, size}, imgs)},
                            {"latents_classes", fixture::npy("<i8", {n, 6}, fixture::raw_le(cls))},
                            {"latents_values", fixture::npy("<f8", {n, 6}, fixture::raw_le(vals))}},
                           true);
        try {
            load_dsprites(p);
        } catch (const FormatError&) {
            return true;
        }
        return false;
    };
    fixture::Bytes grey = g.imgs;
    grey[4096 * 7 + 2000] = 3;
    check(rejected("grey.npz", grey, g.classes, g.values, g.count, 64), "non-binary pixel accepted");
    fixture::DspritesGrid small;
    small.size = 32;
    const auto s32 = fixture::make_dsprites(small);
    check(rejected("size32.npz", s32.imgs, s32.classes, s32.values, s32.count, 32), "32x32 images accepted");
    std::vector<double> clash = g.values;
    clash[9 * 6 + 4] += 0.05;
    check(rejected("clash.npz", g.imgs, g.classes, clash, g.count, 64), "class/value clash accepted");
    std::vector<std::int64_t> dup = g.classes;
    for (std::size_t c = 0; c < 6; ++c) dup[6 * 5 + c] = dup[c];
    check(rejected("dup.npz", g.imgs, dup, g.values, g.count, 64), "duplicate class tuple accepted");

    const DatasetHandle h = load_dsprites(path);
    check(h.size() == g.count && h.image_size() == 64, "fixture loaded with wrong extent");
    for (double v : h.images.data())
        if (v != 0.0 && v != 1.0) {
            check(false, "loaded pixel not in {0, 1}");
            break;
        }

    Rng rng(2718);
    const std::vector<Factor> fs{Factor::shape, Factor::scale, Factor::orientation, Factor::pos_x, Factor::pos_y};
    std::size_t changed_pixels = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t i = rng.below(h.size());
        const Factor f = fs[rng.below(fs.size())];
        const std::size_t col = dsprites_column(f);
        const std::size_t k = rng.below(h.archive->cardinality()[col]);
        const double value = f == Factor::shape ? static_cast<double>(k) : h.archive->class_values(col)[k];
        const InputPair p = intervene_input(h, i, f, value);
        const std::string tag = "intervention " + std::to_string(trial);
        for (std::size_t c = 0; c < 6; ++c) {
            const std::int64_t expect = c == col ? static_cast<std::int64_t>(k) : g.classes[i * 6 + c];
            check(g.classes[p.row_tilde * 6 + c] == expect, tag + ": class column " + std::to_string(c));
        }
        for (std::size_t c = 0; c < 6; ++c)
            if (c != col) check(g.values[p.row_tilde * 6 + c] == g.values[i * 6 + c], tag + ": stored value column " + std::to_string(c));
        bool same_image = true;
        for (std::size_t q = 0; q < 4096; ++q) {
            same_image = same_image && p.x_tilde[q] == g.imgs[p.row_tilde * 4096 + q];
            changed_pixels += p.x_tilde[q] != p.x[q];
        }
        check(same_image, tag + ": image differs from the stored row");
    }
    return {check.ok(), std::to_string(g.count) + "-item fixture, 1000 interventions, " + std::to_string(changed_pixels) +
                            " changed pixels in total, " + check.summary()};
}

}  // namespace

int main(int argc, char** argv) {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    fs::path work = fs::temp_directory_path() / "vaemech_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream s(argv[++i]);
            std::string item;
            while (std::getline(s, item, ',')) only.insert(std::stoi(item));
        } else {
            std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
            return 1;
        }
    }
    fs::create_directories(work);

    struct Criterion {
        int id;
        const char* name;
        bool soft;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", false, gradients},
        {2, "metric oracle equivalence", false, metric_oracles},
        {3, "intervention laws", false, intervention_laws},
        {4, "range invariants", false, range_invariants},
        {5, "desk-scale training", false, desk_training},
        {6, "synthetic causal-graph recovery", false, [&] { return graph_recovery(work); }},
        {7, "variant ordering check", true, [&] { return variant_ordering(work); }},
        {8, "determinism", false, [&] { return determinism(work); }},
        {9, "dSprites ingestion", false, [&] { return dsprites_ingestion(work); }},
    };

    bool hard_failure = false;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << (c.soft ? " [soft]" : "") << " ("
                  << fmt(seconds_since(t0), 3) << " s): " << o.detail << std::endl;
        hard_failure = hard_failure || (!o.pass && !c.soft);
    }
    return hard_failure ? 1 : 0;
}
