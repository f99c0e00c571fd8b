#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vaemech/core/error.hpp"

namespace vaemech {

/// One directional hypothesis: `greater` pairs (a, b) must all satisfy
/// metric(a) > metric(b) within a seed.
struct OrderingHypothesis {
    std::string name;
    std::string metric;  // key into metric_value
    std::vector<std::pair<std::string, std::string>> greater;
};

inline std::vector<OrderingHypothesis> default_hypotheses() {
    return {{"ces_mean: factor > standard > beta", "ces_mean", {{"factor", "standard"}, {"standard", "beta"}}},
            {"mu_modularity: beta highest", "mu_modularity", {{"beta", "standard"}, {"beta", "factor"}}},
            {"monosemantic_fraction: factor highest", "monosemantic_fraction", {{"factor", "standard"}, {"factor", "beta"}}}};
}

/// Named scalar of a metrics report; nullopt when absent or null.
inline std::optional<double> metric_value(const nlohmann::json& m, const std::string& metric) {
    auto num = [](const nlohmann::json& v) -> std::optional<double> {
        return v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt;
    };
    auto obj = [](const nlohmann::json& v, const char* k) -> const nlohmann::json& {
        static const nlohmann::json null_value;
        return v.is_object() && v.contains(k) ? v.at(k) : null_value;
    };
    if (metric == "disentanglement") return num(obj(m, "disentanglement_proxy"));
    if (metric == "ces_mean") return num(obj(obj(m, "ces"), "mean"));
    if (metric == "specificity_mean") return num(obj(obj(m, "specificity"), "mean"));
    if (metric == "mu_modularity") return num(obj(obj(obj(m, "modularity"), "per_site"), "mu"));
    if (metric == "monosemantic_fraction") return num(obj(m, "monosemantic_fraction"));
    if (metric == "cluster_coherence") return num(obj(m, "cluster_coherence"));
    if (metric == "m_times_ces") return num(obj(m, "m_times_ces"));
    throw ValidationError("unknown comparison metric '" + metric + "'");
}

inline const std::vector<std::string>& comparison_metrics() {
    static const std::vector<std::string> names{"disentanglement", "ces_mean",          "specificity_mean",
                                                "mu_modularity",   "monosemantic_fraction", "cluster_coherence",
                                                "m_times_ces"};
    return names;
}

struct OrderingResult {
    std::string hypothesis;
    std::map<std::uint64_t, std::string> per_seed;  // pass / fail / tie / missing
    std::size_t passes = 0;
    std::size_t fails = 0;
    std::size_t ties = 0;
    std::size_t missing = 0;
    std::string majority;  // the most frequent per-seed verdict, "split" on a count tie
};

struct Comparison {
    std::string side_by_side_csv;
    std::string table1_csv;
    std::vector<OrderingResult> orderings;

    nlohmann::json orderings_json() const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& o : orderings) {
            nlohmann::json seeds = nlohmann::json::object();
            for (const auto& [s, v] : o.per_seed) seeds[std::to_string(s)] = v;
            out.push_back({{"hypothesis", o.hypothesis},
                           {"per_seed", seeds},
                           {"passes", o.passes},
                           {"fails", o.fails},
                           {"ties", o.ties},
                           {"missing", o.missing},
                           {"majority", o.majority}});
        }
        return out;
    }
};

/// Verdict of one hypothesis for one seed. Any compared pair with equal
/// values is a tie; otherwise pass iff every inequality holds.
inline std::string ordering_verdict(const OrderingHypothesis& h, const std::map<std::string, double>& by_variant) {
    bool tie = false, ok = true;
    for (const auto& [a, b] : h.greater) {
        const auto ia = by_variant.find(a), ib = by_variant.find(b);
        if (ia == by_variant.end() || ib == by_variant.end()) return "missing";
        if (ia->second == ib->second) tie = true;
        if (!(ia->second > ib->second)) ok = false;
    }
    if (tie) return "tie";
    return ok ? "pass" : "fail";
}

inline std::string csv_cell(const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : std::string(); }

/// Side-by-side table plus per-seed and majority verdicts for each
/// hypothesis. Reports must share dataset and analysis settings.
inline Comparison compare_runs(const std::vector<nlohmann::json>& reports,
                               const std::vector<OrderingHypothesis>& hypotheses = default_hypotheses()) {
    if (reports.size() < 2) throw ValidationError("compare_runs: need at least 2 reports");
    for (const auto& r : reports) {
        for (const char* k : {"variant", "seed", "dataset", "analysis"}) {
            if (!r.contains(k)) throw ValidationError(std::string("compare_runs: report lacks '") + k + "'");
        }
        if (r.at("analysis") != reports.front().at("analysis")) {
            throw ValidationError("compare_runs: reports were produced with different analysis settings");
        }
        if (r.at("dataset") != reports.front().at("dataset")) {
            throw ValidationError("compare_runs: reports were produced on different datasets");
        }
    }

    Comparison c;
    std::ostringstream side;
    side << "metric";
    for (const auto& r : reports) side << "," << r.at("variant").get<std::string>() << "_seed" << r.at("seed").dump();
    side << "\n";
    for (const auto& m : comparison_metrics()) {
        side << m;
        for (const auto& r : reports) side << "," << csv_cell(metric_value(r, m));
        side << "\n";
    }
    c.side_by_side_csv = side.str();

    // Summary layout: one row per metric, seed-mean per variant.
    const std::vector<std::string> variants{"standard", "beta", "factor"};
    std::ostringstream t1;
    t1 << "metric,standard,beta,factor\n";
    for (const char* m : {"disentanglement", "ces_mean", "specificity_mean", "mu_modularity"}) {
        t1 << m;
        for (const auto& v : variants) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& r : reports) {
                if (r.at("variant") != v) continue;
                if (const auto x = metric_value(r, m)) {
                    sum += *x;
                    ++n;
                }
            }
            t1 << "," << (n ? nlohmann::json(sum / static_cast<double>(n)).dump() : std::string());
        }
        t1 << "\n";
    }
    c.table1_csv = t1.str();

    std::map<std::uint64_t, std::map<std::string, const nlohmann::json*>> by_seed;
    for (const auto& r : reports) {
        const auto seed = r.at("seed").get<std::uint64_t>();
        const auto variant = r.at("variant").get<std::string>();
        if (by_seed[seed].count(variant)) {
            throw ValidationError("compare_runs: two reports for variant " + variant + " and seed " + std::to_string(seed));
        }
        by_seed[seed][variant] = &r;
    }
    for (const auto& h : hypotheses) {
        OrderingResult o;
        o.hypothesis = h.name;
        for (const auto& [seed, runs] : by_seed) {
            std::map<std::string, double> values;
            for (const auto& [variant, r] : runs) {
                if (const auto x = metric_value(*r, h.metric)) values[variant] = *x;
            }
            const std::string v = ordering_verdict(h, values);
            o.per_seed[seed] = v;
            if (v == "pass") ++o.passes;
            if (v == "fail") ++o.fails;
            if (v == "tie") ++o.ties;
            if (v == "missing") ++o.missing;
        }
        const std::vector<std::pair<std::string, std::size_t>> counts{
            {"pass", o.passes}, {"fail", o.fails}, {"tie", o.ties}, {"missing", o.missing}};
        std::size_t best = 0;
        for (const auto& [name, n] : counts) best = std::max(best, n);
        std::size_t at_best = 0;
        for (const auto& [name, n] : counts) {
            if (n == best) {
                ++at_best;
                o.majority = name;
            }
        }
        if (at_best > 1) o.majority = "split";
        c.orderings.push_back(std::move(o));
    }
    return c;
}

}  // namespace vaemech
