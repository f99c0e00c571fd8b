#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "vaemech/core/rng.hpp"
#include "vaemech/data/factors.hpp"

namespace vaemech {

/// Structural equations of the synthetic dataset:
///   shape       ~ uniform over {square, circle, triangle}
///   scale       = base_size[shape] + eps_s            (clamped to [0.5, 1])
///   contrast    = 0.2 + 0.8 * (1 - background) + eps_c (clamped to [0.2, 1])
///   orientation, pos_x, pos_y, background are exogenous roots.
struct ScmParams {
    std::array<double, 3> base_size{0.6, 0.7, 0.5};
    double size_noise = 0.05;      // eps_s ~ U(-size_noise, size_noise)
    double contrast_noise = 0.05;  // eps_c ~ U(-contrast_noise, contrast_noise)
    double background_lo = 0.0;
    double background_hi = 0.1;
    double position_lo = 0.2;
    double position_hi = 0.8;

    void validate() const {
        for (double b : base_size) {
            if (!(b > 0.0)) throw ValidationError("scm.base_size entries must be > 0");
        }
        if (!(size_noise >= 0.0) || !(contrast_noise >= 0.0)) throw ValidationError("scm noise scales must be >= 0");
        if (!(background_lo >= 0.0 && background_lo <= background_hi && background_hi <= 1.0)) {
            throw ValidationError("scm background range must satisfy 0 <= lo <= hi <= 1");
        }
        if (!(position_lo >= 0.0 && position_lo <= position_hi && position_hi <= 1.0)) {
            throw ValidationError("scm position range must satisfy 0 <= lo <= hi <= 1");
        }
    }
};

/// Exogenous draws for one sample. Holding these fixed and overriding one
/// equation is a do-intervention.
struct Exogenous {
    double shape_u = 0.0;
    double eps_s = 0.0;
    double orientation = 0.0;
    double pos_x = 0.5;
    double pos_y = 0.5;
    double background = 0.0;
    double eps_c = 0.0;

    friend bool operator==(const Exogenous&, const Exogenous&) = default;
};

struct DoIntervention {
    Factor factor;
    double value;
};

inline Exogenous draw_exogenous(const ScmParams& p, Rng& rng) {
    Exogenous e;
    e.shape_u = rng.uniform();
    e.eps_s = rng.uniform(-p.size_noise, p.size_noise);
    e.orientation = rng.uniform(0.0, 2.0 * std::numbers::pi);
    e.pos_x = rng.uniform(p.position_lo, p.position_hi);
    e.pos_y = rng.uniform(p.position_lo, p.position_hi);
    e.background = rng.uniform(p.background_lo, p.background_hi);
    e.eps_c = rng.uniform(-p.contrast_noise, p.contrast_noise);
    return e;
}

inline double scm_scale(const ScmParams& p, int shape, double eps_s) {
    return std::clamp(p.base_size[static_cast<std::size_t>(shape)] + eps_s, 0.5, 1.0);
}

inline double scm_contrast(double background, double eps_c) {
    return std::clamp(0.2 + 0.8 * (1.0 - background) + eps_c, 0.2, 1.0);
}

/// Evaluate the equations in causal order, replacing the equation of any
/// intervened factor by its assigned value.
inline FactorVector solve_scm(const ScmParams& p, const Exogenous& e, const std::vector<DoIntervention>& dos = {}) {
    auto forced = [&](Factor f) -> std::optional<double> {
        std::optional<double> v;
        for (const auto& d : dos) {
            if (d.factor == f) v = d.value;
        }
        return v;
    };
    for (const auto& d : dos) check_factor_value(Source::synthetic, d.factor, d.value);

    FactorVector f;
    const int drawn = std::min(2, static_cast<int>(std::floor(e.shape_u * 3.0)));
    f.shape = forced(Factor::shape) ? std::clamp(static_cast<int>(std::lround(*forced(Factor::shape))), 0, 2) : drawn;
    f.scale = forced(Factor::scale).value_or(scm_scale(p, f.shape, e.eps_s));
    f.orientation = wrap_angle(forced(Factor::orientation).value_or(e.orientation));
    f.pos_x = forced(Factor::pos_x).value_or(e.pos_x);
    f.pos_y = forced(Factor::pos_y).value_or(e.pos_y);
    f.background = forced(Factor::background).value_or(e.background);
    f.contrast = forced(Factor::contrast).value_or(scm_contrast(f.background, e.eps_c));
    return f;
}

}  // namespace vaemech
