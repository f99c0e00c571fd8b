#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "vaemech/core/error.hpp"

namespace vaemech {

enum class Source { synthetic, dsprites };

inline std::string_view to_string(Source s) { return s == Source::synthetic ? "synthetic" : "dsprites"; }

inline Source parse_source(std::string_view s) {
    if (s == "synthetic") return Source::synthetic;
    if (s == "dsprites") return Source::dsprites;
    throw ValidationError("unknown dataset source '" + std::string(s) + "' (expected synthetic or dsprites)");
}

enum class Factor { shape, scale, orientation, pos_x, pos_y, background, contrast };

inline constexpr std::array<Factor, 7> kAllFactors{Factor::shape,  Factor::scale,      Factor::orientation,
                                                   Factor::pos_x,  Factor::pos_y,      Factor::background,
                                                   Factor::contrast};

inline std::string_view to_string(Factor f) {
    switch (f) {
        case Factor::shape: return "shape";
        case Factor::scale: return "scale";
        case Factor::orientation: return "orientation";
        case Factor::pos_x: return "pos_x";
        case Factor::pos_y: return "pos_y";
        case Factor::background: return "background";
        case Factor::contrast: return "contrast";
    }
    return "shape";
}

inline Factor parse_factor(std::string_view s) {
    for (Factor f : kAllFactors) {
        if (to_string(f) == s) return f;
    }
    throw ValidationError("unknown factor '" + std::string(s) + "'");
}

/// Factors that exist for a source, in canonical order.
inline std::vector<Factor> factors_of(Source s) {
    if (s == Source::synthetic) return {kAllFactors.begin(), kAllFactors.end()};
    return {Factor::shape, Factor::scale, Factor::orientation, Factor::pos_x, Factor::pos_y};
}

inline bool has_factor(Source s, Factor f) {
    return s == Source::synthetic || (f != Factor::background && f != Factor::contrast);
}

inline constexpr std::array<std::string_view, 3> kSyntheticShapes{"square", "circle", "triangle"};
inline constexpr std::array<std::string_view, 3> kDspritesShapes{"square", "ellipse", "heart"};

inline std::string_view shape_name(Source s, int shape) {
    const auto& names = s == Source::synthetic ? kSyntheticShapes : kDspritesShapes;
    if (shape < 0 || shape >= static_cast<int>(names.size())) throw ValidationError("shape class out of range");
    return names[static_cast<std::size_t>(shape)];
}

struct FactorRange {
    double lo;
    double hi;
};

/// Legal range of a factor; orientation is half-open [0, 2pi).
inline FactorRange factor_range(Factor f) {
    switch (f) {
        case Factor::shape: return {0.0, 2.0};
        case Factor::scale: return {0.5, 1.0};
        case Factor::orientation: return {0.0, 2.0 * std::numbers::pi};
        case Factor::pos_x:
        case Factor::pos_y:
        case Factor::background: return {0.0, 1.0};
        case Factor::contrast: return {0.2, 1.0};
    }
    return {0.0, 1.0};
}

/// One assignment of the generative factors. `shape` is a class index whose
/// meaning depends on the source (see shape_name).
struct FactorVector {
    int shape = 0;
    double scale = 1.0;
    double orientation = 0.0;
    double pos_x = 0.5;
    double pos_y = 0.5;
    double background = 0.0;
    double contrast = 1.0;

    double get(Factor f) const {
        switch (f) {
            case Factor::shape: return static_cast<double>(shape);
            case Factor::scale: return scale;
            case Factor::orientation: return orientation;
            case Factor::pos_x: return pos_x;
            case Factor::pos_y: return pos_y;
            case Factor::background: return background;
            case Factor::contrast: return contrast;
        }
        return 0.0;
    }

    void set(Factor f, double v) {
        switch (f) {
            case Factor::shape: shape = static_cast<int>(std::lround(v)); break;
            case Factor::scale: scale = v; break;
            case Factor::orientation: orientation = v; break;
            case Factor::pos_x: pos_x = v; break;
            case Factor::pos_y: pos_y = v; break;
            case Factor::background: background = v; break;
            case Factor::contrast: contrast = v; break;
        }
    }

    friend bool operator==(const FactorVector&, const FactorVector&) = default;
};

/// Orientation wrapped into [0, 2pi).
inline double wrap_angle(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a, two_pi);
    if (r < 0.0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    return r;
}

/// Throws unless the factor exists for the source and the value is finite.
inline void check_factor_value(Source s, Factor f, double v) {
    if (!has_factor(s, f)) {
        throw ValidationError("factor '" + std::string(to_string(f)) + "' does not exist for " +
                              std::string(to_string(s)) + " data");
    }
    if (!std::isfinite(v)) throw ValidationError("factor '" + std::string(to_string(f)) + "' value is not finite");
}

}  // namespace vaemech
