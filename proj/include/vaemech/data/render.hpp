#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <string>

#include "vaemech/core/tensor.hpp"
#include "vaemech/data/factors.hpp"

namespace vaemech {

/// Shape radius in pixels at scale 1, as a fraction of the image side.
inline constexpr double kRadiusFraction = 0.2;

/// Clamp every factor into its legal range. Returns the names of the
/// factors that had to change (empty when the input was already legal).
inline std::string clamp_factors(FactorVector& f) {
    std::string changed;
    auto clamp_one = [&](Factor which, double& v) {
        const FactorRange r = factor_range(which);
        const double c = std::clamp(v, r.lo, r.hi);
        if (c != v) {
            changed += changed.empty() ? "" : ", ";
            changed += to_string(which);
            v = c;
        }
    };
    if (f.shape < 0 || f.shape > 2) {
        f.shape = std::clamp(f.shape, 0, 2);
        changed += changed.empty() ? "shape" : ", shape";
    }
    clamp_one(Factor::scale, f.scale);
    const double wrapped = wrap_angle(f.orientation);
    if (wrapped != f.orientation) f.orientation = wrapped;
    clamp_one(Factor::pos_x, f.pos_x);
    clamp_one(Factor::pos_y, f.pos_y);
    clamp_one(Factor::background, f.background);
    clamp_one(Factor::contrast, f.contrast);
    return changed;
}

/// Foreground intensity: background + contrast * (1 - background), in [0, 1].
inline double foreground_intensity(const FactorVector& f) {
    return std::clamp(f.background + f.contrast * (1.0 - f.background), 0.0, 1.0);
}

/// Point-in-shape test in shape-local units (radius 1, y pointing down).
inline bool inside_shape(Source source, int shape, double a, double b) {
    if (source == Source::synthetic) {
        switch (shape) {
            case 0: return std::max(std::abs(a), std::abs(b)) <= 0.8;
            case 1: return a * a + b * b <= 0.81;
            default: {
                // Equilateral triangle, circumradius 1.2, apex up.
                const double in = 0.6;
                const double s = std::sqrt(3.0) / 2.0;
                return b <= in && (s * a - 0.5 * b) <= in && (-s * a - 0.5 * b) <= in;
            }
        }
    }
    switch (shape) {
        case 0: return std::max(std::abs(a), std::abs(b)) <= 0.8;
        case 1: {
            const double p = a / 0.95, q = b / 0.55;
            return p * p + q * q <= 1.0;
        }
        default: {
            const double p = a / 0.75, q = -b / 0.75 + 0.1;
            const double t = p * p + q * q - 1.0;
            return t * t * t - p * p * q * q * q <= 0.0;
        }
    }
}

/// Rasterise one factor assignment into a (1, size, size) image. Pixel
/// (i, j) is tested at its centre (j + 0.5, i + 0.5) against the rotated,
/// scaled shape centred at (pos_x * size, pos_y * size); no anti-aliasing.
inline Tensor render(FactorVector f, std::size_t size, Source source = Source::synthetic) {
    const std::string changed = clamp_factors(f);
    if (!changed.empty()) std::cerr << "warning: render clamped out-of-range factors: " << changed << "\n";
    const double sz = static_cast<double>(size);
    const double cx = f.pos_x * sz, cy = f.pos_y * sz;
    const double r = f.scale * kRadiusFraction * sz;
    const double c = std::cos(f.orientation), s = std::sin(f.orientation);
    const double fg = foreground_intensity(f);
    Tensor img({1, size, size}, f.background);
    for (std::size_t i = 0; i < size; ++i) {
        const double dy = static_cast<double>(i) + 0.5 - cy;
        for (std::size_t j = 0; j < size; ++j) {
            const double dx = static_cast<double>(j) + 0.5 - cx;
            const double u = (c * dx + s * dy) / r;
            const double v = (-s * dx + c * dy) / r;
            if (inside_shape(source, f.shape, u, v)) img[i * size + j] = fg;
        }
    }
    return img;
}

}  // namespace vaemech
