#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/data/factors.hpp"
#include "vaemech/data/npz.hpp"

namespace vaemech {

/// Latent columns of the archive: color, shape, scale, orientation, posX, posY.
inline constexpr std::size_t kDspritesColumns = 6;

inline std::size_t dsprites_column(Factor f) {
    switch (f) {
        case Factor::shape: return 1;
        case Factor::scale: return 2;
        case Factor::orientation: return 3;
        case Factor::pos_x: return 4;
        case Factor::pos_y: return 5;
        default: break;
    }
    throw ValidationError("factor '" + std::string(to_string(f)) + "' does not exist for dsprites data");
}

/// The full archive held in memory: latent records plus bit-packed images.
class DspritesArchive {
public:
    std::size_t count() const noexcept { return count_; }
    std::size_t image_size() const noexcept { return size_; }
    const std::vector<std::size_t>& cardinality() const noexcept { return card_; }
    const std::vector<double>& class_values(std::size_t column) const { return class_values_.at(column); }

    std::span<const std::int64_t> classes(std::size_t row) const {
        return std::span<const std::int64_t>(classes_).subspan(row * kDspritesColumns, kDspritesColumns);
    }
    std::span<const double> values(std::size_t row) const {
        return std::span<const double>(values_).subspan(row * kDspritesColumns, kDspritesColumns);
    }

    /// Row holding a class tuple, if the tuple is legal.
    std::optional<std::size_t> lookup(std::span<const std::int64_t> cls) const {
        if (cls.size() != kDspritesColumns) return std::nullopt;
        std::size_t key = 0;
        for (std::size_t c = 0; c < kDspritesColumns; ++c) {
            if (cls[c] < 0 || static_cast<std::size_t>(cls[c]) >= card_[c]) return std::nullopt;
            key = key * card_[c] + static_cast<std::size_t>(cls[c]);
        }
        return index_[key];
    }

    /// Class of `column` whose value is nearest to v; ties go to the lower class.
    std::int64_t nearest_class(std::size_t column, double v) const {
        const auto& vals = class_values_.at(column);
        std::size_t best = 0;
        for (std::size_t k = 1; k < vals.size(); ++k) {
            if (std::abs(vals[k] - v) < std::abs(vals[best] - v)) best = k;
        }
        return static_cast<std::int64_t>(best);
    }

    /// One image as a (1, S, S) tensor of 0/1 values.
    Tensor image(std::size_t row) const {
        const std::size_t px = size_ * size_;
        Tensor out({1, size_, size_});
        const std::size_t base = row * px;
        for (std::size_t i = 0; i < px; ++i) {
            const std::size_t bit = base + i;
            out[i] = ((bits_[bit >> 6] >> (bit & 63)) & 1u) ? 1.0 : 0.0;
        }
        return out;
    }

    FactorVector factors(std::size_t row) const {
        const auto v = values(row);
        const auto c = classes(row);
        FactorVector f;
        f.shape = static_cast<int>(c[1]);
        f.scale = v[2];
        f.orientation = v[3];
        f.pos_x = v[4];
        f.pos_y = v[5];
        f.background = 0.0;
        f.contrast = 1.0;
        return f;
    }

    /// Read and validate an archive. Every image must be binary and every
    /// class tuple of the factor grid must appear exactly once.
    static DspritesArchive load(const std::string& path, std::size_t expected_size = 64) {
        NpzReader npz(path);
        for (const char* name : {"imgs", "latents_values", "latents_classes"}) {
            if (!npz.has(name)) throw FormatError("dsprites archive '" + path + "' lacks required entry '" + name + "'");
        }
        DspritesArchive a;
        NpyHeader ch, vh;
        a.classes_ = npz.read_i64("latents_classes", &ch);
        a.values_ = npz.read_f64("latents_values", &vh);
        if (ch.shape.size() != 2 || ch.shape[1] != kDspritesColumns) {
            throw FormatError("dsprites latents_classes must have shape (N, 6), got " + shape_str(ch.shape));
        }
        if (vh.shape != ch.shape) {
            throw FormatError("dsprites latents_values shape " + shape_str(vh.shape) +
                              " does not match latents_classes " + shape_str(ch.shape));
        }
        a.count_ = ch.shape[0];
        a.build_index(path);

        const NpyHeader ih = npz.header("imgs");
        if (ih.shape.size() != 3 || ih.shape[1] != ih.shape[2]) {
            throw FormatError("dsprites imgs must have shape (N, S, S), got " + shape_str(ih.shape));
        }
        if (ih.shape[1] != expected_size) {
            throw FormatError("dsprites imgs are " + std::to_string(ih.shape[1]) + "x" + std::to_string(ih.shape[2]) +
                              ", expected " + std::to_string(expected_size) + "x" + std::to_string(expected_size));
        }
        if (ih.shape[0] != a.count_) {
            throw FormatError("dsprites imgs holds " + std::to_string(ih.shape[0]) + " images but latents describe " +
                              std::to_string(a.count_));
        }
        if (ih.descr != "|u1" && ih.descr != "|b1") {
            throw FormatError("dsprites imgs must be uint8 or bool, found dtype '" + ih.descr + "'");
        }
        a.size_ = ih.shape[1];
        const std::size_t px = a.size_ * a.size_;
        const std::uint64_t total = static_cast<std::uint64_t>(a.count_) * px;
        a.bits_.assign(static_cast<std::size_t>((total + 63) / 64), 0);
        std::uint64_t pos = 0;
        npz.stream("imgs", [](const NpyHeader&) {},
                   [&](std::span<const std::uint8_t> chunk) {
                       for (std::uint8_t b : chunk) {
                           if (b > 1) {
                               throw FormatError("dsprites image " + std::to_string(pos / px) + " is not binary (value " +
                                                 std::to_string(b) + ")");
                           }
                           if (b) a.bits_[pos >> 6] |= std::uint64_t{1} << (pos & 63);
                           ++pos;
                       }
                   });
        if (pos != total) throw FormatError("dsprites imgs payload is truncated");
        return a;
    }

private:
    void build_index(const std::string& path) {
        card_.assign(kDspritesColumns, 0);
        for (std::size_t r = 0; r < count_; ++r) {
            for (std::size_t c = 0; c < kDspritesColumns; ++c) {
                const std::int64_t k = classes_[r * kDspritesColumns + c];
                if (k < 0) throw FormatError("dsprites latents_classes has a negative class in row " + std::to_string(r));
                card_[c] = std::max(card_[c], static_cast<std::size_t>(k) + 1);
            }
        }
        std::size_t product = 1;
        for (std::size_t c : card_) product *= c;
        if (product != count_) {
            throw FormatError("dsprites archive '" + path + "': " + std::to_string(count_) +
                              " rows but the class cardinalities multiply to " + std::to_string(product));
        }
        if (card_[1] != 3) throw FormatError("dsprites archive must have 3 shape classes");

        class_values_.assign(kDspritesColumns, {});
        for (std::size_t c = 0; c < kDspritesColumns; ++c) {
            class_values_[c].assign(card_[c], std::numeric_limits<double>::quiet_NaN());
        }
        constexpr std::uint32_t kMissing = std::numeric_limits<std::uint32_t>::max();
        index_.assign(count_, kMissing);
        for (std::size_t r = 0; r < count_; ++r) {
            std::size_t key = 0;
            for (std::size_t c = 0; c < kDspritesColumns; ++c) {
                const auto k = static_cast<std::size_t>(classes_[r * kDspritesColumns + c]);
                const double v = values_[r * kDspritesColumns + c];
                double& slot = class_values_[c][k];
                if (std::isnan(slot)) {
                    slot = v;
                } else if (slot != v) {
                    throw FormatError("dsprites row " + std::to_string(r) + ": class " + std::to_string(k) +
                                      " of latent column " + std::to_string(c) + " has value " + std::to_string(v) +
                                      " but earlier rows use " + std::to_string(slot));
                }
                key = key * card_[c] + k;
            }
            if (index_[key] != kMissing) {
                throw FormatError("dsprites rows " + std::to_string(index_[key]) + " and " + std::to_string(r) +
                                  " share the same class tuple");
            }
            index_[key] = static_cast<std::uint32_t>(r);
        }
    }

    std::size_t count_ = 0;
    std::size_t size_ = 0;
    std::vector<std::size_t> card_;
    std::vector<std::vector<double>> class_values_;
    std::vector<std::int64_t> classes_;
    std::vector<double> values_;
    std::vector<std::uint64_t> bits_;
    std::vector<std::uint32_t> index_;
};

}  // namespace vaemech
