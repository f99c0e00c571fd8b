#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/data/dsprites.hpp"
#include "vaemech/data/factors.hpp"
#include "vaemech/data/render.hpp"
#include "vaemech/data/synthetic.hpp"
#include "vaemech/io/pgm.hpp"

namespace vaemech {

/// Images plus their generating factors. Synthetic handles keep each
/// sample's exogenous noise; dSprites handles keep the archive for lookup.
struct DatasetHandle {
    Source source = Source::synthetic;
    Tensor images;  // (N, 1, S, S) in [0, 1]
    std::vector<FactorVector> factors;

    ScmParams scm;
    std::vector<Exogenous> exogenous;

    std::shared_ptr<const DspritesArchive> archive;
    std::vector<std::size_t> rows;  // archive row of each item

    std::size_t size() const noexcept { return factors.size(); }
    std::size_t image_size() const { return images.dim(3); }

    /// Item i as a (1, 1, S, S) batch.
    Tensor image(std::size_t i) const {
        check_index(i);
        return slice_rows(images, i, 1);
    }

    void check_index(std::size_t i) const {
        if (i >= size()) {
            throw ValidationError("dataset index " + std::to_string(i) + " out of range for " +
                                  std::to_string(size()) + " items");
        }
    }
};

inline Tensor as_batch(const Tensor& plane) {
    Shape s{1};
    s.insert(s.end(), plane.shape().begin(), plane.shape().end());
    return plane.reshaped(std::move(s));
}

/// n iid samples of the structural model, each from its own derived stream.
inline DatasetHandle generate_synthetic(const ScmParams& scm, std::size_t n, std::uint64_t seed,
                                        std::size_t image_size = 64) {
    scm.validate();
    if (n < 1) throw ValidationError("synthetic dataset size must be >= 1");
    DatasetHandle h;
    h.source = Source::synthetic;
    h.scm = scm;
    h.images = Tensor({n, 1, image_size, image_size});
    const Rng root = Rng(seed).derive("synthetic.scm");
    const std::size_t px = image_size * image_size;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.derive(static_cast<std::uint64_t>(i));
        h.exogenous.push_back(draw_exogenous(scm, rng));
        h.factors.push_back(solve_scm(scm, h.exogenous.back()));
        const Tensor img = render(h.factors.back(), image_size, Source::synthetic);
        std::copy(img.data().begin(), img.data().end(), h.images.data().begin() + static_cast<std::ptrdiff_t>(i * px));
    }
    return h;
}

/// Items 0, stride, 2*stride, ... of an archive already in memory.
inline DatasetHandle dsprites_subset(std::shared_ptr<const DspritesArchive> archive, std::size_t stride,
                                     std::size_t offset = 0) {
    if (stride < 1) throw ValidationError("dsprites stride must be >= 1");
    if (offset >= archive->count()) throw ValidationError("dsprites offset beyond the archive");
    DatasetHandle h;
    h.source = Source::dsprites;
    const std::size_t n = (archive->count() - offset + stride - 1) / stride;
    const std::size_t s = archive->image_size();
    h.images = Tensor({n, 1, s, s});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t row = offset + i * stride;
        h.rows.push_back(row);
        h.factors.push_back(archive->factors(row));
        const Tensor img = archive->image(row);
        std::copy(img.data().begin(), img.data().end(), h.images.data().begin() + static_cast<std::ptrdiff_t>(i * s * s));
    }
    h.archive = std::move(archive);
    return h;
}

inline DatasetHandle load_dsprites(const std::string& path, std::size_t stride = 1, std::size_t offset = 0) {
    auto archive = std::make_shared<const DspritesArchive>(DspritesArchive::load(path));
    return dsprites_subset(std::move(archive), stride, offset);
}

/// Original and intervened input for one item.
struct InputPair {
    Tensor x;        // (1, 1, S, S)
    Tensor x_tilde;  // (1, 1, S, S)
    FactorVector factors;
    FactorVector factors_tilde;
    std::size_t row = 0;        // dSprites archive rows; unused for synthetic
    std::size_t row_tilde = 0;
};

/// x~ = do(factor = value) applied to item idx. Synthetic: the structural
/// equations are re-solved with the item's exogenous noise held fixed and
/// re-rendered. dSprites: the archive image whose class tuple differs only
/// in the factor, at the class nearest to `value`.
inline InputPair intervene_input(const DatasetHandle& h, std::size_t idx, Factor factor, double value) {
    h.check_index(idx);
    check_factor_value(h.source, factor, value);
    InputPair p;
    p.x = h.image(idx);
    p.factors = h.factors[idx];
    if (h.source == Source::synthetic) {
        p.factors_tilde = solve_scm(h.scm, h.exogenous.at(idx), {{factor, value}});
        p.x_tilde = as_batch(render(p.factors_tilde, h.image_size(), Source::synthetic));
        return p;
    }
    if (!h.archive) throw ValidationError("dsprites handle has no archive attached");
    const std::size_t col = dsprites_column(factor);
    const auto cls = h.archive->classes(h.rows.at(idx));
    std::vector<std::int64_t> target(cls.begin(), cls.end());
    target[col] = factor == Factor::shape ? static_cast<std::int64_t>(std::lround(value))
                                          : h.archive->nearest_class(col, value);
    const auto row = h.archive->lookup(target);
    if (!row) {
        throw ValidationError("dsprites has no image for the requested class tuple (" + std::string(to_string(factor)) +
                              " class " + std::to_string(target[col]) + ")");
    }
    p.row = h.rows[idx];
    p.row_tilde = *row;
    p.factors_tilde = h.archive->factors(*row);
    p.x_tilde = as_batch(h.archive->image(*row));
    return p;
}

/// Directory of PGM images (img_000000.pgm, ...) plus factors.csv with
/// columns idx,shape,scale,orientation,pos_x,pos_y,background,contrast.
inline void export_dataset(const DatasetHandle& h, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream csv(fs::path(dir) / "factors.csv");
    if (!csv) throw Error("cannot write '" + (fs::path(dir) / "factors.csv").string() + "'");
    csv << "idx,shape,scale,orientation,pos_x,pos_y,background,contrast\n";
    csv << std::setprecision(17);
    for (std::size_t i = 0; i < h.size(); ++i) {
        const FactorVector& f = h.factors[i];
        csv << i << "," << shape_name(h.source, f.shape) << "," << f.scale << "," << f.orientation << "," << f.pos_x
            << "," << f.pos_y << "," << f.background << "," << f.contrast << "\n";
        std::ostringstream name;
        name << "img_" << std::setw(6) << std::setfill('0') << i << ".pgm";
        write_pgm((fs::path(dir) / "images" / name.str()).string(), slice_rows(h.images, i, 1));
    }
}

}  // namespace vaemech
