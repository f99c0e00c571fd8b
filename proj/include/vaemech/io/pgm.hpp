#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

namespace vaemech {

/// 8-bit grey level of an intensity in [0, 1]: round(p * 255), clamped.
inline std::uint8_t grey_level(double p) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0));
}

/// Binary PGM (P5) from row-major intensities.
inline void write_pgm(const std::string& path, const std::vector<double>& pixels, std::size_t width,
                      std::size_t height) {
    if (pixels.size() != width * height) {
        throw ShapeError("write_pgm: " + std::to_string(pixels.size()) + " pixels for a " + std::to_string(width) +
                         "x" + std::to_string(height) + " image");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image '" + path + "'");
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<char> bytes(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) bytes[i] = static_cast<char>(grey_level(pixels[i]));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing image '" + path + "'");
}

/// Write the last two axes of a tensor with a single leading plane.
inline void write_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() < 2) throw ShapeError("write_pgm: need at least 2 axes, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    if (image.numel() != h * w) {
        throw ShapeError("write_pgm: expected a single plane, got " + shape_str(image.shape()));
    }
    write_pgm(path, image.storage(), w, h);
}

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image '" + path + "'");
    std::string magic;
    int maxval = 0;
    PgmImage img;
    in >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255 || !in) throw FormatError("'" + path + "' is not an 8-bit binary PGM");
    in.get();
    img.pixels.resize(img.width * img.height);
    if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
        throw FormatError("'" + path + "' is truncated");
    }
    return img;
}

/// Tile equally sized (H, W) planes into one grid image, `cols` per row,
/// separated by a 1-pixel border of value `pad`.
inline std::vector<double> tile_planes(const std::vector<Tensor>& planes, std::size_t cols, std::size_t& width,
                                       std::size_t& height, double pad = 1.0) {
    if (planes.empty()) throw ShapeError("tile_planes: nothing to tile");
    const Tensor& first = planes.front();
    const std::size_t h = first.dim(first.rank() - 2), w = first.dim(first.rank() - 1);
    cols = std::max<std::size_t>(1, std::min(cols, planes.size()));
    const std::size_t rows = (planes.size() + cols - 1) / cols;
    width = cols * w + (cols + 1);
    height = rows * h + (rows + 1);
    std::vector<double> out(width * height, pad);
    for (std::size_t k = 0; k < planes.size(); ++k) {
        if (planes[k].numel() != h * w) throw ShapeError("tile_planes: planes differ in size");
        const std::size_t r0 = 1 + (k / cols) * (h + 1), c0 = 1 + (k % cols) * (w + 1);
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) out[(r0 + i) * width + c0 + j] = planes[k][i * w + j];
        }
    }
    return out;
}

}  // namespace vaemech
