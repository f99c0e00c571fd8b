#pragma once

// Dense kernels behind the convolution and linear ops. Each batch row is
// processed independently with fixed-size matrix products, so the result
// for one sample never depends on which other samples share its batch.

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

namespace vaemech::kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

/// dst = lhs * rhs, or dst += lhs * rhs. Eigen evaluates vector-shaped and
/// very small products with kernels whose summation order follows the
/// runtime alignment of the operands, so those shapes use a plain loop and
/// results stay reproducible from run to run.
template <class Dst, class Lhs, class Rhs>
inline void product(Dst&& dst, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
    const Eigen::Index rows = lhs.rows(), cols = rhs.cols(), inner = lhs.cols();
    if (rows > 1 && cols > 1 && rows + cols + inner >= 20) {
        if (accumulate) {
            dst.noalias() += lhs * rhs;
        } else {
            dst.noalias() = lhs * rhs;
        }
        return;
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < inner; ++k) s += lhs(i, k) * rhs(k, j);
            dst(i, j) = accumulate ? dst(i, j) + s : s;
        }
    }
}

struct ConvGeometry {
    std::size_t kernel = 4;
    std::size_t stride = 2;
    std::size_t pad = 1;
};

/// Output extent of a strided convolution along one axis.
inline std::size_t conv_out_extent(std::size_t in, const ConvGeometry& g) {
    const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(in + 2 * g.pad) - static_cast<std::ptrdiff_t>(g.kernel);
    if (span < 0 || g.stride == 0) return 0;
    return static_cast<std::size_t>(span) / g.stride + 1;
}

/// Output extent of a transposed convolution along one axis.
inline std::size_t conv_transpose_out_extent(std::size_t in, const ConvGeometry& g) {
    const std::ptrdiff_t out = static_cast<std::ptrdiff_t>((in - 1) * g.stride + g.kernel) -
                               static_cast<std::ptrdiff_t>(2 * g.pad);
    return out > 0 ? static_cast<std::size_t>(out) : 0;
}

/// Unfold one (C, H, W) image into a (C*K*K, Ho*Wo) column matrix.
inline void im2col(std::span<const double> img, std::size_t channels, std::size_t height, std::size_t width,
                   const ConvGeometry& g, std::size_t out_h, std::size_t out_w, std::span<double> cols) {
    const std::size_t k = g.kernel;
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                double* dst = cols.data() + ((c * k + ki) * k + kj) * plane;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
                        for (std::size_t ow = 0; ow < out_w; ++ow) dst[oh * out_w + ow] = 0.0;
                        continue;
                    }
                    const double* src = img.data() + (c * height + static_cast<std::size_t>(ih)) * width;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        dst[oh * out_w + ow] =
                            (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) ? 0.0 : src[iw];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add columns back into a (C, H, W) image.
inline void col2im(std::span<const double> cols, std::size_t channels, std::size_t height, std::size_t width,
                   const ConvGeometry& g, std::size_t out_h, std::size_t out_w, std::span<double> img) {
    const std::size_t k = g.kernel;
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                const double* src = cols.data() + ((c * k + ki) * k + kj) * plane;
                for (std::size_t oh = 0; oh < out_h; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
                    double* dst = img.data() + (c * height + static_cast<std::size_t>(ih)) * width;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
                        dst[iw] += src[oh * out_w + ow];
                    }
                }
            }
        }
    }
}

// x: (B, Cin, H, W); w: (Cout, Cin, K, K); b: (Cout)
inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0);
    const std::size_t oh = conv_out_extent(h, g), ow = conv_out_extent(wd, g);
    const std::size_t patch = cin * g.kernel * g.kernel, plane = oh * ow;
    Tensor out({batch, cout, oh, ow});
    std::vector<double> cols(patch * plane);
    MapConstMat wm(w.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(x.row(n), cin, h, wd, g, oh, ow, cols);
        MapConstMat cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
        MapMat om(out.row(n).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(plane));
        product(om, wm, cm, false);
        for (std::size_t c = 0; c < cout; ++c) om.row(static_cast<Eigen::Index>(c)).array() += b[c];
    }
    return out;
}

/// Accumulates into whichever of dx, dw, db are non-null.
inline void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dout, const ConvGeometry& g, Tensor* dx,
                            Tensor* dw, Tensor* db) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0);
    const std::size_t oh = dout.dim(2), ow = dout.dim(3);
    const std::size_t patch = cin * g.kernel * g.kernel, plane = oh * ow;
    std::vector<double> cols(patch * plane);
    MapConstMat wm(w.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        MapConstMat dm(dout.row(n).data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(plane));
        if (db) {
            const auto drow = dout.row(n);
            for (std::size_t c = 0; c < cout; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += drow[c * plane + i];
                (*db)[c] += s;
            }
        }
        if (dw) {
            im2col(x.row(n), cin, h, wd, g, oh, ow, cols);
            MapConstMat cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
            MapMat dwm(dw->data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
            product(dwm, dm, cm.transpose(), true);
        }
        if (dx) {
            MapMat cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
            product(cm, wm.transpose(), dm, false);
            col2im(cols, cin, h, wd, g, oh, ow, dx->row(n));
        }
    }
}

// x: (B, Cin, H, W); w: (Cin, Cout, K, K); b: (Cout)
inline Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& g) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1);
    const std::size_t oh = conv_transpose_out_extent(h, g), ow = conv_transpose_out_extent(wd, g);
    const std::size_t patch = cout * g.kernel * g.kernel, plane = h * wd;
    Tensor out({batch, cout, oh, ow});
    std::vector<double> cols(patch * plane);
    MapConstMat wm(w.data().data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        MapConstMat xm(x.row(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(plane));
        MapMat cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
        product(cm, wm.transpose(), xm, false);
        auto dst = out.row(n);
        col2im(cols, cout, oh, ow, g, h, wd, dst);
        const std::size_t out_plane = oh * ow;
        for (std::size_t c = 0; c < cout; ++c) {
            for (std::size_t i = 0; i < out_plane; ++i) dst[c * out_plane + i] += b[c];
        }
    }
    return out;
}

inline void conv_transpose2d_backward(const Tensor& x, const Tensor& w, const Tensor& dout, const ConvGeometry& g,
                                      Tensor* dx, Tensor* dw, Tensor* db) {
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(1);
    const std::size_t oh = dout.dim(2), ow = dout.dim(3);
    const std::size_t patch = cout * g.kernel * g.kernel, plane = h * wd;
    std::vector<double> cols(patch * plane);
    MapConstMat wm(w.data().data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(patch));
    for (std::size_t n = 0; n < batch; ++n) {
        auto drow = dout.row(n);
        if (db) {
            const std::size_t out_plane = oh * ow;
            for (std::size_t c = 0; c < cout; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < out_plane; ++i) s += drow[c * out_plane + i];
                (*db)[c] += s;
            }
        }
        if (!dx && !dw) continue;
        im2col(drow, cout, oh, ow, g, h, wd, cols);
        MapConstMat cm(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
        if (dx) {
            MapMat dxm(dx->row(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(plane));
            product(dxm, wm, cm, true);
        }
        if (dw) {
            MapConstMat xm(x.row(n).data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(plane));
            MapMat dwm(dw->data().data(), static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(patch));
            product(dwm, xm, cm.transpose(), true);
        }
    }
}

// x: (B, In); w: (Out, In); b: (Out). Plain dot products per row: cheap
// next to the convolutions and independent of batch size and alignment.
inline Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    Tensor out({batch, out_dim});
    for (std::size_t n = 0; n < batch; ++n) {
        const auto xr = x.row(n);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wr = w.data().data() + o * in;
            double s = 0.0;
            for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
            out[n * out_dim + o] = s + b[o];
        }
    }
    return out;
}

inline void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dout, Tensor* dx, Tensor* dw,
                            Tensor* db) {
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    MapConstMat xm(x.data().data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
    MapConstMat dm(dout.data().data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out_dim));
    MapConstMat wm(w.data().data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
    if (dx) {
        MapMat dxm(dx->data().data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
        product(dxm, dm, wm, true);
    }
    if (dw) {
        MapMat dwm(dw->data().data(), static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in));
        product(dwm, dm.transpose(), xm, true);
    }
    if (db) {
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t o = 0; o < out_dim; ++o) (*db)[o] += dm(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
        }
    }
}

}  // namespace vaemech::kernels
