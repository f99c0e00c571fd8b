#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "vaemech/autodiff/kernels.hpp"
#include "vaemech/autodiff/tape.hpp"

namespace vaemech::ops {

using kernels::ConvGeometry;

namespace detail {

inline Tape& common_tape(std::string_view op, std::initializer_list<Var> vars) {
    Tape* tape = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) throw Error("op '" + std::string(op) + "': empty input handle");
        if (tape && v.tape() != tape) throw Error("op '" + std::string(op) + "': inputs live on different tapes");
        tape = v.tape();
    }
    return *tape;
}

inline void require_same_shape(std::string_view op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

inline void require_rank(std::string_view op, const char* what, const Var& v, std::size_t rank) {
    if (v.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
    }
}

/// Elementwise unary op given f(x) and f'(x, y) with y = f(x).
template <class F, class DF>
Var unary(std::string_view name, const Var& x, F f, DF df) {
    Tape& tape = common_tape(name, {x});
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
    const std::size_t xi = x.id();
    return tape.record(name, std::move(out), {x}, [xi, df](Tape& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& xv = t.value(xi);
        const Tensor& yv = t.value(self);
        const Tensor& g = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
    });
}

}  // namespace detail

/// Graph-detached copy of a value.
inline Var detach(const Var& x) { return x.tape()->constant(x.value()); }

inline Var add(const Var& a, const Var& b) {
    Tape& tape = detail::common_tape("add", {a, b});
    detail::require_same_shape("add", a, b);
    Tensor out(a.shape());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("add", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        for (std::size_t id : {ai, bi}) {
            if (!t.requires_grad(id)) continue;
            Tensor& gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tape& tape = detail::common_tape("sub", {a, b});
    detail::require_same_shape("sub", a, b);
    Tensor out(a.shape());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("sub", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(ai)) {
            Tensor& ga = t.grad_buffer(ai);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(bi)) {
            Tensor& gb = t.grad_buffer(bi);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tape& tape = detail::common_tape("mul", {a, b});
    detail::require_same_shape("mul", a, b);
    Tensor out(a.shape());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    return tape.record("mul", std::move(out), {a, b}, [ai, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(ai)) {
            const Tensor& bv = t.value(bi);
            Tensor& ga = t.grad_buffer(ai);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
            const Tensor& av = t.value(ai);
            Tensor& gb = t.grad_buffer(bi);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& x, double c) {
    return detail::unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& x, double c) {
    return detail::unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& x) {
    return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                         [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& x, double slope) {
    return detail::unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                         [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
    return detail::unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& x) {
    return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
    return detail::unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var square(const Var& x) {
    return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sum(const Var& x) {
    Tape& tape = detail::common_tape("sum", {x});
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const std::size_t xi = x.id();
    return tape.record("sum", Tensor::scalar(s), {x}, [xi](Tape& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        const double g = t.grad_buffer(self)[0];
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

inline Var mean(const Var& x) {
    const std::size_t n = x.value().numel();
    if (n == 0) throw ShapeError("mean: empty input");
    Tape& tape = detail::common_tape("mean", {x});
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const std::size_t xi = x.id();
    return tape.record("mean", Tensor::scalar(s / static_cast<double>(n)), {x}, [xi, n](Tape& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        const double g = t.grad_buffer(self)[0] / static_cast<double>(n);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

inline Var reshape(const Var& x, Shape shape) {
    Tape& tape = detail::common_tape("reshape", {x});
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return tape.record("reshape", std::move(out), {x}, [xi](Tape& t, std::size_t self) {
        if (!t.requires_grad(xi)) return;
        const Tensor& g = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

/// Concatenate along the batch axis.
inline Var concat_batch(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_batch: no inputs");
    Tape* tape = parts[0].tape();
    std::vector<Tensor> values;
    for (const Var& p : parts) {
        if (p.tape() != tape) throw Error("op 'concat_batch': inputs live on different tapes");
        values.push_back(p.value());
    }
    Tensor out = concat_rows(values);
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id());
    return tape->record("concat_batch", std::move(out), parts, [ids](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        std::size_t offset = 0;
        for (std::size_t id : ids) {
            const std::size_t n = t.value(id).numel();
            if (t.requires_grad(id)) {
                Tensor& gi = t.grad_buffer(id);
                for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
            }
            offset += n;
        }
    });
}

/// out[b, d] = z[perms[d][b], d]: each column shuffled by its own permutation.
inline Var permute_dims(const Var& z, const std::vector<std::vector<std::size_t>>& perms) {
    Tape& tape = detail::common_tape("permute_dims", {z});
    detail::require_rank("permute_dims", "input", z, 2);
    const std::size_t batch = z.shape()[0], dims = z.shape()[1];
    if (perms.size() != dims) {
        throw ShapeError("permute_dims: need one permutation per column (" + std::to_string(dims) + "), got " +
                         std::to_string(perms.size()));
    }
    for (const auto& p : perms) {
        if (p.size() != batch) throw ShapeError("permute_dims: permutation length differs from batch size");
        for (std::size_t v : p) {
            if (v >= batch) throw ShapeError("permute_dims: permutation entry out of range");
        }
    }
    Tensor out(z.shape());
    const Tensor& zv = z.value();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t d = 0; d < dims; ++d) out[b * dims + d] = zv[perms[d][b] * dims + d];
    }
    const std::size_t zi = z.id();
    return tape.record("permute_dims", std::move(out), {z}, [zi, perms, batch, dims](Tape& t, std::size_t self) {
        if (!t.requires_grad(zi)) return;
        const Tensor& g = t.grad_buffer(self);
        Tensor& gz = t.grad_buffer(zi);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t d = 0; d < dims; ++d) gz[perms[d][b] * dims + d] += g[b * dims + d];
        }
    });
}

inline Var linear(const Var& x, const Var& w, const Var& b) {
    Tape& tape = detail::common_tape("linear", {x, w, b});
    detail::require_rank("linear", "input", x, 2);
    detail::require_rank("linear", "weight", w, 2);
    detail::require_rank("linear", "bias", b, 1);
    if (x.shape()[1] != w.shape()[1] || b.shape()[0] != w.shape()[0]) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) + ", bias " +
                         shape_str(b.shape()) + " are incompatible");
    }
    Tensor out = kernels::linear_forward(x.value(), w.value(), b.value());
    const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
    return tape.record("linear", std::move(out), {x, w, b}, [xi, wi, bi](Tape& t, std::size_t self) {
        kernels::linear_backward(t.value(xi), t.value(wi), t.grad_buffer(self),
                                 t.requires_grad(xi) ? &t.grad_buffer(xi) : nullptr,
                                 t.requires_grad(wi) ? &t.grad_buffer(wi) : nullptr,
                                 t.requires_grad(bi) ? &t.grad_buffer(bi) : nullptr);
    });
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, ConvGeometry g = {}) {
    Tape& tape = detail::common_tape("conv2d", {x, w, b});
    detail::require_rank("conv2d", "input", x, 4);
    detail::require_rank("conv2d", "weight", w, 4);
    detail::require_rank("conv2d", "bias", b, 1);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs[1] != ws[1] || ws[2] != g.kernel || ws[3] != g.kernel || b.shape()[0] != ws[0]) {
        throw ShapeError("conv2d: input " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " +
                         shape_str(b.shape()) + " incompatible with kernel " + std::to_string(g.kernel));
    }
    if (kernels::conv_out_extent(xs[2], g) == 0 || kernels::conv_out_extent(xs[3], g) == 0) {
        throw ShapeError("conv2d: input " + shape_str(xs) + " too small for kernel " + std::to_string(g.kernel));
    }
    Tensor out = kernels::conv2d_forward(x.value(), w.value(), b.value(), g);
    const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
    return tape.record("conv2d", std::move(out), {x, w, b}, [xi, wi, bi, g](Tape& t, std::size_t self) {
        kernels::conv2d_backward(t.value(xi), t.value(wi), t.grad_buffer(self), g,
                                 t.requires_grad(xi) ? &t.grad_buffer(xi) : nullptr,
                                 t.requires_grad(wi) ? &t.grad_buffer(wi) : nullptr,
                                 t.requires_grad(bi) ? &t.grad_buffer(bi) : nullptr);
    });
}

inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, ConvGeometry g = {}) {
    Tape& tape = detail::common_tape("conv_transpose2d", {x, w, b});
    detail::require_rank("conv_transpose2d", "input", x, 4);
    detail::require_rank("conv_transpose2d", "weight", w, 4);
    detail::require_rank("conv_transpose2d", "bias", b, 1);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs[1] != ws[0] || ws[2] != g.kernel || ws[3] != g.kernel || b.shape()[0] != ws[1]) {
        throw ShapeError("conv_transpose2d: input " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " +
                         shape_str(b.shape()) + " incompatible with kernel " + std::to_string(g.kernel));
    }
    if (kernels::conv_transpose_out_extent(xs[2], g) == 0 || kernels::conv_transpose_out_extent(xs[3], g) == 0) {
        throw ShapeError("conv_transpose2d: empty output for input " + shape_str(xs));
    }
    Tensor out = kernels::conv_transpose2d_forward(x.value(), w.value(), b.value(), g);
    const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
    return tape.record("conv_transpose2d", std::move(out), {x, w, b}, [xi, wi, bi, g](Tape& t, std::size_t self) {
        kernels::conv_transpose2d_backward(t.value(xi), t.value(wi), t.grad_buffer(self), g,
                                           t.requires_grad(xi) ? &t.grad_buffer(xi) : nullptr,
                                           t.requires_grad(wi) ? &t.grad_buffer(wi) : nullptr,
                                           t.requires_grad(bi) ? &t.grad_buffer(bi) : nullptr);
    });
}

/// Sum over all elements of the Bernoulli negative log-likelihood of
/// `target` under probabilities sigmoid(logits), evaluated stably in logit
/// space: max(l, 0) - l*x + log1p(exp(-|l|)).
inline Var bce_with_logits_sum(const Var& logits, const Var& target) {
    Tape& tape = detail::common_tape("bce_with_logits", {logits, target});
    detail::require_same_shape("bce_with_logits", logits, target);
    const Tensor& lv = logits.value();
    const Tensor& xv = target.value();
    double s = 0.0;
    for (std::size_t i = 0; i < lv.numel(); ++i) {
        const double l = lv[i];
        s += std::max(l, 0.0) - l * xv[i] + std::log1p(std::exp(-std::abs(l)));
    }
    const std::size_t li = logits.id(), xi = target.id();
    return tape.record("bce_with_logits", Tensor::scalar(s), {logits, target}, [li, xi](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        const Tensor& lv = t.value(li);
        const Tensor& xv = t.value(xi);
        if (t.requires_grad(li)) {
            Tensor& gl = t.grad_buffer(li);
            for (std::size_t i = 0; i < lv.numel(); ++i) gl[i] += g * (sigmoid_scalar(lv[i]) - xv[i]);
        }
        if (t.requires_grad(xi)) {
            Tensor& gx = t.grad_buffer(xi);
            for (std::size_t i = 0; i < lv.numel(); ++i) gx[i] -= g * lv[i];
        }
    });
}

/// Mean softmax cross-entropy of (B, K) logits against integer labels.
inline Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
    Tape& tape = detail::common_tape("cross_entropy", {logits});
    detail::require_rank("cross_entropy", "logits", logits, 2);
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    if (labels.size() != batch) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
    }
    const Tensor& lv = logits.value();
    std::vector<double> probs(batch * classes);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] >= classes) throw ShapeError("cross_entropy: label out of range");
        double m = lv[b * classes];
        for (std::size_t k = 1; k < classes; ++k) m = std::max(m, lv[b * classes + k]);
        double z = 0.0;
        for (std::size_t k = 0; k < classes; ++k) z += std::exp(lv[b * classes + k] - m);
        for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] = std::exp(lv[b * classes + k] - m) / z;
        total += m + std::log(z) - lv[b * classes + labels[b]];
    }
    const std::size_t li = logits.id();
    return tape.record("cross_entropy", Tensor::scalar(total / static_cast<double>(batch)), {logits},
                       [li, labels, probs, batch, classes](Tape& t, std::size_t self) {
                           if (!t.requires_grad(li)) return;
                           const double g = t.grad_buffer(self)[0] / static_cast<double>(batch);
                           Tensor& gl = t.grad_buffer(li);
                           for (std::size_t b = 0; b < batch; ++b) {
                               for (std::size_t k = 0; k < classes; ++k) {
                                   const double target = labels[b] == k ? 1.0 : 0.0;
                                   gl[b * classes + k] += g * (probs[b * classes + k] - target);
                               }
                           }
                       });
}

}  // namespace vaemech::ops
