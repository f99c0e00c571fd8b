#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vaemech/core/error.hpp"

namespace vaemech {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

/// Dense row-major float64 array. Plain value type: copies are deep.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("Tensor: shape " + shape_str(shape_) + " holds " +
                             std::to_string(shape_numel(shape_)) + " values but " +
                             std::to_string(data_.size()) + " were given");
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values) {
        return Tensor(Shape{values.size()}, std::vector<double>(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape_));
        }
        return shape_[axis];
    }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double item() const {
        if (data_.size() != 1) {
            throw ShapeError("Tensor::item: expected a single value, shape is " + shape_str(shape_));
        }
        return data_[0];
    }

    /// Same data viewed under a new shape with equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    /// Contiguous slice along axis 0 (e.g. one batch row).
    std::span<const double> row(std::size_t i) const {
        const std::size_t stride = row_size();
        return std::span<const double>(data_).subspan(i * stride, stride);
    }
    std::span<double> row(std::size_t i) {
        const std::size_t stride = row_size();
        return std::span<double>(data_).subspan(i * stride, stride);
    }
    std::size_t row_size() const {
        if (shape_.empty() || shape_[0] == 0) return 0;
        return data_.size() / shape_[0];
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Concatenate along axis 0; trailing extents must agree.
inline Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
            throw ShapeError("concat_rows: trailing shape mismatch, " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        rows += p.dim(0);
    }
    Shape out_shape{rows};
    out_shape.insert(out_shape.end(), tail.begin(), tail.end());
    std::vector<double> data;
    data.reserve(shape_numel(out_shape));
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return Tensor(std::move(out_shape), std::move(data));
}

/// Rows [begin, begin + count) of a tensor along axis 0.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
    if (t.rank() == 0 || begin + count > t.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for shape " + shape_str(t.shape()));
    }
    Shape shape = t.shape();
    shape[0] = count;
    const std::size_t stride = t.row_size();
    std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                             t.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    return Tensor(std::move(shape), std::move(data));
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("tensor subtract: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace vaemech
