#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rmdl/error.hpp"

namespace rmdl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major array. A default-constructed tensor is the empty
/// placeholder (rank 0, no elements); every other tensor has positive dims.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_size(shape_))
            fail(ErrorKind::Shape, "tensor data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

    /// Contiguous slice for index `i` along the leading axis.
    std::span<T> row(std::size_t i) {
        const std::size_t stride = data_.size() / shape_.front();
        return std::span<T>(data_).subspan(i * stride, stride);
    }
    std::span<const T> row(std::size_t i) const {
        const std::size_t stride = data_.size() / shape_.front();
        return std::span<const T>(data_).subspan(i * stride, stride);
    }

    void reshape(Shape shape) {
        validate_shape(shape);
        if (shape_size(shape) != data_.size())
            fail(ErrorKind::Shape, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
    }

    Tensor reshaped(Shape shape) const& {
        Tensor copy = *this;
        copy.reshape(std::move(shape));
        return copy;
    }
    Tensor reshaped(Shape shape) && {
        reshape(std::move(shape));
        return std::move(*this);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) fail(ErrorKind::Shape, "tensor shape must have at least one dimension");
        for (std::size_t d : shape)
            if (d == 0) fail(ErrorKind::Shape, "tensor dimensions must be positive, got " + shape_str(shape));
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Rows `indices` of `source` along the leading axis, gathered into a new tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& source, std::span<const std::size_t> indices) {
    Shape shape = source.shape();
    shape[0] = indices.size();
    Tensor<T> out(shape);
    const std::size_t stride = source.size() / source.dim(0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = source.row(indices[i]);
        std::copy(src.begin(), src.end(), out.ptr() + i * stride);
    }
    return out;
}

} // namespace rmdl
