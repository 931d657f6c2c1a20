#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hystar/errors.hpp"

namespace hystar {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Over-aligned buffer: Eigen reductions then peel identically for every
/// allocation. With default malloc alignment the summation order, and so the
/// rounding, would depend on the address.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense row-major real array with an optional gradient slot.
///
/// Rank-1 tensors behave as a single row wherever a matrix is expected, so an
/// r-vector and a 1 x r matrix are interchangeable in the graph operations.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = AlignedVector<T>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_dims();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

    Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
        return Tensor({rows, cols}, std::vector<T>(values));
    }
    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }
    static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading extent for rank 2, 1 for vectors.
    std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept {
        requires_grad_ = on;
        if (!on) grad_.reset();
    }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<const T> grad() const {
        if (!grad_) throw ContractError("tensor has no gradient");
        return *grad_;
    }
    std::span<T> grad() {
        if (!grad_) throw ContractError("tensor has no gradient");
        return *grad_;
    }
    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
    }
    void clear_grad() noexcept { grad_.reset(); }
    void accumulate_grad(std::span<const T> delta) {
        if (delta.size() != data_.size()) throw ShapeError("gradient size mismatch");
        if (!grad_) grad_.emplace(data_.size(), T{0});
        for (std::size_t i = 0; i < delta.size(); ++i) (*grad_)[i] += delta[i];
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, typename Tensor<U>::Storage(data_.begin(), data_.end()));
    }

    /// Same shape and bit-identical values; the gradient slot is ignored.
    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_dims() const {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }

    Shape shape_;
    Storage data_;
    bool requires_grad_ = false;
    std::optional<Storage> grad_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major Eigen views over raw tensor storage.
template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(T* p, std::size_t rows, std::size_t cols) {
    return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const T* p, std::size_t rows, std::size_t cols) {
    return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(Tensor<T>& t) {
    return as_matrix(t.data(), t.rows(), t.cols());
}
template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const Tensor<T>& t) {
    return as_matrix(t.data(), t.rows(), t.cols());
}

template <typename T>
Tensor<T> identity(std::size_t n) {
    Tensor<T> out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    Tensor<T> out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) throw ShapeError("max_abs_diff: size mismatch");
    T m{0};
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace hystar
