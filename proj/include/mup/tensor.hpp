#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mup/kernels.hpp"

namespace mup {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown when tensor extents or layer shapes do not compose.
class ShapeError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of Real tagged with its shape.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0);
    Tensor(Shape shape, std::vector<Real> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Real> data() noexcept { return data_; }
    std::span<const Real> data() const noexcept { return data_; }
    Real* raw() noexcept { return data_.data(); }
    const Real* raw() const noexcept { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    /// Elements belonging to index `i` of the leading axis.
    std::span<Real> row(std::size_t i);
    std::span<const Real> row(std::size_t i) const;
    std::size_t row_size() const noexcept;

    /// New tensor holding rows [first, first + count) of the leading axis.
    Tensor rows(std::size_t first, std::size_t count) const;

    void reshape(Shape shape);

    const std::vector<Real>& values() const noexcept { return data_; }

   private:
    Shape shape_;
    std::vector<Real> data_;
};

/// Compares shapes and the object representation of every element.
bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept;
bool bitwise_equal(std::span<const Real> a, std::span<const Real> b) noexcept;

bool all_finite(std::span<const Real> values) noexcept;

}  // namespace mup
