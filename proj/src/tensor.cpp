#include "mup/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace mup {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    if (element_count(shape_) != data_.size())
        throw ShapeError("tensor shape " + to_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " values, got " +
                         std::to_string(data_.size()));
}

std::size_t Tensor::row_size() const noexcept {
    if (shape_.empty()) return 0;
    return data_.size() / shape_[0];
}

std::span<Real> Tensor::row(std::size_t i) {
    std::size_t n = row_size();
    return std::span<Real>(data_).subspan(i * n, n);
}

std::span<const Real> Tensor::row(std::size_t i) const {
    std::size_t n = row_size();
    return std::span<const Real>(data_).subspan(i * n, n);
}

Tensor Tensor::rows(std::size_t first, std::size_t count) const {
    if (shape_.empty() || first + count > shape_[0] || count == 0)
        throw ShapeError("row range out of bounds for shape " + to_string(shape_));
    Shape s = shape_;
    s[0] = count;
    std::size_t n = row_size();
    std::vector<Real> out(data_.begin() + static_cast<std::ptrdiff_t>(first * n),
                          data_.begin() + static_cast<std::ptrdiff_t>((first + count) * n));
    return Tensor(std::move(s), std::move(out));
}

void Tensor::reshape(Shape shape) {
    if (element_count(shape) != data_.size())
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    shape_ = std::move(shape);
}

bool bitwise_equal(std::span<const Real> a, std::span<const Real> b) noexcept {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(Real)) == 0);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
    return a.shape() == b.shape() && bitwise_equal(a.data(), b.data());
}

bool all_finite(std::span<const Real> values) noexcept {
    for (Real v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace mup
