#include "ssr/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "ssr/errors.hpp"

namespace ssr::tensor {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_rank(const Shape& shape) {
    if (shape.size() > 4) {
        throw DataError("tensor rank " + std::to_string(shape.size()) + " exceeds 4");
    }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_rank(shape_);
    data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    check_rank(shape_);
    if (shape_volume(shape_) != data_.size()) {
        throw DataError("tensor shape " + shape_str(shape_) + " needs " +
                        std::to_string(shape_volume(shape_)) + " values, got " +
                        std::to_string(data_.size()));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DataError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_str(shape_));
    }
    return shape_[axis];
}

void Tensor::reshape(Shape shape) {
    check_rank(shape);
    if (shape_volume(shape) != data_.size()) {
        throw DataError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    for (float x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace ssr::tensor
