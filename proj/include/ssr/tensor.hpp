#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssr::tensor {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major float32 tensor with up to four axes.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Reinterprets the storage with a new shape of the same volume.
    void reshape(Shape shape);
    void fill(float value);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// A trainable tensor with its registry name and freeze flag.
struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;

    friend bool operator==(const Parameter& a, const Parameter& b) = default;
};

}  // namespace ssr::tensor
