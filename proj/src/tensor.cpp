#include "layerfuse/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace layerfuse {

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::batch: return "batch";
    case Axis::channel: return "channel";
    case Axis::frequency: return "frequency";
    case Axis::time: return "time";
    case Axis::feature: return "feature";
  }
  return "unknown";
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (rank() < 2 || rank() > 4) {
    throw std::invalid_argument(fmt::format("tensor rank must be 2, 3 or 4, got shape {}", shape_string(shape_)));
  }
  // Only the rank-2/3 feature axis may be empty.
  for (std::size_t axis = 0; axis < rank(); ++axis) {
    const bool feature_axis = rank() < 4 && axis == 1;
    if (shape_[axis] == 0 && !feature_axis) {
      throw std::invalid_argument(fmt::format("zero extent on axis {} of shape {}", axis, shape_string(shape_)));
    }
  }
  if (data_.size() != element_count(shape_)) {
    throw std::invalid_argument(fmt::format("shape {} needs {} elements, got {}", shape_string(shape_),
                                            element_count(shape_), data_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0f); }

Tensor Tensor::filled(Shape shape, float value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

std::vector<Axis> Tensor::axis_roles() const {
  switch (rank()) {
    case 2: return {Axis::batch, Axis::feature};
    case 3: return {Axis::batch, Axis::feature, Axis::time};
    default: return {Axis::batch, Axis::channel, Axis::frequency, Axis::time};
  }
}

float Tensor::at(std::size_t b, std::size_t d) const { return data_.at(b * shape_.at(1) + d); }

float Tensor::at(std::size_t b, std::size_t d, std::size_t t) const {
  return data_.at((b * shape_.at(1) + d) * shape_.at(2) + t);
}

float Tensor::at(std::size_t b, std::size_t c, std::size_t f, std::size_t t) const {
  return data_.at(((b * shape_.at(1) + c) * shape_.at(2) + f) * shape_.at(3) + t);
}

std::optional<std::size_t> Tensor::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i;
  }
  return std::nullopt;
}

}  // namespace layerfuse
