#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace layerfuse {

enum class Axis { batch, channel, frequency, time, feature };

std::string to_string(Axis axis);

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major float tensor of rank 2, 3 or 4.
///
/// Axis roles are fixed by rank: [batch, feature] for rank 2,
/// [batch, feature, time] for rank 3 and [batch, channel, frequency, time]
/// for rank 4. Batch and time extents must be positive; a rank-2/3 feature
/// extent may be zero so that an empty feature block can be concatenated.
/// Instances are immutable; every operation returns a fresh tensor.
class Tensor {
 public:
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<Axis> axis_roles() const;

  float operator[](std::size_t flat) const { return data_[flat]; }

  float at(std::size_t b, std::size_t d) const;
  float at(std::size_t b, std::size_t d, std::size_t t) const;
  float at(std::size_t b, std::size_t c, std::size_t f, std::size_t t) const;

  /// Index of the first non-finite element, if any.
  std::optional<std::size_t> first_non_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace layerfuse
