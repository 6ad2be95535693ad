#pragma once

#include <cstddef>
#include <optional>

#include "layerfuse/tensor.hpp"

namespace layerfuse {

/// Max-pool window layout that maps `input_frames` onto `output_frames`.
struct PoolGeometry {
  std::size_t input_frames = 0;
  std::size_t output_frames = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;

  std::size_t window_begin(std::size_t t) const { return t * stride; }
  std::size_t window_end(std::size_t t) const { return t * stride + kernel; }

  friend bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

/// stride = floor(T_l / T_o), kernel = T_l - (T_o - 1) * stride.
///
/// Returns nullopt when input_frames < output_frames; the caller has to
/// repeat frames instead of pooling. Throws std::invalid_argument when
/// either count is zero.
std::optional<PoolGeometry> plan_pool(std::size_t input_frames, std::size_t output_frames);

/// [B, C, F, T] -> [B, C, F, T_o], each output frame the max over its window.
Tensor maxpool_time(const Tensor& z, const PoolGeometry& geometry);

/// [B, C, F, T] -> [B, C*F, T] with feature index d = c*F + f.
Tensor flatten_cf(const Tensor& z);

/// Concatenate two rank-3 tensors along the feature axis.
Tensor concat_features(const Tensor& a, const Tensor& b);

/// Concatenate rank-3 tensors along the time axis, in order.
Tensor concat_time(std::span<const Tensor> parts);

/// [B, D] -> [B, D, frames], the same vector at every frame.
Tensor repeat_time(const Tensor& z, std::size_t frames);

/// Nearest-neighbour upsampling of the time axis of a rank-3 or rank-4
/// tensor: output frame t copies input frame floor(t * T / frames).
Tensor repeat_frames(const Tensor& z, std::size_t frames);

/// [B, D, T] -> [B, D], out = mean over time + max over time.
Tensor mean_plus_max_time(const Tensor& z);

}  // namespace layerfuse
