#include "layerfuse/ops.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace layerfuse {

namespace {

void require_rank(const Tensor& z, std::size_t rank, const char* op) {
  if (z.rank() != rank) {
    throw std::invalid_argument(
        fmt::format("{}: expected rank-{} tensor, got shape {}", op, rank, shape_string(z.shape())));
  }
}

}  // namespace

std::optional<PoolGeometry> plan_pool(std::size_t input_frames, std::size_t output_frames) {
  if (input_frames == 0 || output_frames == 0) {
    throw std::invalid_argument(fmt::format("plan_pool: frame counts must be positive ({} -> {})",
                                            input_frames, output_frames));
  }
  if (input_frames < output_frames) return std::nullopt;
  PoolGeometry g;
  g.input_frames = input_frames;
  g.output_frames = output_frames;
  g.stride = input_frames / output_frames;
  g.kernel = input_frames - (output_frames - 1) * g.stride;
  return g;
}

Tensor maxpool_time(const Tensor& z, const PoolGeometry& geometry) {
  require_rank(z, 4, "maxpool_time");
  const auto& s = z.shape();
  const std::size_t frames = s[3];
  if (geometry.input_frames != frames || geometry.output_frames == 0 ||
      geometry.window_end(geometry.output_frames - 1) > frames) {
    throw std::invalid_argument(fmt::format("maxpool_time: geometry for {} frames does not fit tensor {}",
                                            geometry.input_frames, shape_string(s)));
  }
  const std::size_t rows = s[0] * s[1] * s[2];
  const std::size_t out_frames = geometry.output_frames;
  std::vector<float> out(rows * out_frames);
  const auto in = z.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in.data() + r * frames;
    for (std::size_t t = 0; t < out_frames; ++t) {
      out[r * out_frames + t] = *std::max_element(row + geometry.window_begin(t), row + geometry.window_end(t));
    }
  }
  return Tensor({s[0], s[1], s[2], out_frames}, std::move(out));
}

Tensor flatten_cf(const Tensor& z) {
  require_rank(z, 4, "flatten_cf");
  const auto& s = z.shape();
  // Row-major [B, C, F, T] already stores (c, f) pairs channel-major.
  return Tensor({s[0], s[1] * s[2], s[3]}, {z.data().begin(), z.data().end()});
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_features");
  require_rank(b, 3, "concat_features");
  if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2)) {
    throw std::invalid_argument(fmt::format("concat_features: batch/time mismatch between {} and {}",
                                            shape_string(a.shape()), shape_string(b.shape())));
  }
  const std::size_t batch = a.extent(0);
  const std::size_t block_a = a.extent(1) * a.extent(2);
  const std::size_t block_b = b.extent(1) * b.extent(2);
  std::vector<float> out;
  out.reserve(a.size() + b.size());
  for (std::size_t i = 0; i < batch; ++i) {
    auto da = a.data().subspan(i * block_a, block_a);
    auto db = b.data().subspan(i * block_b, block_b);
    out.insert(out.end(), da.begin(), da.end());
    out.insert(out.end(), db.begin(), db.end());
  }
  return Tensor({batch, a.extent(1) + b.extent(1), a.extent(2)}, std::move(out));
}

Tensor concat_time(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_time: no parts");
  const std::size_t batch = parts.front().extent(0);
  const std::size_t dims = parts.front().extent(1);
  std::size_t frames = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_time");
    if (p.extent(0) != batch || p.extent(1) != dims) {
      throw std::invalid_argument(fmt::format("concat_time: batch/feature mismatch between {} and {}",
                                              shape_string(parts.front().shape()), shape_string(p.shape())));
    }
    frames += p.extent(2);
  }
  std::vector<float> out(batch * dims * frames);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pf = p.extent(2);
    for (std::size_t r = 0; r < batch * dims; ++r) {
      auto src = p.data().subspan(r * pf, pf);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(r * frames + offset));
    }
    offset += pf;
  }
  return Tensor({batch, dims, frames}, std::move(out));
}

Tensor repeat_time(const Tensor& z, std::size_t frames) {
  require_rank(z, 2, "repeat_time");
  if (frames == 0) throw std::invalid_argument("repeat_time: frames must be positive");
  std::vector<float> out;
  out.reserve(z.size() * frames);
  for (float v : z.data()) out.insert(out.end(), frames, v);
  return Tensor({z.extent(0), z.extent(1), frames}, std::move(out));
}

Tensor repeat_frames(const Tensor& z, std::size_t frames) {
  if (z.rank() != 3 && z.rank() != 4) {
    throw std::invalid_argument(fmt::format("repeat_frames: expected rank 3 or 4, got {}", shape_string(z.shape())));
  }
  if (frames == 0) throw std::invalid_argument("repeat_frames: frames must be positive");
  const std::size_t in_frames = z.shape().back();
  const std::size_t rows = z.size() / in_frames;
  std::vector<float> out(rows * frames);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < frames; ++t) {
      out[r * frames + t] = z[r * in_frames + t * in_frames / frames];
    }
  }
  Shape shape = z.shape();
  shape.back() = frames;
  return Tensor(std::move(shape), std::move(out));
}

Tensor mean_plus_max_time(const Tensor& z) {
  require_rank(z, 3, "mean_plus_max_time");
  const std::size_t frames = z.extent(2);
  const std::size_t rows = z.extent(0) * z.extent(1);
  std::vector<float> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = z.data().subspan(r * frames, frames);
    double sum = 0.0;
    float peak = -std::numeric_limits<float>::infinity();
    for (float v : row) {
      sum += v;
      peak = std::max(peak, v);
    }
    out[r] = static_cast<float>(sum / static_cast<double>(frames) + static_cast<double>(peak));
  }
  return Tensor({z.extent(0), z.extent(1)}, std::move(out));
}

}  // namespace layerfuse
