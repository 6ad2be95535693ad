#pragma once

#include <filesystem>
#include <optional>

#include "layerfuse/tensor.hpp"

namespace layerfuse {

/// Read an NPY (v1.0/v2.0) array as a tensor.
///
/// Accepts little- or big-endian 4/8-byte floats in C order; 8-byte data is
/// narrowed to float with a warning. Throws DataError on a malformed header,
/// any other dtype, Fortran order, a truncated payload or a non-finite value
/// (the message names the flat index). When `expected` is given the loaded
/// shape must match it exactly.
Tensor load_tensor(const std::filesystem::path& path, const std::optional<Shape>& expected = std::nullopt);

/// Write `tensor` as NPY v1.0 '<f4', C order. The file is written to a
/// temporary sibling and renamed into place.
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);

/// Same as write_tensor for a plain row-major float matrix / array.
void write_npy(const std::filesystem::path& path, const Shape& shape, std::span<const float> data);

}  // namespace layerfuse
