#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerfuse/layout.hpp"
#include "layerfuse/tensor.hpp"

namespace layerfuse {

/// Layer output pooled to T_o frames with channel/frequency flattened:
/// [B, C*F, T_o] for conv4d sources, [B, D, T_o] for timeless ones.
struct TimeAlignedFeature {
  Tensor tensor;
  LayerId source_layer;
};

/// Per-frame features of one or more layers, concatenated mid first.
struct FusedFeature {
  Tensor tensor;
  std::vector<LayerId> provenance;
};

/// Time-summarized clip embedding [B, D].
struct Embedding {
  Tensor vector;
  std::vector<LayerId> provenance;
};

/// Align one layer activation to the layout's T_o.
///
/// conv4d records are max-pooled over time and flattened. When the layer has
/// fewer frames than T_o its frames are repeated (nearest neighbour) with a
/// warning. Timeless records are repeated T_o times. A tensor that does not
/// match the record's declared shape raises DataError.
TimeAlignedFeature time_align(const LayerRecord& record, const ModelLayout& layout, const Tensor& batch,
                              std::optional<std::size_t> input_frames = std::nullopt);

using SegmentBatches = std::map<LayerId, std::vector<Tensor>>;

/// Align every segment of every layer and join the segments along time,
/// giving [B, D, T_o * segments] per layer. All layers must carry the same
/// number of segments.
std::map<LayerId, TimeAlignedFeature> encode_clip(const ModelLayout& layout, const SegmentBatches& per_layer,
                                                  std::optional<std::size_t> input_frames = std::nullopt);

FusedFeature fuse(const TimeAlignedFeature& mid, const TimeAlignedFeature& late);

Embedding summarize(const FusedFeature& fused);
Embedding summarize(const TimeAlignedFeature& single);

/// One fixed-length window over a longer input. `pad` trailing frames are
/// filled by repeating the last real frame.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::size_t pad = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Non-overlapping windows of `segment_frames`. A trailing remainder shorter
/// than half a window is dropped, a longer one is edge-padded. An input
/// shorter than half a window still yields one padded segment.
std::vector<Segment> plan_segments(std::size_t total_frames, std::size_t segment_frames);

/// Cut a time-last tensor (rank 3 or 4) into windows per plan_segments.
std::vector<Tensor> split_segments(const Tensor& input, std::size_t segment_frames);

/// N x D embedding matrix with per-row id, label and split.
struct EmbeddingSet {
  std::string task;
  std::string model;
  std::vector<LayerId> provenance;
  std::size_t dims = 0;
  std::vector<float> values;  // row-major N x dims
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  std::vector<Split> splits;

  std::size_t rows() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return std::span(values).subspan(i * dims, dims); }

  /// Writes "<stem>.npy" ('<f4', N x D) and "<stem>.json".
  void save(const std::filesystem::path& stem) const;
  static EmbeddingSet load(const std::filesystem::path& stem);
};

/// Embed every manifest sample from the given layers (one layer: single
/// layer path without fusion; two layers: fuse(mid, late)). Rows follow
/// manifest order regardless of `workers`.
EmbeddingSet compose_embeddings(const TaskManifest& manifest, std::span<const LayerId> layers,
                                std::size_t workers = 1);

/// Fused (M, L) embeddings. M == L fuses the layer with itself.
EmbeddingSet compose_embeddings(const TaskManifest& manifest, const LayerId& mid, const LayerId& late,
                                std::size_t workers = 1);

}  // namespace layerfuse
