#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerfuse/tensor.hpp"

namespace layerfuse {

/// Layer identifier in the model's own numbering ("2", "15", "block3"...).
using LayerId = std::string;

enum class LayerKind { conv4d, timeless };

/// Declared activation shape; nullopt extents (JSON null) match any size.
using DeclaredShape = std::vector<std::optional<std::size_t>>;

std::string shape_string(const DeclaredShape& shape);
bool shape_matches(const DeclaredShape& declared, const Shape& actual);

struct LayerRecord {
  LayerId id;
  LayerKind kind = LayerKind::conv4d;
  DeclaredShape shape;
};

/// How many frames T_o every layer is aligned to.
struct TimePolicy {
  enum class Kind { fixed, ratio };
  Kind kind = Kind::fixed;
  // T_o for `fixed`, the divisor of the input length T for `ratio`.
  std::size_t value = 1;
};

struct ModelLayout {
  std::string name;
  TimePolicy policy;
  // Input window length for models that only accept fixed-length input.
  std::optional<std::size_t> segment_frames;
  std::vector<LayerRecord> layers;

  const LayerRecord& layer(const LayerId& id) const;
  bool has_layer(const LayerId& id) const;
  std::size_t position(const LayerId& id) const;

  /// T_o for a clip whose model input spans `input_frames` frames. A
  /// fixed-window model uses its segment length when input_frames is absent.
  std::size_t output_frames(std::optional<std::size_t> input_frames) const;

  /// Throws ConfigError on a violated layout invariant.
  void validate() const;
};

enum class Split { train, valid, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct SampleEntry {
  std::string id;
  std::string label;
  Split split = Split::train;
  // Model input length in frames; required by ratio policies.
  std::optional<std::size_t> frames;
  // One file per segment; a single path for unsegmented inputs.
  std::map<LayerId, std::vector<std::filesystem::path>> tensors;
};

/// A downstream task: the model layout plus labelled, split samples.
struct TaskManifest {
  std::string task;
  ModelLayout model;
  std::vector<SampleEntry> samples;
};

ModelLayout layout_from_json(const nlohmann::json& j);
nlohmann::json layout_to_json(const ModelLayout& layout);

/// Parse a manifest document. Relative tensor paths are resolved against
/// `base_dir`. `model_override` replaces (or supplies) the "model" field.
TaskManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                const std::optional<ModelLayout>& model_override = std::nullopt,
                                const std::string& default_task = "task");
nlohmann::json manifest_to_json(const TaskManifest& manifest);

/// Missing file -> ConfigError naming the path; schema violations -> ConfigError.
ModelLayout load_layout(const std::filesystem::path& path);
TaskManifest load_manifest(const std::filesystem::path& path,
                           const std::optional<ModelLayout>& model_override = std::nullopt);

/// Throw DataError listing every sample/layer pair whose tensor file is
/// absent, for the given layers (all layout layers when empty).
void check_manifest_files(const TaskManifest& manifest, const std::vector<LayerId>& layers = {});

}  // namespace layerfuse
