#include "layerfuse/composer.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fs_util.hpp"
#include "layerfuse/error.hpp"
#include "layerfuse/npy.hpp"
#include "layerfuse/ops.hpp"
#include "layerfuse/parallel.hpp"

namespace layerfuse {

TimeAlignedFeature time_align(const LayerRecord& record, const ModelLayout& layout, const Tensor& batch,
                              std::optional<std::size_t> input_frames) {
  if (!shape_matches(record.shape, batch.shape())) {
    throw DataError(fmt::format("layer '{}': activation shape {} does not match declared {}", record.id,
                                shape_string(batch.shape()), shape_string(record.shape)));
  }
  const std::size_t out_frames = layout.output_frames(input_frames);
  if (record.kind == LayerKind::timeless) {
    return {repeat_time(batch, out_frames), record.id};
  }
  const std::size_t frames = batch.extent(3);
  if (auto geometry = plan_pool(frames, out_frames)) {
    return {flatten_cf(maxpool_time(batch, *geometry)), record.id};
  }
  spdlog::warn("layer '{}' has {} frames < T_o = {}; repeating frames", record.id, frames, out_frames);
  return {flatten_cf(repeat_frames(batch, out_frames)), record.id};
}

std::map<LayerId, TimeAlignedFeature> encode_clip(const ModelLayout& layout, const SegmentBatches& per_layer,
                                                  std::optional<std::size_t> input_frames) {
  std::map<LayerId, TimeAlignedFeature> out;
  std::optional<std::size_t> segments;
  for (const auto& [id, batches] : per_layer) {
    if (batches.empty()) throw DataError(fmt::format("layer '{}' has no segments", id));
    if (segments && *segments != batches.size()) {
      throw DataError(fmt::format("segment count mismatch: layer '{}' has {}, other layers have {}", id,
                                  batches.size(), *segments));
    }
    segments = batches.size();
    const auto& record = layout.layer(id);
    std::vector<Tensor> aligned;
    aligned.reserve(batches.size());
    for (const auto& b : batches) aligned.push_back(time_align(record, layout, b, input_frames).tensor);
    out.emplace(id, TimeAlignedFeature{aligned.size() == 1 ? aligned.front() : concat_time(aligned), id});
  }
  return out;
}

FusedFeature fuse(const TimeAlignedFeature& mid, const TimeAlignedFeature& late) {
  if (mid.tensor.extent(2) != late.tensor.extent(2)) {
    throw DataError(fmt::format("cannot fuse layer '{}' ({} frames) with layer '{}' ({} frames): inconsistent T_o",
                                mid.source_layer, mid.tensor.extent(2), late.source_layer, late.tensor.extent(2)));
  }
  return {concat_features(mid.tensor, late.tensor), {mid.source_layer, late.source_layer}};
}

Embedding summarize(const FusedFeature& fused) { return {mean_plus_max_time(fused.tensor), fused.provenance}; }

Embedding summarize(const TimeAlignedFeature& single) {
  return {mean_plus_max_time(single.tensor), {single.source_layer}};
}

std::vector<Segment> plan_segments(std::size_t total_frames, std::size_t segment_frames) {
  if (segment_frames == 0) throw std::invalid_argument("plan_segments: segment length must be positive");
  if (total_frames == 0) throw std::invalid_argument("plan_segments: empty input");
  std::vector<Segment> out;
  std::size_t begin = 0;
  for (; begin + segment_frames <= total_frames; begin += segment_frames) out.push_back({begin, segment_frames, 0});
  const std::size_t rest = total_frames - begin;
  if (rest > 0 && (2 * rest >= segment_frames || out.empty())) out.push_back({begin, rest, segment_frames - rest});
  return out;
}

std::vector<Tensor> split_segments(const Tensor& input, std::size_t segment_frames) {
  if (input.rank() < 3) throw std::invalid_argument("split_segments: need a time axis");
  const std::size_t frames = input.shape().back();
  const std::size_t rows = input.size() / frames;
  std::vector<Tensor> out;
  for (const auto& seg : plan_segments(frames, segment_frames)) {
    std::vector<float> data(rows * segment_frames);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < segment_frames; ++t) {
        const std::size_t src = seg.begin + std::min(t, seg.length - 1);
        data[r * segment_frames + t] = input[r * frames + src];
      }
    }
    Shape shape = input.shape();
    shape.back() = segment_frames;
    out.emplace_back(std::move(shape), std::move(data));
  }
  return out;
}

void EmbeddingSet::save(const std::filesystem::path& stem) const {
  auto npy = stem;
  npy += ".npy";
  auto sidecar = stem;
  sidecar += ".json";
  write_npy(npy, {rows(), dims}, values);
  nlohmann::json j;
  j["task"] = task;
  j["model"] = model;
  j["provenance"] = provenance;
  j["D"] = dims;
  j["N"] = rows();
  j["ids"] = ids;
  j["labels"] = labels;
  std::vector<std::string> split_names;
  for (auto s : splits) split_names.push_back(to_string(s));
  j["splits"] = split_names;
  detail::atomic_write(sidecar, j.dump(2) + "\n");
}

EmbeddingSet EmbeddingSet::load(const std::filesystem::path& stem) {
  auto npy = stem;
  npy += ".npy";
  auto sidecar = stem;
  sidecar += ".json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", sidecar.string(), e.what()));
  }
  EmbeddingSet set;
  try {
    set.task = j.value("task", stem.filename().string());
    set.model = j.value("model", "");
    set.provenance = j.at("provenance").get<std::vector<LayerId>>();
    set.dims = j.at("D").get<std::size_t>();
    set.ids = j.at("ids").get<std::vector<std::string>>();
    set.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& s : j.at("splits").get<std::vector<std::string>>()) set.splits.push_back(parse_split(s));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", sidecar.string(), e.what()));
  }
  if (set.labels.size() != set.rows() || set.splits.size() != set.rows()) {
    throw DataError(fmt::format("{}: ids/labels/splits lengths differ", sidecar.string()));
  }
  const Tensor matrix = load_tensor(npy, Shape{set.rows(), set.dims});
  set.values.assign(matrix.data().begin(), matrix.data().end());
  return set;
}

namespace {

Embedding embed_sample(const TaskManifest& manifest, const SampleEntry& sample, std::span<const LayerId> layers) {
  const auto& layout = manifest.model;
  SegmentBatches batches;
  for (const auto& layer : layers) {
    if (batches.contains(layer)) continue;
    const auto& record = layout.layer(layer);
    auto it = sample.tensors.find(layer);
    if (it == sample.tensors.end()) {
      throw DataError(fmt::format("task '{}' sample '{}': no tensor for layer '{}'", manifest.task, sample.id, layer));
    }
    auto& segs = batches[layer];
    for (const auto& path : it->second) {
      Tensor t = load_tensor(path);
      if (t.extent(0) != 1) {
        throw DataError(fmt::format("{}: sample tensors must have batch extent 1, got {}", path.string(),
                                    shape_string(t.shape())));
      }
      if (!shape_matches(record.shape, t.shape())) {
        throw DataError(fmt::format("{}: shape {} does not match declared {} for layer '{}'", path.string(),
                                    shape_string(t.shape()), shape_string(record.shape), layer));
      }
      segs.push_back(std::move(t));
    }
  }
  const auto aligned = encode_clip(layout, batches, sample.frames);
  if (layers.size() == 1) return summarize(aligned.at(layers[0]));
  return summarize(fuse(aligned.at(layers[0]), aligned.at(layers[1])));
}

}  // namespace

EmbeddingSet compose_embeddings(const TaskManifest& manifest, std::span<const LayerId> layers, std::size_t workers) {
  if (layers.empty() || layers.size() > 2) {
    throw ConfigError(fmt::format("compose needs one or two layers, got {}", layers.size()));
  }
  for (const auto& l : layers) manifest.model.position(l);
  if (manifest.samples.empty()) throw DataError(fmt::format("task '{}' has no samples", manifest.task));

  std::vector<std::optional<Embedding>> rows(manifest.samples.size());
  parallel_for(rows.size(), workers, [&](std::size_t i) { rows[i] = embed_sample(manifest, manifest.samples[i], layers); });

  EmbeddingSet set;
  set.task = manifest.task;
  set.model = manifest.model.name;
  set.provenance.assign(layers.begin(), layers.end());
  set.dims = rows.front()->vector.extent(1);
  set.values.reserve(rows.size() * set.dims);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = rows[i]->vector;
    if (v.extent(1) != set.dims) {
      throw DataError(fmt::format("task '{}' sample '{}': embedding width {} differs from {}", manifest.task,
                                  manifest.samples[i].id, v.extent(1), set.dims));
    }
    set.values.insert(set.values.end(), v.data().begin(), v.data().end());
    set.ids.push_back(manifest.samples[i].id);
    set.labels.push_back(manifest.samples[i].label);
    set.splits.push_back(manifest.samples[i].split);
  }
  return set;
}

EmbeddingSet compose_embeddings(const TaskManifest& manifest, const LayerId& mid, const LayerId& late,
                                std::size_t workers) {
  const std::vector<LayerId> layers{mid, late};
  return compose_embeddings(manifest, layers, workers);
}

}  // namespace layerfuse
