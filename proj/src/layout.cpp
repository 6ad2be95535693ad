#include "layerfuse/layout.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fs_util.hpp"
#include "layerfuse/error.hpp"

namespace layerfuse {

using nlohmann::json;

std::string shape_string(const DeclaredShape& shape) {
  std::vector<std::string> parts;
  for (const auto& d : shape) parts.push_back(d ? std::to_string(*d) : "*");
  return fmt::format("[{}]", fmt::join(parts, ","));
}

bool shape_matches(const DeclaredShape& declared, const Shape& actual) {
  if (declared.size() != actual.size()) return false;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (declared[i] && *declared[i] != actual[i]) return false;
  }
  return true;
}

const LayerRecord& ModelLayout::layer(const LayerId& id) const { return layers.at(position(id)); }

bool ModelLayout::has_layer(const LayerId& id) const {
  return std::any_of(layers.begin(), layers.end(), [&](const LayerRecord& r) { return r.id == id; });
}

std::size_t ModelLayout::position(const LayerId& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  throw ConfigError(fmt::format("model '{}' has no layer '{}'", name, id));
}

std::size_t ModelLayout::output_frames(std::optional<std::size_t> input_frames) const {
  if (policy.kind == TimePolicy::Kind::fixed) return policy.value;
  if (!input_frames) input_frames = segment_frames;
  if (!input_frames) {
    throw DataError(fmt::format("model '{}' uses T_o = T/{} but the sample has no 'frames'", name, policy.value));
  }
  return std::max<std::size_t>(1, *input_frames / policy.value);
}

void ModelLayout::validate() const {
  if (policy.value == 0) throw ConfigError(fmt::format("model '{}': time policy value must be positive", name));
  if (segment_frames && *segment_frames == 0) {
    throw ConfigError(fmt::format("model '{}': segment_frames must be positive", name));
  }
  if (layers.empty()) throw ConfigError(fmt::format("model '{}' lists no layers", name));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& r = layers[i];
    const std::size_t want = r.kind == LayerKind::conv4d ? 4 : 2;
    if (r.shape.size() != want) {
      throw ConfigError(fmt::format("model '{}' layer '{}': {} layers need rank-{} shapes, got {}", name, r.id,
                                    r.kind == LayerKind::conv4d ? "conv4d" : "timeless", want,
                                    shape_string(r.shape)));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (layers[j].id == r.id) throw ConfigError(fmt::format("model '{}': duplicate layer '{}'", name, r.id));
    }
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "valid") return Split::valid;
  if (text == "test") return Split::test;
  throw ConfigError(fmt::format("unknown split '{}' (expected train|valid|test)", text));
}

namespace {

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(fmt::format("{}: missing field '{}'", where, key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: field '{}': {}", where, key, e.what()));
  }
}

std::string id_from_json(const json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }

}  // namespace

ModelLayout layout_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model layout must be a JSON object");
  ModelLayout layout;
  layout.name = get_field<std::string>(j, "name", "model");
  const std::string where = fmt::format("model '{}'", layout.name);

  const json policy = get_field<json>(j, "time_policy", where);
  if (policy.contains("fixed")) {
    layout.policy = {TimePolicy::Kind::fixed, get_field<std::size_t>(policy, "fixed", where)};
  } else if (policy.contains("ratio")) {
    layout.policy = {TimePolicy::Kind::ratio, get_field<std::size_t>(policy, "ratio", where)};
  } else {
    throw ConfigError(where + ": time_policy needs 'fixed' or 'ratio'");
  }
  if (j.contains("segment_frames") && !j["segment_frames"].is_null()) {
    layout.segment_frames = get_field<std::size_t>(j, "segment_frames", where);
  }
  for (const auto& lj : get_field<json>(j, "layers", where)) {
    LayerRecord r;
    if (!lj.contains("id")) throw ConfigError(where + ": layer without 'id'");
    r.id = id_from_json(lj["id"]);
    const auto kind = get_field<std::string>(lj, "kind", where);
    if (kind == "conv4d") {
      r.kind = LayerKind::conv4d;
    } else if (kind == "timeless") {
      r.kind = LayerKind::timeless;
    } else {
      throw ConfigError(fmt::format("{} layer '{}': unknown kind '{}'", where, r.id, kind));
    }
    for (const auto& d : get_field<json>(lj, "shape", where)) {
      if (d.is_null()) {
        r.shape.emplace_back(std::nullopt);
      } else if (d.is_number_unsigned() && d.get<std::size_t>() > 0) {
        r.shape.emplace_back(d.get<std::size_t>());
      } else {
        throw ConfigError(fmt::format("{} layer '{}': extents must be positive integers or null", where, r.id));
      }
    }
    layout.layers.push_back(std::move(r));
  }
  layout.validate();
  return layout;
}

json layout_to_json(const ModelLayout& layout) {
  json j;
  j["name"] = layout.name;
  j["time_policy"] = json{{layout.policy.kind == TimePolicy::Kind::fixed ? "fixed" : "ratio", layout.policy.value}};
  if (layout.segment_frames) j["segment_frames"] = *layout.segment_frames;
  j["layers"] = json::array();
  for (const auto& r : layout.layers) {
    json shape = json::array();
    for (const auto& d : r.shape) shape.push_back(d ? json(*d) : json(nullptr));
    j["layers"].push_back({{"id", r.id}, {"kind", r.kind == LayerKind::conv4d ? "conv4d" : "timeless"}, {"shape", shape}});
  }
  return j;
}

TaskManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir,
                                const std::optional<ModelLayout>& model_override, const std::string& default_task) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  TaskManifest m;
  m.task = j.value("task", default_task);
  if (model_override) {
    m.model = *model_override;
  } else if (j.contains("model") && j["model"].is_object()) {
    m.model = layout_from_json(j["model"]);
  } else if (j.contains("model") && j["model"].is_string()) {
    m.model = load_layout(base_dir / j["model"].get<std::string>());
  } else {
    throw ConfigError(fmt::format("manifest '{}' has no model layout", m.task));
  }

  const std::string where = fmt::format("manifest '{}'", m.task);
  for (const auto& sj : get_field<json>(j, "samples", where)) {
    SampleEntry s;
    if (!sj.contains("id")) throw ConfigError(where + ": sample without 'id'");
    s.id = id_from_json(sj["id"]);
    const std::string sw = fmt::format("{} sample '{}'", where, s.id);
    s.label = id_from_json(get_field<json>(sj, "label", sw));
    s.split = parse_split(get_field<std::string>(sj, "split", sw));
    if (sj.contains("frames") && !sj["frames"].is_null()) s.frames = get_field<std::size_t>(sj, "frames", sw);
    const json tensors = get_field<json>(sj, "tensors", sw);
    for (const auto& [layer, ref] : tensors.items()) {
      std::vector<std::filesystem::path> paths;
      auto resolve = [&](const json& p) {
        if (!p.is_string()) throw ConfigError(fmt::format("{}: tensor path for layer '{}' must be a string", sw, layer));
        std::filesystem::path path = p.get<std::string>();
        paths.push_back(path.is_absolute() ? path : base_dir / path);
      };
      if (ref.is_array()) {
        for (const auto& p : ref) resolve(p);
      } else {
        resolve(ref);
      }
      if (paths.empty()) throw ConfigError(fmt::format("{}: layer '{}' lists no tensor files", sw, layer));
      s.tensors[layer] = std::move(paths);
    }
    m.samples.push_back(std::move(s));
  }
  return m;
}

json manifest_to_json(const TaskManifest& manifest) {
  json j;
  j["task"] = manifest.task;
  j["model"] = layout_to_json(manifest.model);
  j["samples"] = json::array();
  for (const auto& s : manifest.samples) {
    json tensors = json::object();
    for (const auto& [layer, paths] : s.tensors) {
      if (paths.size() == 1) {
        tensors[layer] = paths.front().string();
      } else {
        json arr = json::array();
        for (const auto& p : paths) arr.push_back(p.string());
        tensors[layer] = arr;
      }
    }
    json sj{{"id", s.id}, {"label", s.label}, {"split", to_string(s.split)}, {"tensors", tensors}};
    if (s.frames) sj["frames"] = *s.frames;
    j["samples"].push_back(std::move(sj));
  }
  return j;
}

namespace {

json parse_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("file not found: {}", path.string()));
  try {
    return json::parse(detail::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
}

}  // namespace

ModelLayout load_layout(const std::filesystem::path& path) { return layout_from_json(parse_file(path)); }

TaskManifest load_manifest(const std::filesystem::path& path, const std::optional<ModelLayout>& model_override) {
  return manifest_from_json(parse_file(path), path.parent_path(), model_override, path.stem().string());
}

void check_manifest_files(const TaskManifest& manifest, const std::vector<LayerId>& layers) {
  std::vector<LayerId> wanted = layers;
  if (wanted.empty()) {
    for (const auto& r : manifest.model.layers) wanted.push_back(r.id);
  }
  std::vector<std::string> missing;
  for (const auto& s : manifest.samples) {
    for (const auto& layer : wanted) {
      auto it = s.tensors.find(layer);
      if (it == s.tensors.end()) {
        missing.push_back(fmt::format("{}/{} (not listed)", s.id, layer));
        continue;
      }
      for (const auto& p : it->second) {
        if (!std::filesystem::exists(p)) missing.push_back(fmt::format("{}/{} ({})", s.id, layer, p.string()));
      }
    }
  }
  if (!missing.empty()) {
    throw DataError(fmt::format("task '{}': missing tensors: {}", manifest.task, fmt::join(missing, ", ")));
  }
}

}  // namespace layerfuse
