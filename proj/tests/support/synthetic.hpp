#pragma once

// Synthetic activation datasets with labels planted in chosen layers.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerfuse/layout.hpp"
#include "layerfuse/npy.hpp"

namespace layerfuse::testkit {

struct PlantedSpec {
  std::vector<LayerId> layers{"A", "B"};
  std::size_t classes = 4;
  std::size_t train = 400;
  std::size_t valid = 100;
  std::size_t test = 300;
  std::size_t channels = 4;
  std::size_t freqs = 4;
  std::size_t frames = 8;
  std::size_t out_frames = 2;
  float signal = 2.5f;
  std::uint64_t seed = 1;
};

inline nlohmann::json planted_layout_json(const PlantedSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& id : spec.layers) {
    layers.push_back({{"id", id}, {"kind", "conv4d"}, {"shape", {1, spec.channels, spec.freqs, spec.frames}}});
  }
  return {{"name", "synth"}, {"time_policy", {{"fixed", spec.out_frames}}}, {"layers", layers}};
}

/// Writes `<dir>/<task>/...npy` plus `<dir>/<task>.json`. Every layer gets
/// unit Gaussian noise; in `signal_layer` the class-k sample additionally
/// has `signal` added to every entry of channel k % channels.
inline std::filesystem::path write_planted_task(const std::filesystem::path& dir, const std::string& task,
                                                const LayerId& signal_layer, const PlantedSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  const std::size_t per_layer = spec.channels * spec.freqs * spec.frames;
  const std::size_t total = spec.train + spec.valid + spec.test;

  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t label = i % spec.classes;
    const char* split = i < spec.train ? "train" : i < spec.train + spec.valid ? "valid" : "test";
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& layer : spec.layers) {
      std::vector<float> data(per_layer);
      for (auto& v : data) v = noise(rng);
      if (layer == signal_layer) {
        const std::size_t c = label % spec.channels;
        for (std::size_t k = 0; k < spec.freqs * spec.frames; ++k) data[c * spec.freqs * spec.frames + k] += spec.signal;
      }
      const auto rel = std::filesystem::path(task) / (layer + "_" + std::to_string(i) + ".npy");
      write_tensor(dir / rel, Tensor({1, spec.channels, spec.freqs, spec.frames}, std::move(data)));
      tensors[layer] = rel.string();
    }
    samples.push_back({{"id", task + "-" + std::to_string(i)},
                       {"label", "class" + std::to_string(label)},
                       {"split", split},
                       {"tensors", tensors}});
  }
  const nlohmann::json manifest{{"task", task}, {"model", planted_layout_json(spec)}, {"samples", samples}};
  const auto path = dir / (task + ".json");
  std::ofstream(path) << manifest.dump(1);
  return path;
}

}  // namespace layerfuse::testkit
