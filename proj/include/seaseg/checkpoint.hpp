#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "seaseg/model.hpp"

namespace seaseg {

// Everything stored next to the model weights.
struct CheckpointExtras {
  nlohmann::json meta = nlohmann::json::object();
  nlohmann::json optimizer = nullptr;
  std::map<std::string, Tensor<float>> f32;
  std::map<std::string, Tensor<double>> f64;
};

struct LoadedCheckpoint {
  SeUNet model;
  CheckpointExtras extras;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// File layout: "SEUN1", u64 little-endian header length, JSON header (config, tensor manifest
// with name, shape, dtype and byte offset, meta, optimizer), then the raw little-endian arrays.
// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const SeUNet& model,
                     const CheckpointExtras& extras = {});

// Validates every stored shape against the shapes the config implies.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace seaseg
