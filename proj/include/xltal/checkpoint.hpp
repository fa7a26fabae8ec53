#pragma once

#include <filesystem>

#include "json.hpp"
#include "xltal/model.hpp"

namespace xltal {

nlohmann::json to_json(const ModelConfig& config);
/// Fields absent from `j` keep the values already in `config`; unknown keys
/// are rejected.
void update_from_json(ModelConfig& config, const nlohmann::json& j);

/// Layout: "XLCK", u32 version, u64 header byte count, JSON header holding
/// the model config and the parameter registry (names and shapes), then every
/// parameter as little-endian float64 in registry order.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace xltal
