#pragma once

// JSON configuration. The file is one flat object; every key is optional and
// unknown keys are rejected. See README.md for the full key list.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "semtok/budget.hpp"
#include "semtok/data.hpp"
#include "semtok/transformer.hpp"

namespace semtok {

struct DataConfig {
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::size_t clutter_level = 3;
  double pixel_noise = 0.05;
  std::uint64_t seed = 7;
  // When both are set the training split is read from IDX files instead.
  std::string train_images, train_labels;
  std::string test_images, test_labels;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

// Throws ConfigError carrying the JSON pointer of the offending key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json dump_config(const ExperimentConfig& config);

nlohmann::json model_config_to_json(const ModelConfig& config);
// Strict: unknown or missing keys throw ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

// Training and test splits described by `config` (generated or IDX).
Dataset load_train_split(const DataConfig& config, const ModelConfig& model);
Dataset load_test_split(const DataConfig& config, const ModelConfig& model);

}  // namespace semtok
