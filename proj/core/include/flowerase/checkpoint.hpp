#pragma once

// On-disk formats for the frozen base model and for resumable erase runs.
// Both end in an FNV-1a checksum over every preceding byte.

#include <cstdint>
#include <string>
#include <vector>

#include "flowerase/toymodel.hpp"

namespace flowerase::engine {

/// Architecture, tokenizer and weights of a pretrained θ_o.
struct BaseModel {
  model::ModelConfig config;
  model::Vocabulary vocab;
  model::ModelParams params;
  std::vector<double> loss_history;
};

inline constexpr char kModelMagic[4] = {'F', 'E', 'M', 'D'};
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> serialize_model(const BaseModel& m);
BaseModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const BaseModel& m, const std::string& path);
BaseModel load_model(const std::string& path);

}  // namespace flowerase::engine
