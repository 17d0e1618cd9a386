#pragma once

#include <nlohmann/json.hpp>

#include "tsca/augment.hpp"
#include "tsca/encoder.hpp"
#include "tsca/evaluate.hpp"
#include "tsca/train_config.hpp"

namespace tsca {

/// Full echoes (every field) and partial merges (only the keys present)
/// for the JSON config file sections.

nlohmann::ordered_json to_json(const EncoderConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const CropResizeConfig& c);
nlohmann::ordered_json to_json(const CAConfig& c);
nlohmann::ordered_json to_json(const ProbeConfig& c);

void merge_config(const nlohmann::json& j, EncoderConfig& c);
void merge_config(const nlohmann::json& j, TrainConfig& c);
void merge_config(const nlohmann::json& j, CropResizeConfig& c);
void merge_config(const nlohmann::json& j, CAConfig& c);
void merge_config(const nlohmann::json& j, ProbeConfig& c);

}  // namespace tsca
