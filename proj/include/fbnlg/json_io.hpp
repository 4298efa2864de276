#pragma once

#include "fbnlg/decode.hpp"
#include "fbnlg/model.hpp"
#include "fbnlg/trainer.hpp"
#include "json.hpp"

namespace fbnlg {

// Unknown keys are rejected so that typos in config files surface early.

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DecodeConfig& c);
/// Fields absent from `j` keep their value in `base`.
DecodeConfig decode_config_from_json(const nlohmann::json& j, DecodeConfig base = {});

}  // namespace fbnlg
