#pragma once

#include <nlohmann/json.hpp>

#include "nbsa/model.hpp"

namespace nbsa {

nlohmann::json config_to_json(const ModelConfig& c);

/// Missing keys keep their defaults; the result is validated.
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace nbsa
