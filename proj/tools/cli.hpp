#pragma once

// Command-line front end: train, eval, gradcheck, gen, inspect-attention.
// JSON results go to `out`, human-readable tables and diagnostics to `err`.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nbsa/model.hpp"
#include "nbsa/train.hpp"

namespace nbsa::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

/// Model and training settings read from a config file. Sections [model]
/// and [train]; keys mirror the ModelConfig / TrainConfig field names.
struct RunConfig {
    nlohmann::json model = nlohmann::json::object();
    nlohmann::json train = nlohmann::json::object();
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nbsa::cli
