#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bimvfi/data_synth.hpp"
#include "bimvfi/kdvcf.hpp"
#include "json.hpp"

namespace bimvfi {

using Json = nlohmann::json;

/// Raised for malformed or unknown configuration entries.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[nodiscard]] Json to_json(const ModelConfig& c);
[[nodiscard]] Json to_json(const LossWeights& w);
[[nodiscard]] Json to_json(const TrainConfig& c);

/// Start from `base` and overwrite the keys present in `j`. Unknown keys and
/// wrong types raise ConfigError naming the offending key.
[[nodiscard]] ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});
[[nodiscard]] LossWeights loss_weights_from_json(const Json& j, LossWeights base = {});
[[nodiscard]] TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

[[nodiscard]] Json to_json(const SynthConfig& c);
[[nodiscard]] SynthConfig synth_config_from_json(const Json& j, SynthConfig base = {});

/// Parses a JSON file; errors carry the path.
[[nodiscard]] Json read_json_file(const std::filesystem::path& path);

}  // namespace bimvfi
