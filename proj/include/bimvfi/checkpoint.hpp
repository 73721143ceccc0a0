#pragma once

#include <filesystem>
#include <optional>

#include "bimvfi/kdvcf.hpp"

namespace bimvfi {

/// Contents of a checkpoint file. Optimiser and rng state are present only
/// in training checkpoints and allow an exact resume.
struct Checkpoint {
  TrainConfig config;
  ParamStore params;
  struct Resume {
    int step = 0;
    long long optimizer_steps = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::string rng_state;
  };
  std::optional<Resume> resume;
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const PyramidNet& net,
                     const TrainState* state = nullptr);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the network (and, when present, the full training state).
[[nodiscard]] PyramidNet network_from(const Checkpoint& c);
[[nodiscard]] TrainState train_state_from(const Checkpoint& c);

}  // namespace bimvfi
