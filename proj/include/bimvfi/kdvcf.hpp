#pragma once

#include <array>
#include <functional>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "bimvfi/losses.hpp"
#include "bimvfi/motionfield.hpp"
#include "bimvfi/pyramid_net.hpp"

namespace bimvfi {

/// Training hyper-parameters. Defaults are the toy setting; the full-scale
/// regime is crop 256, batch 32, 400 epochs, 3 levels.
struct TrainConfig {
  int batch_size = 4;
  int epochs = 0;  // informational; `steps` drives the schedule
  int steps = 2000;
  double lr_init = 1e-3;
  double weight_decay = 1e-4;
  int crop = 64;
  std::uint64_t seed = 0;
  int levels = 2;
  bool augment = true;
  int log_every = 10;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  LossWeights weights;
  ModelConfig model;

  void validate() const;
};

/// One training triplet. Ground truth is present for synthetic data only.
struct TripletBatch {
  Frame i0;
  Frame it;
  Frame i1;
  double t = 0.5;
  std::optional<FlowField> flow_to_prev;
  std::optional<FlowField> flow_to_next;
  std::optional<BiMField> bim;
  std::optional<Tensor> valid;  // 1 channel, 1 where the ground-truth flow is trusted

  void validate() const;
};

struct TeacherLevel {
  FlowPairVar flows;       // V_{t->0}, V_{t->1} at image resolution of the level
  FlowPairVar self_flows;  // target-to-target flows of both pairs, upsampled
  FlowPairVar coarse;      // V_{t->0}, V_{t->1} at feature resolution
  ag::Var mask_logits;
  ag::Var image;
};

/// Encoded inputs of one sample, shared by both processes.
struct EncodedTriplet {
  EncodedFrame i0;
  EncodedFrame it;
  EncodedFrame i1;
};

[[nodiscard]] EncodedTriplet encode_triplet(ag::Graph& g, const PyramidNet& net, const TripletBatch& b,
                                            int levels);

/// Teacher process. Result is indexed by level, finest first.
[[nodiscard]] std::vector<TeacherLevel> teacher_pass(ag::Graph& g, const PyramidNet& net,
                                                     const EncodedTriplet& enc, int levels, Rng& rng);

/// Student BiM per level, computed from the values of the teacher's
/// feature-resolution flows (no gradient path).
[[nodiscard]] std::vector<BiMField> build_student_bim(std::span<const TeacherLevel> teacher, double eps,
                                                      Rng& rng);

[[nodiscard]] std::vector<LevelState> student_pass(ag::Graph& g, const PyramidNet& net,
                                                   const EncodedFrame& i0, const EncodedFrame& i1,
                                                   std::span<const BiMField> bim, int levels);

/// Student inference on a raw pair with uniform motion at time t.
[[nodiscard]] Frame interpolate(const PyramidNet& net, const Frame& i0, const Frame& i1, double t, int levels,
                                FlowField* to_prev = nullptr, FlowField* to_next = nullptr);

/// Student inference with an explicit descriptor per level.
[[nodiscard]] Frame interpolate_with(const PyramidNet& net, const Frame& i0, const Frame& i1,
                                     const BimProvider& bim, int levels);

/// Decoupled weight decay Adam.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  AdamW() = default;
  explicit AdamW(const ParamStore& params, double weight_decay = 1e-4);

  void apply(ParamStore& params, std::span<const Tensor> grads, double lr);

  [[nodiscard]] long long steps_taken() const { return steps_; }
  [[nodiscard]] std::vector<Tensor>& first_moment() { return m_; }
  [[nodiscard]] std::vector<Tensor>& second_moment() { return v_; }
  void set_steps_taken(long long s) { steps_ = s; }

 private:
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long long steps_ = 0;
};

struct TrainState {
  PyramidNet net;
  AdamW optimizer;
  Rng rng;
  int step = 0;

  TrainState(const TrainConfig& config);
  TrainState(PyramidNet net, AdamW optimizer, Rng rng, int step);
};

/// Itemised losses, already weighted and summed over levels.
struct LossReport {
  double char_teacher = 0;
  double census_teacher = 0;
  double smooth = 0;
  double reg = 0;
  double char_student = 0;
  double census_student = 0;
  double distill = 0;
  double total = 0;

  static constexpr int kTerms = 8;
  [[nodiscard]] static const char* term_name(int i);
  [[nodiscard]] double term(int i) const;
  [[nodiscard]] double& term(int i);
};

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(const std::string& term)
      : std::runtime_error("non-finite loss term: " + term), term_(term) {}
  [[nodiscard]] const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Loss of one sample as a graph node plus its itemised values.
struct SampleLoss {
  ag::Var total;
  LossReport report;
};

[[nodiscard]] SampleLoss sample_loss(ag::Graph& g, const PyramidNet& net, const TripletBatch& b,
                                     const TrainConfig& config, Rng& rng);

/// Mean loss and gradients over the batch, without touching the parameters.
[[nodiscard]] LossReport batch_gradients(const PyramidNet& net, std::span<const TripletBatch> batch,
                                         const TrainConfig& config, Rng& rng, std::vector<Tensor>& grads);

/// One optimisation step. Throws NonFiniteLoss and leaves the state
/// untouched when any term is not finite.
LossReport train_step(std::span<const TripletBatch> batch, TrainState& state, const TrainConfig& config);

[[nodiscard]] double lr_schedule(int step, int total_steps, double lr_init);

/// Draws batch_size items uniformly from data. With augmentation each item
/// goes through augment_triplet; otherwise it is centre-cropped to the crop
/// size when larger.
[[nodiscard]] std::vector<TripletBatch> draw_batch(std::span<const TripletBatch> data, Rng& rng,
                                                   const TrainConfig& config);

/// Called after every completed step with the step count and its losses.
using StepHook = std::function<void(int step, const LossReport&)>;

/// Runs steps state.step .. config.steps - 1.
void train(std::span<const TripletBatch> data, TrainState& state, const TrainConfig& config,
           const StepHook& on_step = {});

// -- augmentation ---------------------------------------------------------------

[[nodiscard]] TripletBatch crop_triplet(const TripletBatch& b, int y, int x, int size);
[[nodiscard]] TripletBatch flip_horizontal(const TripletBatch& b);
[[nodiscard]] TripletBatch flip_vertical(const TripletBatch& b);
/// Rotates by quarter_turns * 90 degrees clockwise (image y axis points down).
[[nodiscard]] TripletBatch rotate90(const TripletBatch& b, int quarter_turns);
/// Swaps the source frames; t becomes 1 - t.
[[nodiscard]] TripletBatch reverse_time(const TripletBatch& b);
/// Output channel c takes input channel perm[c], in all three frames.
[[nodiscard]] TripletBatch permute_channels(const TripletBatch& b, std::array<int, 3> perm);

/// Random crop, flips, rotation, temporal reversal and channel permutation.
[[nodiscard]] TripletBatch augment_triplet(const TripletBatch& b, Rng& rng, int crop);

}  // namespace bimvfi
