#pragma once

#include <array>
#include <functional>
#include <vector>

#include "bimvfi/autograd.hpp"
#include "bimvfi/motionfield.hpp"
#include "bimvfi/params.hpp"

namespace bimvfi {

/// What the flow network is conditioned on.
enum class DescriptorMode {
  kBiM,        // ratio R and angle (sin, cos) embeddings
  kTimeIndex,  // ablation: R replaced by the scalar time, no angle branch
};

[[nodiscard]] const char* to_string(DescriptorMode m);
[[nodiscard]] DescriptorMode descriptor_from_string(const std::string& s);

/// Toy-scale architecture knobs. The channel plan derives from base_channels.
struct ModelConfig {
  static constexpr int kContextScales = 3;

  int base_channels = 16;
  int cost_radius = 3;
  int trunk_depth = 8;
  DescriptorMode descriptor = DescriptorMode::kBiM;

  void validate() const;
  [[nodiscard]] int cost_channels() const { return (2 * cost_radius + 1) * (2 * cost_radius + 1); }
  [[nodiscard]] int motion_channels() const { return base_channels; }
  /// Context channels at image/1, image/2 and image/4.
  [[nodiscard]] std::array<int, 3> context_channels() const {
    return {base_channels / 2, base_channels / 2, base_channels};
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Pyramid depth for a given resolution: 3 at 256 px, one more per octave.
[[nodiscard]] int level_count_for_resolution(int height, int width);

/// Smallest multiple every image side must have to run `levels` levels.
[[nodiscard]] int required_divisor(int levels);

struct FlowPairVar {
  ag::Var to_prev;  // V_{t->0}
  ag::Var to_next;  // V_{t->1}
};

struct FeatureSet {
  ag::Var motion;                  // image/4, motion_channels
  std::array<ag::Var, 3> context;  // image/1, /2, /4
};

/// A frame with its image pyramid and per-level features, computed once
/// and shared by every process that reads the frame.
struct EncodedFrame {
  std::vector<ag::Var> pyramid;  // level 0 = full resolution
  std::vector<FeatureSet> features;
};

struct BimfnOutput {
  FlowPairVar flows;     // prior + residual, at feature resolution
  FlowPairVar prior;     // resampled previous-level flows
  FlowPairVar residual;  // BiM-MConv output
};

struct CaunOutput {
  std::array<ag::Var, 2> kernels_x2;  // softmax-normalised, 9*4 channels
  std::array<ag::Var, 2> kernels_x4;  // 9*16 channels
  FlowPairVar coarse;                 // image/4 (input flows)
  FlowPairVar mid;                    // image/2
  FlowPairVar fine;                   // image/1
};

struct SynthesisOutput {
  ag::Var mask_logits;     // 1 channel, unbounded
  ag::Var residual_image;  // 3 channels
  ag::Var image;           // blended + residual, not clamped
};

struct LevelState {
  int level = 0;
  BimfnOutput bimfn;
  CaunOutput caun;
  SynthesisOutput synthesis;

  [[nodiscard]] const FlowPairVar& flows() const { return caun.fine; }
};

/// Supplies the motion descriptor for a level at its feature resolution.
using BimProvider = std::function<BiMField(int level, int width, int height)>;

/// Previous-level state fed into a BiMFN call; empty Vars at the coarsest level.
struct RecurrentInput {
  FlowPairVar flows;  // at the previous level's image resolution
  ag::Var mask_logits;
};

/// The recurrent pyramid network. One parameter set serves every level and
/// every process.
class PyramidNet {
 public:
  PyramidNet(const ModelConfig& config, std::uint64_t seed);
  PyramidNet(const ModelConfig& config, ParamStore params);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const ParamStore& params() const { return params_; }
  [[nodiscard]] ParamStore& params() { return params_; }

  [[nodiscard]] ag::Var extract_motion_features(ag::Graph& g, ag::Var image) const;
  [[nodiscard]] std::array<ag::Var, 3> extract_context_features(ag::Graph& g, ag::Var image) const;
  [[nodiscard]] EncodedFrame encode(ag::Graph& g, const Tensor& image, int levels) const;

  /// (F_R, F_Phi). In time-index mode F_Phi is a constant grid of ones.
  [[nodiscard]] std::pair<ag::Var, ag::Var> embed_bim(ag::Graph& g, const BiMField& bim) const;
  /// Residual flows (4 channels: to_prev u, v, to_next u, v) from F_V * F_R * F_Phi.
  [[nodiscard]] ag::Var bim_mconv(ag::Graph& g, ag::Var fv, ag::Var fr, ag::Var fphi) const;
  [[nodiscard]] BimfnOutput bimfn_forward(ag::Graph& g, ag::Var motion_a, ag::Var motion_b,
                                          const RecurrentInput& prev, const BiMField& bim) const;
  [[nodiscard]] CaunOutput caun_forward(ag::Graph& g, const FlowPairVar& flows,
                                        const std::array<ag::Var, 3>& context_a,
                                        const std::array<ag::Var, 3>& context_b) const;
  [[nodiscard]] SynthesisOutput synthesis_forward(ag::Graph& g, ag::Var image_a, ag::Var image_b,
                                                  const CaunOutput& flows,
                                                  const std::array<ag::Var, 3>& context_a,
                                                  const std::array<ag::Var, 3>& context_b) const;

  /// Runs levels L-1 .. 0 on the pair (a, b). Returned states are finest first.
  [[nodiscard]] std::vector<LevelState> pyramid_forward(ag::Graph& g, const EncodedFrame& a,
                                                        const EncodedFrame& b,
                                                        const BimProvider& bim, int levels) const;

  /// Number of times each parameter was requested since the last reset.
  [[nodiscard]] const std::vector<int>& parameter_reads() const { return reads_; }
  void reset_parameter_reads() const;

 private:
  struct ConvSpec {
    int weight = -1;
    int bias = -1;
    int stride = 1;
    int pad = 1;
  };

  void build(Rng& rng);
  ConvSpec add_conv(const std::string& name, int in, int out, int k, int stride, double gain,
                    double bias_init, Rng& rng);
  [[nodiscard]] ag::Var conv(ag::Graph& g, const ConvSpec& c, ag::Var x) const;
  [[nodiscard]] ag::Var conv_act(ag::Graph& g, const ConvSpec& c, ag::Var x) const;
  [[nodiscard]] const ConvSpec& spec(const std::string& name) const;

  ModelConfig config_;
  ParamStore params_;
  std::vector<std::pair<std::string, ConvSpec>> convs_;
  mutable std::vector<int> reads_;
};

namespace ag {
/// a * sigmoid(m) + b * (1 - sigmoid(m)); m has one channel broadcast over a and b.
Var sigmoid_blend(Var a, Var b, Var mask_logits);
}  // namespace ag

}  // namespace bimvfi
