#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bimvfi/kdvcf.hpp"
#include "bimvfi/motionfield.hpp"

namespace bimvfi {

/// The three motion families of the ambiguity study.
enum class MotionCase {
  kUniform = 1,   // target exactly halfway, straight line
  kDistance = 2,  // straight line, target at relative distance 0.4 or 0.6
  kAngle = 3,     // bent path, inter-flow angle 0.8 pi or 1.2 pi
};

[[nodiscard]] MotionCase motion_case_from_int(int c);

using Rgb = std::array<double, 3>;

/// A disc with smooth sinusoidal stripes, defined in object coordinates so
/// the texture moves rigidly with it.
struct ObjectAppearance {
  double radius = 8.0;
  Rgb base{0.8, 0.3, 0.2};
  Rgb stripe{0.2, 0.4, 0.9};
  double stripe_period = 6.0;  // pixels
  double stripe_angle = 0.0;   // radians
};

/// Static background: blend of two colours along two low-frequency waves.
struct BackgroundAppearance {
  Rgb a{0.35, 0.45, 0.5};
  Rgb b{0.6, 0.55, 0.4};
  double period_x = 23.0;
  double period_y = 17.0;
  double phase = 0.0;
};

struct MotionSpec {
  ObjectAppearance object;
  BackgroundAppearance background;
  Point2 p0;            // object centre at time 0
  Point2 p1;            // object centre at time 1
  double d = 0.5;       // |V_{t->0}| / (|V_{t->0}| + |V_{t->1}|)
  double angle = 3.14159265358979323846;  // directed angle from V_{t->0} to V_{t->1}, (0, 2 pi)
  double t = 0.5;       // time label carried by the triplet

  void validate() const;
  /// Object centre in the target frame.
  [[nodiscard]] Point2 target_position() const;
};

/// Draws a random scene of the given family on a size x size canvas.
/// max_shift bounds |p1 - p0|.
[[nodiscard]] MotionSpec random_motion_spec(MotionCase c, int size, Rng& rng, double max_shift = 16.0);

/// Renders the triplet with ground-truth flows, BiM and validity mask.
[[nodiscard]] TripletBatch synth_triplet(const MotionSpec& spec, int size, Rng& rng);

/// Dataset generation settings.
struct SynthConfig {
  int count = 20;
  int size = 64;
  std::vector<int> cases{1};  // drawn uniformly per item
  double max_shift = 16.0;
  bool random_t = false;      // uniform-motion items get t from {1/8 .. 7/8}
  bool shared_endpoints = false;  // distance items come in d = 0.4 / 0.6 pairs with identical sources
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthItem {
  MotionCase motion_case;
  MotionSpec spec;
  TripletBatch batch;
};

/// Draws a dataset per the config. With shared_endpoints, distance items
/// come in consecutive d = 0.4 / 0.6 pairs that share the rendered sources.
/// With random_t, uniform-motion items sit at t = k/8 along their path.
[[nodiscard]] std::vector<SynthItem> generate_synthetic_set(const SynthConfig& config);

// -- files ------------------------------------------------------------------------------

void write_flo(const std::filesystem::path& path, const FlowField& flow);
[[nodiscard]] FlowField read_flo(const std::filesystem::path& path);
[[nodiscard]] std::vector<unsigned char> encode_flo(const FlowField& flow);
[[nodiscard]] FlowField decode_flo(std::span<const unsigned char> bytes);

/// 8-bit RGB; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Frame& frame);
[[nodiscard]] Frame read_png(const std::filesystem::path& path);

// -- datasets -------------------------------------------------------------------------------

/// Lazily loaded folder-of-frames dataset. Each item is a directory holding
/// at least three images; the first and last are the sources and
/// `target_index` (default: the middle frame) is the target, at
/// t = target_index / (frames - 1). Ground-truth files written by
/// save_triplet are picked up when present.
class TripletDataset {
 public:
  using Warn = std::function<void(const std::string&)>;

  TripletDataset() = default;
  TripletDataset(std::filesystem::path root, std::vector<std::filesystem::path> items, std::string extension,
                 int target_index, Warn warn);

  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] bool empty() const { return items_.empty(); }
  [[nodiscard]] const std::filesystem::path& item_dir(std::size_t i) const { return items_.at(i); }
  /// Loads item i. Throws on unreadable files; a triplet whose frames
  /// disagree in size yields an empty optional and a warning.
  [[nodiscard]] std::optional<TripletBatch> load(std::size_t i) const;
  /// Every loadable item, in order.
  [[nodiscard]] std::vector<TripletBatch> load_all() const;
  /// Per-item time labels from the manifest; NaN keeps the index rule.
  void set_times(std::vector<double> times) { times_ = std::move(times); }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> items_;
  std::string extension_ = ".png";
  int target_index_ = -1;
  Warn warn_;
  std::vector<double> times_;
};

/// Reads `root/manifest.txt` when it exists (first token of each non-comment
/// line is an item directory, optional `t=` overrides the time), otherwise every sub-directory of root in
/// lexicographic order. `extension` filters frame files.
[[nodiscard]] TripletDataset load_triplet_dataset(const std::filesystem::path& root,
                                                  const std::string& extension = ".png", int target_index = -1,
                                                  TripletDataset::Warn warn = {});

/// Writes frame0/frame1/frame2 PNGs plus ground truth (.flo flows, BiM,
/// validity mask) into dir.
void save_triplet(const std::filesystem::path& dir, const TripletBatch& b);

}  // namespace bimvfi
