#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bimvfi/config.hpp"
#include "bimvfi/data_synth.hpp"
#include "bimvfi/kdvcf.hpp"

namespace bimvfi::cli {

/// Bad flags, paths or inputs; reported with exit code 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

struct SynthOptions {
  SynthConfig config;
  std::filesystem::path out;
};

/// Writes item_NNNN directories plus manifest.txt (one line per item with
/// t, case, d and angle).
void cmd_synth(const SynthOptions& opt, std::ostream& log);

struct TrainOptions {
  TrainConfig config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  bool deterministic = false;
};

/// Trains on the dataset and writes loss.csv, config.json, periodic
/// checkpoints and final.ckpt into out.
void cmd_train(const TrainOptions& opt, std::ostream& log);

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path i0;
  std::filesystem::path i1;
  std::filesystem::path out;
  std::vector<double> times{0.5};
  int levels = 0;  // 0: derived from the input resolution
};

/// Returns the written interpolated frames, one per requested time.
std::vector<std::filesystem::path> cmd_infer(const InferOptions& opt, std::ostream& log);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;  // CSV file
  int levels = 0;
};

struct EvalRow {
  std::string item;
  double t = 0.5;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> epe;
};

/// Per-item rows in dataset order; the CSV also carries a final `mean` row
/// when the dataset is not empty.
std::vector<EvalRow> cmd_eval(const EvalOptions& opt, std::ostream& log);

/// Mirror padding without repeating the edge sample.
[[nodiscard]] Tensor reflect_pad(const Tensor& t, int top, int bottom, int left, int right);

/// Student inference at time t on frames of any size: pads to the size the
/// pyramid needs, runs, and crops back. levels <= 0 picks the count from the
/// resolution.
[[nodiscard]] Frame infer_frame(const PyramidNet& net, const Frame& i0, const Frame& i1, double t, int levels,
                                FlowField* to_prev = nullptr, FlowField* to_next = nullptr);

/// "0.25,0.5,0.75" -> {0.25, 0.5, 0.75}; each value must lie in [0, 1].
[[nodiscard]] std::vector<double> parse_times(const std::string& text);

/// Full command line entry point.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bimvfi::cli
