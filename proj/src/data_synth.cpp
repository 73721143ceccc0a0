#include "bimvfi/data_synth.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

namespace bimvfi {

namespace fs = std::filesystem;

MotionCase motion_case_from_int(int c) {
  if (c < 1 || c > 3) throw std::invalid_argument("motion case must be 1, 2 or 3, got " + std::to_string(c));
  return static_cast<MotionCase>(c);
}

void MotionSpec::validate() const {
  if (!(d > 0.0 && d < 1.0)) throw std::invalid_argument("MotionSpec: d must lie in (0, 1)");
  if (!(angle > 0.0 && angle < kTwoPi)) throw std::invalid_argument("MotionSpec: angle must lie in (0, 2 pi)");
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("MotionSpec: t must lie in (0, 1)");
  if (p0 == p1) throw std::invalid_argument("MotionSpec: endpoints coincide");
  if (!(object.radius > 0.0)) throw std::invalid_argument("MotionSpec: object radius must be positive");
  if (!(object.stripe_period > 0.0)) throw std::invalid_argument("MotionSpec: stripe period must be positive");
}

Point2 MotionSpec::target_position() const {
  validate();
  if (angle == std::numbers::pi) return p0 + d * (p1 - p0);
  const double theta = angle <= std::numbers::pi ? angle : kTwoPi - angle;
  const double k = d / (1.0 - d);
  // Pick the side whose directed angle from V_{t->0} to V_{t->1} is `angle`.
  Point2 best{};
  double best_err = 1e300;
  for (ArcSide side : {ArcSide::kPositive, ArcSide::kNegative}) {
    const Point2 x = reconstruct_point(p0, p1, k, theta, side);
    const Point2 v0 = p0 - x;
    const Point2 v1 = p1 - x;
    const double phi = canonical_angle(std::atan2(v1.y, v1.x) - std::atan2(v0.y, v0.x));
    const double err = std::abs(canonical_angle(phi - angle + std::numbers::pi) - std::numbers::pi);
    if (err < best_err) {
      best_err = err;
      best = x;
    }
  }
  return best;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Rgb random_colour(Rng& rng, double lo, double hi) { return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)}; }

bool fits(Point2 c, double r, int size) {
  const double margin = r + 2.0;
  return c.x >= margin && c.y >= margin && c.x <= size - 1 - margin && c.y <= size - 1 - margin;
}

Rgb object_colour(const ObjectAppearance& o, Point2 local) {
  const double along = local.x * std::cos(o.stripe_angle) + local.y * std::sin(o.stripe_angle);
  const double w = 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * along / o.stripe_period));
  return {o.base[0] + (o.stripe[0] - o.base[0]) * w, o.base[1] + (o.stripe[1] - o.base[1]) * w,
          o.base[2] + (o.stripe[2] - o.base[2]) * w};
}

Rgb background_colour(const BackgroundAppearance& b, Point2 p) {
  const double w = 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * p.x / b.period_x + b.phase) +
                   0.25 * std::sin(2.0 * std::numbers::pi * p.y / b.period_y + 2.0 * b.phase);
  return {b.a[0] + (b.b[0] - b.a[0]) * w, b.a[1] + (b.b[1] - b.a[1]) * w, b.a[2] + (b.b[2] - b.a[2]) * w};
}

constexpr int kSupersample = 4;

Frame render(const MotionSpec& s, Point2 centre, int size) {
  Frame f(size, size);
  Tensor& t = f.tensor();
  const double r2 = s.object.radius * s.object.radius;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      Rgb acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const Point2 p{x + (sx + 0.5) / kSupersample - 0.5, y + (sy + 0.5) / kSupersample - 0.5};
          const Point2 local = p - centre;
          const Rgb c = local.x * local.x + local.y * local.y <= r2 ? object_colour(s.object, local)
                                                                   : background_colour(s.background, p);
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      for (int k = 0; k < 3; ++k) t.at(k, y, x) = acc[k] / (kSupersample * kSupersample);
    }
  }
  return f;
}

}  // namespace

MotionSpec random_motion_spec(MotionCase c, int size, Rng& rng, double max_shift) {
  if (size < 16) throw std::invalid_argument("random_motion_spec: size must be >= 16");
  if (!(max_shift > 0.0)) throw std::invalid_argument("random_motion_spec: max_shift must be positive");
  const double scale = size / 64.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    MotionSpec s;
    s.object.radius = uniform(rng, 10.0, 15.0) * scale;
    s.object.base = random_colour(rng, 0.1, 0.9);
    s.object.stripe = random_colour(rng, 0.1, 0.9);
    s.object.stripe_period = uniform(rng, 14.0, 22.0) * scale;
    s.object.stripe_angle = uniform(rng, 0.0, std::numbers::pi);
    s.background.a = random_colour(rng, 0.2, 0.8);
    s.background.b = random_colour(rng, 0.2, 0.8);
    s.background.period_x = uniform(rng, 18.0, 30.0) * scale;
    s.background.period_y = uniform(rng, 18.0, 30.0) * scale;
    s.background.phase = uniform(rng, 0.0, kTwoPi);

    const double len = uniform(rng, 0.5 * max_shift, max_shift) * scale;
    const double dir = uniform(rng, 0.0, kTwoPi);
    const Point2 shift{len * std::cos(dir), len * std::sin(dir)};
    s.p0 = {uniform(rng, 0.0, size - 1.0), uniform(rng, 0.0, size - 1.0)};
    s.p1 = s.p0 + shift;
    switch (c) {
      case MotionCase::kUniform:
        s.d = 0.5;
        s.angle = std::numbers::pi;
        break;
      case MotionCase::kDistance:
        s.d = std::bernoulli_distribution(0.5)(rng) ? 0.4 : 0.6;
        s.angle = std::numbers::pi;
        break;
      case MotionCase::kAngle:
        s.d = uniform(rng, 0.35, 0.65);
        s.angle = std::bernoulli_distribution(0.5)(rng) ? 0.8 * std::numbers::pi : 1.2 * std::numbers::pi;
        break;
    }
    const double r = s.object.radius;
    if (fits(s.p0, r, size) && fits(s.p1, r, size) && fits(s.target_position(), r, size)) return s;
  }
  throw std::runtime_error("random_motion_spec: could not place the object; canvas too small for the motion");
}

TripletBatch synth_triplet(const MotionSpec& spec, int size, Rng& rng) {
  spec.validate();
  (void)rng;  // the scene is fully described by the spec
  const Point2 pm = spec.target_position();
  const double r = spec.object.radius;
  for (Point2 p : {spec.p0, pm, spec.p1}) {
    if (p.x - r < 0.0 || p.y - r < 0.0 || p.x + r > size - 1 || p.y + r > size - 1) {
      throw std::invalid_argument("synth_triplet: object leaves the frame");
    }
  }
  TripletBatch b;
  b.t = spec.t;
  b.i0 = render(spec, spec.p0, size);
  b.it = render(spec, pm, size);
  b.i1 = render(spec, spec.p1, size);

  const Point2 v0 = spec.p0 - pm;
  const Point2 v1 = spec.p1 - pm;
  FlowField to_prev(size, size);
  FlowField to_next(size, size);
  BiMField bim(size, size);
  Tensor valid(1, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      const double dt = norm(p - pm);
      if (dt <= r) {
        to_prev.set(y, x, v0.x, v0.y);
        to_next.set(y, x, v1.x, v1.y);
        bim.set(y, x, spec.d, spec.angle);
        valid.at(0, y, x) = dt <= r - 1.5 ? 1.0 : 0.0;
      } else {
        bim.set(y, x, 0.5, std::numbers::pi);
        const bool clear = dt > r + 1.0 && norm(p - spec.p0) > r + 1.0 && norm(p - spec.p1) > r + 1.0;
        valid.at(0, y, x) = clear ? 1.0 : 0.0;
      }
    }
  }
  b.flow_to_prev = std::move(to_prev);
  b.flow_to_next = std::move(to_next);
  b.bim = std::move(bim);
  b.valid = std::move(valid);
  return b;
}

void SynthConfig::validate() const {
  if (count < 0) throw std::invalid_argument("synth: count must be >= 0");
  if (size < 16) throw std::invalid_argument("synth: size must be >= 16");
  if (cases.empty()) throw std::invalid_argument("synth: cases must not be empty");
  for (int c : cases) (void)motion_case_from_int(c);
  if (!(max_shift > 0.0)) throw std::invalid_argument("synth: max_shift must be positive");
}

std::vector<SynthItem> generate_synthetic_set(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_case(0, config.cases.size() - 1);
  std::uniform_int_distribution<int> eighths(1, 7);
  std::vector<SynthItem> out;
  out.reserve(config.count);
  while (static_cast<int>(out.size()) < config.count) {
    const MotionCase c = motion_case_from_int(config.cases[pick_case(rng)]);
    MotionSpec spec = random_motion_spec(c, config.size, rng, config.max_shift);
    if (c == MotionCase::kUniform && config.random_t) {
      spec.t = eighths(rng) / 8.0;
      spec.d = spec.t;
    }
    if (c == MotionCase::kDistance && config.shared_endpoints) {
      // Both targets lie on the segment between two placements that fit,
      // so the partner always fits too.
      for (double d : {0.4, 0.6}) {
        if (static_cast<int>(out.size()) == config.count) break;
        spec.d = d;
        out.push_back({c, spec, synth_triplet(spec, config.size, rng)});
      }
      continue;
    }
    out.push_back({c, spec, synth_triplet(spec, config.size, rng)});
  }
  return out;
}

// -- .flo -----------------------------------------------------------------------------------

namespace {

constexpr float kFloMagic = 202021.25f;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<unsigned char> encode_flo(const FlowField& flow) {
  std::vector<unsigned char> out;
  out.reserve(12 + 8 * static_cast<std::size_t>(flow.width()) * flow.height());
  put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(flow.u(y, x))));
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(flow.v(y, x))));
    }
  }
  return out;
}

FlowField decode_flo(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12) throw std::runtime_error(".flo: file shorter than its 12-byte header");
  const float magic = std::bit_cast<float>(get_u32(bytes, 0));
  if (std::bit_cast<std::uint32_t>(magic) != std::bit_cast<std::uint32_t>(kFloMagic)) {
    std::ostringstream msg;
    msg << ".flo: bad magic tag " << magic << " (expected 202021.25 / \"PIEH\")";
    throw std::runtime_error(msg.str());
  }
  const auto w = static_cast<std::int32_t>(get_u32(bytes, 4));
  const auto h = static_cast<std::int32_t>(get_u32(bytes, 8));
  if (w <= 0 || h <= 0) throw std::runtime_error(".flo: non-positive dimensions");
  const std::size_t expected = 12 + 8 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() != expected) {
    throw std::runtime_error(".flo: payload is " + std::to_string(bytes.size() - 12) + " bytes, expected " +
                             std::to_string(expected - 12) + " for " + std::to_string(w) + "x" + std::to_string(h));
  }
  FlowField f(w, h);
  std::size_t at = 12;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float u = std::bit_cast<float>(get_u32(bytes, at));
      const float v = std::bit_cast<float>(get_u32(bytes, at + 4));
      f.set(y, x, u, v);
      at += 8;
    }
  }
  return f;
}

void write_flo(const fs::path& path, const FlowField& flow) {
  const auto bytes = encode_flo(flow);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FlowField read_flo(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_flo(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// -- PNG ---------------------------------------------------------------------------------------

void write_png(const fs::path& path, const Frame& frame) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(frame.width());
  img.height = static_cast<png_uint_32>(frame.height());
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(3 * static_cast<std::size_t>(frame.width()) * frame.height());
  const Tensor& t = frame.tensor();
  std::size_t i = 0;
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        buf[i++] = static_cast<unsigned char>(std::lround(std::clamp(t.at(c, y, x), 0.0, 1.0) * 255.0));
      }
    }
  }
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Frame read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Frame f(static_cast<int>(img.width), static_cast<int>(img.height));
  std::size_t i = 0;
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      for (int c = 0; c < 3; ++c) f.tensor().at(c, y, x) = buf[i++] / 255.0;
    }
  }
  return f;
}

// -- datasets ------------------------------------------------------------------------------------

namespace {

constexpr const char* kManifest = "manifest.txt";
constexpr const char* kFlowPrev = "flow_t0.flo";
constexpr const char* kFlowNext = "flow_t1.flo";
constexpr const char* kBimFile = "bim.flo";
constexpr const char* kValidFile = "valid.png";

void warn_stderr(const std::string& m) { std::cerr << "warning: " << m << '\n'; }

}  // namespace

TripletDataset::TripletDataset(fs::path root, std::vector<fs::path> items, std::string extension, int target_index,
                               Warn warn)
    : root_(std::move(root)),
      items_(std::move(items)),
      extension_(std::move(extension)),
      target_index_(target_index),
      warn_(warn ? std::move(warn) : Warn(warn_stderr)) {}

std::optional<TripletBatch> TripletDataset::load(std::size_t i) const {
  const fs::path& dir = items_.at(i);
  std::vector<fs::path> frames;
  for (const auto& e : fs::directory_iterator(dir)) {
    const fs::path& p = e.path();
    if (e.is_regular_file() && p.extension() == extension_ && p.filename() != kValidFile) frames.push_back(p);
  }
  std::ranges::sort(frames);
  if (frames.size() < 3) {
    warn_(dir.string() + ": fewer than three frames, skipped");
    return std::nullopt;
  }
  const int n = static_cast<int>(frames.size());
  const int target = target_index_ >= 0 ? target_index_ : n / 2;
  if (target <= 0 || target >= n - 1) {
    throw std::invalid_argument(dir.string() + ": target index " + std::to_string(target) +
                                " is not strictly between the first and last of " + std::to_string(n) + " frames");
  }
  TripletBatch b;
  b.i0 = read_png(frames.front());
  b.it = read_png(frames[target]);
  b.i1 = read_png(frames.back());
  b.t = static_cast<double>(target) / (n - 1);
  if (i < times_.size() && !std::isnan(times_[i])) b.t = times_[i];
  if (!b.i0.tensor().same_shape(b.it.tensor()) || !b.i0.tensor().same_shape(b.i1.tensor())) {
    warn_(dir.string() + ": frames differ in size, skipped");
    return std::nullopt;
  }
  if (fs::exists(dir / kFlowPrev)) b.flow_to_prev = read_flo(dir / kFlowPrev);
  if (fs::exists(dir / kFlowNext)) b.flow_to_next = read_flo(dir / kFlowNext);
  if (fs::exists(dir / kBimFile)) b.bim = BiMField(read_flo(dir / kBimFile).tensor());
  if (fs::exists(dir / kValidFile)) b.valid = read_png(dir / kValidFile).tensor().slice_channels(0, 1);
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    warn_(dir.string() + ": " + e.what() + ", skipped");
    return std::nullopt;
  }
  return b;
}

std::vector<TripletBatch> TripletDataset::load_all() const {
  std::vector<TripletBatch> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (auto b = load(i)) out.push_back(std::move(*b));
  }
  return out;
}

TripletDataset load_triplet_dataset(const fs::path& root, const std::string& extension, int target_index,
                                    TripletDataset::Warn warn) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> items;
  std::vector<double> times;
  const fs::path manifest = root / kManifest;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("cannot read " + manifest.string());
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string dir;
      if (!(ls >> dir) || dir.front() == '#') continue;
      items.push_back(root / dir);
      double t = std::numeric_limits<double>::quiet_NaN();
      for (std::string kv; ls >> kv;) {
        if (kv.rfind("t=", 0) == 0) t = std::stod(kv.substr(2));
      }
      times.push_back(t);
    }
  } else {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory()) items.push_back(e.path());
    }
    std::ranges::sort(items);
  }
  TripletDataset ds(root, std::move(items), extension, target_index, std::move(warn));
  ds.set_times(std::move(times));
  return ds;
}

void save_triplet(const fs::path& dir, const TripletBatch& b) {
  fs::create_directories(dir);
  write_png(dir / "frame0.png", b.i0);
  write_png(dir / "frame1.png", b.it);
  write_png(dir / "frame2.png", b.i1);
  if (b.flow_to_prev) write_flo(dir / kFlowPrev, *b.flow_to_prev);
  if (b.flow_to_next) write_flo(dir / kFlowNext, *b.flow_to_next);
  if (b.bim) write_flo(dir / kBimFile, FlowField(b.bim->tensor()));
  if (b.valid) {
    Tensor rgb(3, b.valid->height(), b.valid->width());
    for (int c = 0; c < 3; ++c) std::ranges::copy(b.valid->plane(0), rgb.plane(c).begin());
    write_png(dir / kValidFile, Frame(std::move(rgb)));
  }
}

}  // namespace bimvfi
