#include <gtest/gtest.h>

#include <unistd.h>

#include <fstream>
#include <numbers>

#include "bimvfi/data_synth.hpp"
#include "support.hpp"

namespace bimvfi {
namespace {

namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("bimvfi_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

double angle_gap(double a, double b) { return std::abs(canonical_angle(a - b + kPi) - kPi); }

TEST(MotionSpec, TargetPositionMatchesDescriptor) {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const MotionCase c = motion_case_from_int(1 + i % 3);
    const MotionSpec s = random_motion_spec(c, 64, rng);
    const Point2 x = s.target_position();
    const Point2 v0 = s.p0 - x, v1 = s.p1 - x;
    EXPECT_NEAR(norm(v0) / (norm(v0) + norm(v1)), s.d, 1e-9);
    EXPECT_LT(angle_gap(std::atan2(v1.y, v1.x) - std::atan2(v0.y, v0.x), s.angle), 1e-9);
  }
}

TEST(MotionSpec, FamiliesDrawTheirParameters) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const MotionSpec u = random_motion_spec(MotionCase::kUniform, 64, rng);
    EXPECT_EQ(u.d, 0.5);
    EXPECT_EQ(u.angle, kPi);
    const MotionSpec d = random_motion_spec(MotionCase::kDistance, 64, rng);
    EXPECT_TRUE(d.d == 0.4 || d.d == 0.6);
    EXPECT_EQ(d.angle, kPi);
    const MotionSpec a = random_motion_spec(MotionCase::kAngle, 64, rng);
    EXPECT_TRUE(std::abs(a.angle - 0.8 * kPi) < 1e-15 || std::abs(a.angle - 1.2 * kPi) < 1e-15);
    const double shift = norm(a.p1 - a.p0);
    EXPECT_GE(shift, 8.0);
    EXPECT_LE(shift, 16.0);
  }
}

TEST(MotionSpec, RejectsBadArguments) {
  Rng rng(3);
  EXPECT_THROW((void)motion_case_from_int(4), std::invalid_argument);
  EXPECT_THROW((void)random_motion_spec(MotionCase::kUniform, 8, rng), std::invalid_argument);
  EXPECT_THROW((void)random_motion_spec(MotionCase::kUniform, 64, rng, 0.0), std::invalid_argument);
  EXPECT_THROW((void)random_motion_spec(MotionCase::kUniform, 64, rng, 200.0), std::runtime_error);
  MotionSpec s = random_motion_spec(MotionCase::kUniform, 64, rng);
  s.d = 1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(SynthTriplet, BimFromGroundTruthFlowsMatchesDescriptor) {
  for (int c = 1; c <= 3; ++c) {
    Rng rng(10 + c);
    for (int i = 0; i < 10; ++i) {
      const MotionSpec s = random_motion_spec(motion_case_from_int(c), 64, rng);
      const TripletBatch b = synth_triplet(s, 64, rng);
      const BiMField bim = bim_from_flows(*b.flow_to_prev, *b.flow_to_next, kDefaultBimEps, rng);
      const Point2 centre = s.target_position();
      int object_pixels = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          if (norm(Point2{double(x), double(y)} - centre) > s.object.radius) continue;
          ++object_pixels;
          ASSERT_NEAR(bim.ratio(y, x), s.d, 1e-5);
          ASSERT_LT(angle_gap(bim.angle(y, x), s.angle), 1e-5);
          ASSERT_EQ(b.bim->ratio(y, x), s.d);
        }
      EXPECT_GT(object_pixels, 200);
    }
  }
}

TEST(SynthTriplet, WarpingSourcesReproducesTarget) {
  Rng rng(20);
  for (int i = 0; i < 12; ++i) {
    const MotionSpec s = random_motion_spec(motion_case_from_int(1 + i % 3), 64, rng);
    const TripletBatch b = synth_triplet(s, 64, rng);
    const Tensor from0 = backward_warp(b.i0.tensor(), *b.flow_to_prev);
    const Tensor from1 = backward_warp(b.i1.tensor(), *b.flow_to_next);
    double e0 = 0, e1 = 0;
    int n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (b.valid->at(0, y, x) < 0.5) continue;
        ++n;
        for (int c = 0; c < 3; ++c) {
          e0 += std::abs(from0.at(c, y, x) - b.it.tensor().at(c, y, x));
          e1 += std::abs(from1.at(c, y, x) - b.it.tensor().at(c, y, x));
        }
      }
    EXPECT_GT(n, 64 * 64 / 2);
    EXPECT_LT(e0 / (3 * n), 0.02);
    EXPECT_LT(e1 / (3 * n), 0.02);
  }
}

TEST(SynthTriplet, BackgroundIsStaticAndLabelledUniform) {
  Rng rng(21);
  const MotionSpec s = random_motion_spec(MotionCase::kAngle, 64, rng);
  const TripletBatch b = synth_triplet(s, 64, rng);
  int checked = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Point2 p{double(x), double(y)};
      const double r = s.object.radius + 2.0;
      if (norm(p - s.p0) < r || norm(p - s.p1) < r || norm(p - s.target_position()) < r) continue;
      ++checked;
      EXPECT_EQ(b.flow_to_prev->u(y, x), 0.0);
      EXPECT_EQ(b.bim->ratio(y, x), 0.5);
      EXPECT_EQ(b.bim->angle(y, x), kPi);
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(b.i0.tensor().at(c, y, x), b.it.tensor().at(c, y, x));
        EXPECT_EQ(b.i1.tensor().at(c, y, x), b.it.tensor().at(c, y, x));
      }
    }
  EXPECT_GT(checked, 1000);
}

TEST(SynthTriplet, RejectsObjectOutsideFrame) {
  Rng rng(22);
  MotionSpec s = random_motion_spec(MotionCase::kUniform, 64, rng);
  s.p1 = {70.0, 30.0};
  EXPECT_THROW((void)synth_triplet(s, 64, rng), std::invalid_argument);
}

TEST(SynthTriplet, ScalesWithCanvas) {
  Rng rng(23);
  const MotionSpec s = random_motion_spec(MotionCase::kUniform, 256, rng);
  EXPECT_GE(s.object.radius, 40.0);
  EXPECT_LE(s.object.radius, 60.0);
  EXPECT_GE(norm(s.p1 - s.p0), 32.0);
  EXPECT_NO_THROW((void)synth_triplet(s, 256, rng));
}

TEST(Flo, GoldenBytes) {
  FlowField f(2, 1);
  f.set(0, 0, 1.0, -2.5);
  f.set(0, 1, 1.0, -2.5);
  const std::vector<unsigned char> expected{'P', 'I', 'E', 'H', 2, 0, 0, 0, 1, 0, 0, 0,
                                            0, 0, 0x80, 0x3f, 0, 0, 0x20, 0xc0, 0, 0, 0x80, 0x3f, 0, 0, 0x20, 0xc0};
  EXPECT_EQ(encode_flo(f), expected);
  EXPECT_EQ(decode_flo(expected), f);
}

TEST(Flo, RoundTripIsBitExactForFloatValues) {
  Rng rng(30);
  FlowField f(13, 7);
  std::uniform_real_distribution<double> dist(-100.0, 100.0);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 13; ++x) f.set(y, x, static_cast<float>(dist(rng)), static_cast<float>(dist(rng)));
  TempDir dir;
  write_flo(dir.path() / "a.flo", f);
  EXPECT_EQ(read_flo(dir.path() / "a.flo"), f);
  EXPECT_EQ(encode_flo(decode_flo(encode_flo(f))), encode_flo(f));
}

TEST(Flo, ErrorsNameTheProblem) {
  std::vector<unsigned char> bytes = encode_flo(FlowField::constant(3, 2, 1.0, 2.0));
  auto message = [](std::span<const unsigned char> b) {
    try {
      (void)decode_flo(b);
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  std::vector<unsigned char> bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_NE(message(bad_magic).find("magic"), std::string::npos);
  std::vector<unsigned char> truncated(bytes.begin(), bytes.end() - 4);
  EXPECT_NE(message(truncated).find("payload"), std::string::npos);
  EXPECT_NE(message(std::span(bytes).first(5)).find("header"), std::string::npos);
  TempDir dir;
  EXPECT_THROW((void)read_flo(dir.path() / "missing.flo"), std::runtime_error);
}

TEST(Png, RoundTripQuantises) {
  Rng rng(31);
  Frame f(9, 5);
  for (auto& v : f.tensor().values()) v = std::uniform_real_distribution<double>(-0.2, 1.2)(rng);
  TempDir dir;
  write_png(dir.path() / "x.png", f);
  const Frame back = read_png(dir.path() / "x.png");
  ASSERT_EQ(back.width(), 9);
  for (std::size_t i = 0; i < f.tensor().size(); ++i)
    EXPECT_NEAR(back.tensor()[i], std::clamp(f.tensor()[i], 0.0, 1.0), 0.5 / 255.0 + 1e-12);
  // Quantised values survive a second trip unchanged.
  write_png(dir.path() / "y.png", back);
  EXPECT_EQ(read_png(dir.path() / "y.png"), back);
  std::ofstream(dir.path() / "junk.png") << "not a png";
  EXPECT_THROW((void)read_png(dir.path() / "junk.png"), std::runtime_error);
}

TEST(Dataset, SavedTripletsLoadWithGroundTruth) {
  Rng rng(40);
  TempDir dir;
  const TripletBatch b = synth_triplet(random_motion_spec(MotionCase::kAngle, 32, rng), 32, rng);
  save_triplet(dir.path() / "item0", b);
  const TripletDataset ds = load_triplet_dataset(dir.path());
  ASSERT_EQ(ds.size(), 1u);
  const auto loaded = ds.load(0);
  ASSERT_TRUE(loaded.has_value());
  EXPECT_DOUBLE_EQ(loaded->t, 0.5);
  EXPECT_LE(testing::max_abs_diff(loaded->it.tensor(), b.it.tensor()), 0.5 / 255.0 + 1e-12);
  ASSERT_TRUE(loaded->flow_to_prev.has_value());
  EXPECT_LE(testing::max_abs_diff(loaded->flow_to_prev->tensor(), b.flow_to_prev->tensor()), 1e-5);
  ASSERT_TRUE(loaded->bim.has_value());
  EXPECT_LE(testing::max_abs_diff(loaded->bim->tensor(), b.bim->tensor()), 1e-5);
  ASSERT_TRUE(loaded->valid.has_value());
  EXPECT_EQ(*loaded->valid, *b.valid);
}

TEST(Dataset, ManifestOrderAndTimes) {
  Rng rng(41);
  TempDir dir;
  for (const char* name : {"a", "b"}) {
    save_triplet(dir.path() / name, synth_triplet(random_motion_spec(MotionCase::kUniform, 32, rng), 32, rng));
  }
  std::ofstream(dir.path() / "manifest.txt") << "# comment\nb t=0.25 d=0.4\n\na\n";
  const TripletDataset ds = load_triplet_dataset(dir.path());
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.item_dir(0).filename(), "b");
  EXPECT_DOUBLE_EQ(ds.load(0)->t, 0.25);
  EXPECT_DOUBLE_EQ(ds.load(1)->t, 0.5);
}

TEST(Dataset, SeptupletTargetIndex) {
  TempDir dir;
  const fs::path item = dir.path() / "seq";
  fs::create_directories(item);
  for (int i = 0; i < 7; ++i) write_png(item / ("im" + std::to_string(i + 1) + ".png"), Frame(8, 8));
  EXPECT_DOUBLE_EQ(load_triplet_dataset(dir.path()).load(0)->t, 0.5);
  EXPECT_NEAR(load_triplet_dataset(dir.path(), ".png", 2).load(0)->t, 2.0 / 6.0, 1e-15);
  EXPECT_THROW((void)load_triplet_dataset(dir.path(), ".png", 6).load(0), std::invalid_argument);
}

TEST(Dataset, MismatchedSizesWarnAndSkip) {
  TempDir dir;
  const fs::path item = dir.path() / "bad";
  fs::create_directories(item);
  write_png(item / "f0.png", Frame(8, 8));
  write_png(item / "f1.png", Frame(8, 6));
  write_png(item / "f2.png", Frame(8, 8));
  std::vector<std::string> warnings;
  const TripletDataset ds = load_triplet_dataset(dir.path(), ".png", -1, [&](const std::string& m) {
    warnings.push_back(m);
  });
  EXPECT_FALSE(ds.load(0).has_value());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("differ in size"), std::string::npos);
  EXPECT_TRUE(ds.load_all().empty());
}

TEST(Dataset, EmptyAndMissingRoots) {
  TempDir dir;
  EXPECT_TRUE(load_triplet_dataset(dir.path()).empty());
  EXPECT_THROW((void)load_triplet_dataset(dir.path() / "nope"), std::runtime_error);
}

}  // namespace
}  // namespace bimvfi
