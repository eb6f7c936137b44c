#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "test_support.hpp"
#include "wscam/dataset.hpp"
#include "wscam/pgm.hpp"
#include "wscam/rng.hpp"

using namespace wscam;
using wscam::testing::ScratchDir;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.image_size = 48;
  c.normal_count = 6;
  c.mass_count = 6;
  c.radius_min = 4;
  c.radius_max = 8;
  return c;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::string first_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Seeds, DerivationIsStableAndSeparates) {
  EXPECT_EQ(derive_seed(7, "shuffle", 3), derive_seed(7, "shuffle", 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s : {1u, 7u})
    for (const char* c : {"shuffle", "augment", "init-global"})
      for (std::uint64_t i = 0; i < 4; ++i) seen.insert(derive_seed(s, c, i));
  EXPECT_EQ(seen.size(), 24u);
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto c = small_config();
  EXPECT_EQ(generate_synthetic(c), generate_synthetic(c));
  auto other = c;
  other.seed = 8;
  EXPECT_NE(generate_synthetic(c).samples[0].image, generate_synthetic(other).samples[0].image);
}

TEST(Synthetic, LabelsBoxesAndRange) {
  const auto ds = generate_synthetic(small_config());
  ASSERT_EQ(ds.size(), 12u);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.label == Label::mass, !s.boxes.empty());
    EXPECT_LE(s.boxes.size(), 1u);
    EXPECT_GE(s.image.min(), 0.0);
    EXPECT_LE(s.image.max(), 1.0);
    EXPECT_EQ(s.image.shape(), (Shape{1, 48, 48}));
  }
}

TEST(Synthetic, MassOnlyEveryImageHasOneBox) {
  auto c = small_config();
  c.normal_count = 0;
  for (const auto& s : generate_synthetic(c).samples) {
    EXPECT_EQ(s.label, Label::mass);
    EXPECT_EQ(s.boxes.size(), 1u);
  }
}

TEST(Synthetic, LesionBrighterThanSurround) {
  SynthConfig c;  // default size and contrast
  c.normal_count = 0;
  c.mass_count = 40;
  for (const auto& s : generate_synthetic(c).samples) {
    const BBox& b = s.boxes.at(0);
    double in = 0, out = 0;
    long n_in = 0, n_out = 0;
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        const double v = s.image.at(0, y, x);
        if (x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max) {
          in += v;
          ++n_in;
        } else {
          out += v;
          ++n_out;
        }
      }
    }
    EXPECT_GT(in / n_in, out / n_out) << s.id;
  }
}

TEST(Synthetic, RejectsInvalidConfigs) {
  auto c = small_config();
  c.radius_max = 30;  // >= image_size / 2
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config();
  c.contrast_min = 0.0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config();
  c.radius_min = 9;
  c.radius_max = 8;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
}

TEST(Manifest, RoundTripThroughDisk) {
  ScratchDir dir("manifest_roundtrip");
  const auto ds = generate_synthetic(small_config());
  write_dataset(dir.path(), ds);
  EXPECT_EQ(load_manifest(dir.path() / "manifest.csv"), ds);
  std::ifstream is(dir.path() / "manifest.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "image_path,label,x_min,y_min,x_max,y_max");
}

TEST(Manifest, ParsesRowsAndReportsLines) {
  ScratchDir dir("manifest_rows");
  write_pgm(dir.path() / "img1.pgm", Tensor({1, 64, 64}, 0.5));
  write_pgm(dir.path() / "img2.pgm", Tensor({1, 64, 64}, 0.25));
  const auto m = dir.path() / "m.csv";
  write_text(m, "image_path,label,x_min,y_min,x_max,y_max\nimg1.pgm,mass,10,10,40,40\nimg2.pgm,normal\n");
  const auto ds = load_manifest(m);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.samples[0].boxes, (std::vector<BBox>{{10, 10, 40, 40}}));
  EXPECT_EQ(ds.samples[0].label, Label::mass);
  EXPECT_TRUE(ds.samples[1].boxes.empty());
  EXPECT_EQ(ds.samples[1].id, "img2");

  write_text(m, "image_path,label,x_min,y_min,x_max,y_max\nimg1.pgm,mass,10,10,40,40\nimg1.pgm,mass,40,10,30,40\n");
  EXPECT_NE(first_error([&] { load_manifest(m); }).find(":3:"), std::string::npos);
  write_text(m, "h\nimg1.pgm,mass,10,10,40,90\n");
  EXPECT_NE(first_error([&] { load_manifest(m); }).find("outside"), std::string::npos);
  write_text(m, "h\nimg1.pgm,tumour\n");
  EXPECT_NE(first_error([&] { load_manifest(m); }).find(":2:"), std::string::npos);
  write_text(m, "h\nmissing.pgm,normal\n");
  EXPECT_THROW(load_manifest(m), std::runtime_error);
  write_text(m, "h\nimg1.pgm,mass,1,2,3\n");
  EXPECT_THROW(load_manifest(m), std::runtime_error);
  EXPECT_THROW(load_manifest(dir.path() / "nope.csv"), std::runtime_error);
}

TEST(Pgm, RoundTripAndErrors) {
  ScratchDir dir("pgm");
  Tensor img({1, 5, 7});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 11) / 10.0;
  quantize_8bit(img);
  write_pgm(dir.path() / "a.pgm", img);
  EXPECT_EQ(read_pgm(dir.path() / "a.pgm"), img);

  write_text(dir.path() / "c.pgm", std::string("P5\n# comment\n2 1\n255\n") + '\x00' + '\xff');
  EXPECT_EQ(read_pgm(dir.path() / "c.pgm"), Tensor({1, 1, 2}, {0.0, 1.0}));
  write_text(dir.path() / "t.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pgm(dir.path() / "t.pgm"), std::runtime_error);
  write_text(dir.path() / "p2.pgm", "P2\n1 1\n255\n7\n");
  EXPECT_THROW(read_pgm(dir.path() / "p2.pgm"), std::runtime_error);
  write_text(dir.path() / "16.pgm", "P5\n1 1\n65535\nab");
  EXPECT_THROW(read_pgm(dir.path() / "16.pgm"), std::runtime_error);
}

TEST(Augment, FlipRemapsBoxesAndIsInvolution) {
  Sample s;
  s.image = Tensor({1, 128, 128});
  for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] = static_cast<double>(i % 97) / 97.0;
  s.boxes = {{10, 10, 40, 40}};
  Sample f = s;
  flip_horizontal(f);
  EXPECT_EQ(f.boxes[0], (BBox{88, 10, 118, 40}));
  EXPECT_EQ(f.image.at(0, 3, 0), s.image.at(0, 3, 127));
  flip_horizontal(f);
  EXPECT_EQ(f, s);
}

TEST(Augment, CropClipsAndDropsSmallRemainders) {
  Sample s;
  s.image = Tensor({1, 20, 20});
  s.boxes = {{2, 2, 6, 6}, {8, 8, 12, 12}, {0, 0, 20, 20}};
  crop(s, 5, 5, 10, 10);
  // first box keeps 1/16 -> dropped; second kept whole; third clipped to the window (25%).
  ASSERT_EQ(s.boxes.size(), 2u);
  EXPECT_EQ(s.boxes[0], (BBox{3, 3, 7, 7}));
  EXPECT_EQ(s.boxes[1], (BBox{0, 0, 10, 10}));
  EXPECT_THROW(crop(s, 5, 5, 10, 10), std::invalid_argument);
}

TEST(Augment, NormalizesAndKeepsLabel) {
  const auto ds = generate_synthetic(SynthConfig{});
  for (std::size_t i = 195; i < 215; ++i) {
    const Sample& src = ds.samples[i];
    const Sample a = augment(src, derive_seed(3, "augment", i));
    EXPECT_EQ(a.label, src.label);
    EXPECT_EQ(a.image.shape(), (Shape{1, 112, 112}));
    const double n = static_cast<double>(a.image.size());
    const double mean = a.image.sum() / n;
    double var = 0.0;
    for (double v : a.image.values()) var += (v - mean) * (v - mean);
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_LT(std::abs(std::sqrt(var / n) - 1.0), 1e-6);
    for (const auto& b : a.boxes) {
      EXPECT_TRUE(b.valid());
      EXPECT_GE(b.x_min, 0);
      EXPECT_LE(b.x_max, 112);
      EXPECT_LE(b.y_max, 112);
    }
    // Same seed, same draw; boxes never influence it.
    Sample bare = src;
    bare.boxes.clear();
    EXPECT_EQ(augment(bare, derive_seed(3, "augment", i)).image, a.image);
  }
  Sample flat;
  flat.image = Tensor({1, 112, 112}, 0.4);
  EXPECT_TRUE(augment(flat, 1).image.all_finite());
  EXPECT_THROW(augment(flat, 1, AugmentConfig{200, 0.5}), std::invalid_argument);
}

TEST(Augment, ForcedFlipProbability) {
  const auto ds = generate_synthetic(small_config());
  const Sample& s = ds.samples.back();
  const Sample never = augment(s, 5, AugmentConfig{48, 0.0});
  const Sample always = augment(s, 5, AugmentConfig{48, 1.0});
  Sample flipped = s;
  flip_horizontal(flipped);
  Tensor ref = flipped.image;
  normalize_image(ref);
  EXPECT_EQ(always.image, ref);
  EXPECT_EQ(always.boxes, flipped.boxes);
  Tensor plain = s.image;
  normalize_image(plain);
  EXPECT_EQ(never.image, plain);
}
