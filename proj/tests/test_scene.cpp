#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <unistd.h>

#include "sraw/scene.hpp"
#include "test_util.hpp"

using namespace sraw;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sraw_scene_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

} // namespace

TEST(SyntheticData, CountsAndLabels) {
  const auto chips = generate_synthetic_dataset(8, 100, 64, 1);
  ASSERT_EQ(chips.size(), 800u);
  std::map<std::size_t, std::size_t> count;
  for (const auto& c : chips) {
    ++count[c.label];
    EXPECT_EQ(c.image.height(), 64u);
    EXPECT_TRUE(c.mask.same_shape(c.image.grid()));
  }
  ASSERT_EQ(count.size(), 8u);
  for (auto [label, n] : count)
    EXPECT_EQ(n, 100u) << label;
  EXPECT_EQ(chips[17].id, "chip_00017");
}

TEST(SyntheticData, DeterministicPerSeed) {
  const auto a = generate_synthetic_dataset(4, 5, 32, 9), b = generate_synthetic_dataset(4, 5, 32, 9);
  const auto c = generate_synthetic_dataset(4, 5, 32, 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(a[i].id, b[i].id);
  }
  EXPECT_NE(a[0].image, c[0].image);
  // chip streams are per index, so a longer run shares its prefix
  const auto longer = generate_synthetic_dataset(4, 6, 32, 9);
  EXPECT_EQ(longer[3].image, a[3].image);
}

TEST(SyntheticData, MaskedPixelsBrighterThanClutterMean) {
  const auto chips = generate_synthetic_dataset(8, 10, 64, 3);
  double inside = 0.0, outside = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (const auto& c : chips) {
    ASSERT_GT(mask_count(c.mask), 0u);
    for (std::size_t i = 0; i < c.image.size(); ++i) {
      if (c.mask[i]) {
        inside += c.image[i];
        ++n_in;
      } else {
        outside += c.image[i];
        ++n_out;
      }
    }
  }
  // per-pixel speckle makes the pointwise reading false for single pixels; the mean is the checked form
  EXPECT_GE(inside / double(n_in), kClutterMean);
  EXPECT_NEAR(outside / double(n_out), kClutterMean, 0.01);
}

TEST(SyntheticData, RangeErrors) {
  EXPECT_THROW(generate_synthetic_dataset(1, 5, 64, 0), InvalidInput);
  EXPECT_THROW(generate_synthetic_dataset(11, 5, 64, 0), InvalidInput);
  EXPECT_THROW(generate_synthetic_dataset(4, 5, 31, 0), InvalidInput);
  EXPECT_NO_THROW(generate_synthetic_dataset(10, 1, 32, 0));
}

TEST(StratifiedSplit, DisjointBalancedDeterministic) {
  const auto chips = generate_synthetic_dataset(8, 25, 32, 4);
  const auto [train, test] = stratified_split(chips, 0.8, 5);
  EXPECT_EQ(train.size() + test.size(), chips.size());
  std::vector<int> seen(chips.size(), 0);
  for (auto i : train)
    ++seen[i];
  for (auto i : test)
    ++seen[i];
  for (int s : seen)
    EXPECT_EQ(s, 1);
  std::map<std::size_t, int> per_class;
  for (auto i : test)
    ++per_class[chips[i].label];
  for (auto [label, n] : per_class)
    EXPECT_LE(std::abs(n - 5), 1);
  EXPECT_EQ(stratified_split(chips, 0.8, 5), std::make_pair(train, test));
  EXPECT_THROW(stratified_split(chips, 1.0, 5), InvalidInput);
}

TEST(Pgm, SixteenBitRoundTrip) {
  TempDir dir("pgm16");
  std::mt19937_64 rng(1);
  const RealGrid img = testutil::random_image(13, 17, rng);
  save_pgm(img, dir.path / "a.pgm", 16);
  const GrayImage back = load_pgm(dir.path / "a.pgm");
  ASSERT_EQ(back.height(), 13u);
  ASSERT_EQ(back.width(), 17u);
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_LE(std::abs(back[i] - img[i]), 1.0 / 65535.0);
  save_pgm(img, dir.path / "b.pgm", 8);
  const GrayImage b8 = load_pgm(dir.path / "b.pgm");
  for (std::size_t i = 0; i < img.size(); ++i)
    EXPECT_LE(std::abs(b8[i] - img[i]), 1.0 / 255.0);
  EXPECT_THROW(save_pgm(img, dir.path / "c.pgm", 12), InvalidInput);
}

TEST(Pgm, ZeroImagePayloadAndHeader) {
  TempDir dir("pgm0");
  save_pgm(RealGrid(64, 64, 0.0), dir.path / "z.pgm", 16);
  const auto bytes = read_bytes(dir.path / "z.pgm");
  const std::string header = "P5\n64 64\n65535\n";
  ASSERT_EQ(bytes.size(), header.size() + 64 * 64 * 2);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + long(header.size())), header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i)
    ASSERT_EQ(bytes[i], 0);

  // single-space header with a comment, big-endian sample
  std::string custom = "P5 # comment\n64 64 65535\n";
  std::string payload(64 * 64 * 2, '\0');
  payload[0] = char(0x80);
  write_text(dir.path / "h.pgm", custom + payload);
  const GrayImage h = load_pgm(dir.path / "h.pgm");
  EXPECT_EQ(h.height(), 64u);
  EXPECT_NEAR(h[0], 32768.0 / 65535.0, 1e-15);
}

TEST(Pgm, FormatErrors) {
  TempDir dir("pgmbad");
  write_text(dir.path / "p2.pgm", "P2\n2 2\n255\n0 0 0 0\n");
  EXPECT_THROW(load_pgm(dir.path / "p2.pgm"), FormatError);
  write_text(dir.path / "short.pgm", std::string("P5\n4 4\n255\n") + std::string(10, 'x'));
  EXPECT_THROW(load_pgm(dir.path / "short.pgm"), FormatError);
  EXPECT_THROW(load_pgm(dir.path / "absent.pgm"), IoError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  TempDir dir("roundtrip");
  const auto chips = generate_synthetic_dataset(3, 4, 32, 2);
  write_dataset(chips, dir.path);
  EXPECT_TRUE(fs::exists(dir.path / "manifest.csv"));
  const auto back = load_dataset(dir.path / "manifest.csv");
  ASSERT_EQ(back.size(), chips.size());
  for (std::size_t k = 0; k < chips.size(); ++k) {
    EXPECT_EQ(back[k].label, chips[k].label);
    EXPECT_EQ(back[k].id, chips[k].id);
    EXPECT_EQ(back[k].mask, chips[k].mask);
    for (std::size_t i = 0; i < chips[k].image.size(); ++i)
      ASSERT_LE(std::abs(back[k].image[i] - chips[k].image[i]), 1.0 / 65535.0);
  }
}

TEST(Dataset, MissingFileNamesIt) {
  TempDir dir("missing");
  write_dataset(generate_synthetic_dataset(2, 2, 32, 2), dir.path);
  fs::remove(dir.path / "images" / "chip_00001.pgm");
  try {
    load_dataset(dir.path / "manifest.csv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("chip_00001.pgm"), std::string::npos);
  }
}

TEST(Dataset, ThresholdMaskFallback) {
  TempDir dir("nomask");
  const auto chips = generate_synthetic_dataset(2, 3, 32, 6);
  write_dataset(chips, dir.path);
  std::string csv = "image,label\n";
  for (const auto& c : chips)
    csv += "images/" + c.id + ".pgm," + std::to_string(c.label) + "\n";
  write_text(dir.path / "nomask.csv", csv);
  const auto back = load_dataset(dir.path / "nomask.csv");
  for (const auto& c : back) {
    EXPECT_GT(mask_count(c.mask), 0u);
    EXPECT_EQ(c.mask, threshold_mask(c.image));
  }
}

TEST(Dataset, MalformedRowsReportLine) {
  TempDir dir("malformed");
  auto expect_parse = [&](const std::string& body, const std::string& needle) {
    write_text(dir.path / "m.csv", body);
    try {
      read_manifest(dir.path / "m.csv");
      FAIL() << "expected ParseError for " << body;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_parse("image,mask,label\na.pgm,m.pgm,0\nb.pgm,m2.pgm\n", "m.csv:3");
  expect_parse("image,mask,label\na.pgm,m.pgm,x\n", "m.csv:2");
  expect_parse("image,mask,label\na.pgm,m.pgm,0\na.pgm,n.pgm,1\n", "duplicate");
  expect_parse("image,mask,label\na.pgm,m.pgm,0\nb.pgm,n.pgm,2\n", "contiguous");
  expect_parse("image,colour,label\n", "colour");
  EXPECT_THROW(read_manifest(dir.path / "nope.csv"), IoError);
}

TEST(Masks, DilateDisc) {
  Mask m(9, 9, 0);
  m(4, 4) = 1;
  const Mask d = dilate(m, 2);
  EXPECT_EQ(mask_count(d), 13u);
  EXPECT_EQ(d(4, 6), 1);
  EXPECT_EQ(d(6, 6), 0);
}
