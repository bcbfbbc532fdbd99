#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include <unistd.h>

#include "inflow/data.hpp"
#include "inflow/dataset_io.hpp"
#include "inflow/io.hpp"

using namespace inflow;

namespace {

std::string idx_bytes(std::vector<std::uint32_t> dims, const std::vector<unsigned char>& payload) {
  std::string s{'\0', '\0', '\x08', static_cast<char>(dims.size())};
  for (auto d : dims)
    for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((d >> shift) & 0xFF));
  for (unsigned char c : payload) s.push_back(static_cast<char>(c));
  return s;
}

void expect_unit_range(const DataBatch& b) {
  for (float v : b.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

double mean(const DataBatch& b) {
  double s = 0;
  for (float v : b.data()) s += v;
  return s / static_cast<double>(b.size());
}

}  // namespace

TEST(Noise, RangeDeterminismAndMean) {
  auto a = gen_noise(20, {3, 16, 16}, 5);
  expect_unit_range(a);
  EXPECT_EQ(a.shape(), (Shape{20, 3, 16, 16}));
  EXPECT_EQ(a, gen_noise(20, {3, 16, 16}, 5));
  EXPECT_NE(a, gen_noise(20, {3, 16, 16}, 6));
  EXPECT_NEAR(mean(a), 127.5 / 255, 0.01);  // 15360 pixels
  for (float v : a.data()) EXPECT_EQ(v * 255.0f, std::round(v * 255.0f));
  EXPECT_THROW(gen_noise(1, {1, 4, 4}, 0), ContractError);
}

TEST(Constant, ChannelsFlatAndDistinct) {
  auto b = gen_constant(30, {3, 5, 7}, 9);
  expect_unit_range(b);
  EXPECT_EQ(b, gen_constant(30, {3, 5, 7}, 9));
  for (std::size_t i = 0; i < 30; ++i) {
    auto row = b.row(i);
    std::set<float> levels;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 35; ++p) EXPECT_EQ(row[c * 35 + p], row[c * 35]);
      levels.insert(row[c * 35]);
    }
    EXPECT_EQ(levels.size(), 3u);
  }
}

TEST(Mixture, DegenerateStdGivesCenter) {
  auto b = gen_gaussian_mixture(50, {{0.25, -0.5, 3.0}}, 1e-12, 1);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(b(i, 0), 0.25f);
    EXPECT_EQ(b(i, 1), -0.5f);
    EXPECT_EQ(b(i, 2), 3.0f);
  }
}

TEST(Mixture, EmpiricalMean) {
  const std::size_t n = 10000;
  const double sd = 0.3;
  auto b = gen_gaussian_mixture(n, {{1.0, -2.0}}, sd, 4);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += b(i, j);
    EXPECT_NEAR(s / n, j == 0 ? 1.0 : -2.0, 3 * sd / std::sqrt(static_cast<double>(n)));
  }
  EXPECT_EQ(b, gen_gaussian_mixture(n, {{1.0, -2.0}}, sd, 4));
}

TEST(Mixture, TwoCentersSplitEvenly) {
  const std::size_t n = 10000;
  auto b = gen_gaussian_mixture(n, {{-5.0, 0.0}, {5.0, 0.0}}, 0.5, 8);
  std::size_t positive = 0;
  for (std::size_t i = 0; i < n; ++i) positive += b(i, 0) > 0;
  EXPECT_NEAR(static_cast<double>(positive) / n, 0.5, 0.03);
}

TEST(Mixture, Errors) {
  EXPECT_THROW(gen_gaussian_mixture(5, {}, 1, 0), ContractError);
  EXPECT_THROW(gen_gaussian_mixture(5, {{0.0}}, 0, 0), ContractError);
  EXPECT_THROW(gen_gaussian_mixture(5, {{0.0}, {0.0, 1.0}}, 1, 0), DimensionError);
}

TEST(UniformBox, RangeAndErrors) {
  auto b = gen_uniform_box(1000, 2, -5, 5, 3);
  for (float v : b.data()) {
    EXPECT_GE(v, -5.0f);
    EXPECT_LE(v, 5.0f);
  }
  EXPECT_NEAR(mean(b), 0.0, 0.3);
  EXPECT_THROW(gen_uniform_box(3, 2, 1, 1, 0), ContractError);
}

TEST(Idx, ParsesReferenceImages) {
  std::vector<unsigned char> payload(32);
  for (std::size_t i = 0; i < 32; ++i) payload[i] = static_cast<unsigned char>(i * 8);
  payload[31] = 255;
  auto b = parse_idx(idx_bytes({2, 4, 4}, payload));
  EXPECT_EQ(b.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(b[31], 1.0f);
  EXPECT_EQ(b[0], 0.0f);
  EXPECT_FLOAT_EQ(b[17], 136.0f / 255.0f);
}

TEST(Idx, VectorsAndRgb) {
  auto labels = parse_idx(idx_bytes({3}, {0, 7, 255}));
  EXPECT_EQ(labels.shape(), (Shape{3, 1}));
  auto rgb = parse_idx(idx_bytes({1, 3, 2, 2}, std::vector<unsigned char>(12, 51)));
  EXPECT_EQ(rgb.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_FLOAT_EQ(rgb[5], 0.2f);
}

TEST(Idx, TruncatedPayloadNamesLengths) {
  try {
    parse_idx(idx_bytes({2, 4, 4}, std::vector<unsigned char>(31)));
    FAIL();
  } catch (const IdxError& e) {
    EXPECT_EQ(e.kind(), IdxError::Kind::length_mismatch);
    EXPECT_NE(std::string(e.what()).find("expected 32"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("found 31"), std::string::npos);
  }
  EXPECT_THROW(parse_idx(std::string("\0\0\x08", 3)), IdxError);
  EXPECT_THROW(parse_idx(std::string("\0\0\x08\x03\0\0", 6)), IdxError);
}

TEST(Idx, EveryMagicMutationRejected) {
  const std::string good = idx_bytes({2, 4, 4}, std::vector<unsigned char>(32, 9));
  ASSERT_NO_THROW(parse_idx(good));
  for (std::size_t pos = 0; pos < 4; ++pos) {
    for (int v = 0; v < 256; ++v) {
      if (static_cast<unsigned char>(good[pos]) == v) continue;
      std::string bad = good;
      bad[pos] = static_cast<char>(v);
      EXPECT_THROW(parse_idx(bad), IdxError) << "byte " << pos << " = " << v;
    }
  }
}

TEST(Idx, DimensionOverflow) {
  try {
    parse_idx(idx_bytes({0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF}, {}));
    FAIL();
  } catch (const IdxError& e) {
    EXPECT_EQ(e.kind(), IdxError::Kind::dimension_overflow);
  }
}

TEST(Idx, EncodeRoundTrip) {
  auto b = gen_noise(4, {3, 5, 5}, 2);
  EXPECT_EQ(parse_idx(encode_idx(b)), b);
  DataBatch gray({2, 1, 3, 3}, 0.2f);
  const std::string bytes = encode_idx(gray);
  EXPECT_EQ(bytes[3], 3);
  EXPECT_EQ(parse_idx(bytes).shape(), gray.shape());
}

TEST(Idx, LoadFromDisk) {
  const auto path = std::filesystem::temp_directory_path() / ("inflow_" + std::to_string(::getpid()) + "-images-ubyte");
  write_file_atomic(path, idx_bytes({1, 2, 2}, {0, 85, 170, 255}));
  auto b = load_dataset(path);
  EXPECT_EQ(b.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_FLOAT_EQ(b[1], 1.0f / 3.0f);
  std::filesystem::remove(path);
  EXPECT_THROW(load_idx(path), IoError);
}

TEST(CsvBatch, RoundTripAndShape) {
  auto b = gen_gaussian_mixture(7, {{0.1, 0.2, 0.3}}, 0.05, 1);
  EXPECT_EQ(parse_csv_batch(encode_csv_batch(b)), b);
  auto img = gen_noise(2, {3, 2, 2}, 1);
  EXPECT_EQ(parse_csv_batch(encode_csv_batch(img)), img);
  EXPECT_EQ(parse_csv_batch("1, 2\r\n3,4\n\n").shape(), (Shape{2, 2}));
  EXPECT_THROW(parse_csv_batch("1,2\n3\n"), ParseError);
  EXPECT_THROW(parse_csv_batch("1,x\n"), ParseError);
  EXPECT_THROW(parse_csv_batch("# only a comment\n"), ParseError);
  EXPECT_THROW(parse_csv_batch("# shape=3\n1,2\n"), ParseError);
}

TEST(GrayToRgb, ReplicatesChannel) {
  auto gray = parse_idx(idx_bytes({2, 3, 3}, std::vector<unsigned char>{1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 8, 7, 6, 5, 4, 3, 2, 1}));
  auto rgb = gray_to_rgb(gray);
  EXPECT_EQ(rgb.shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t p = 0; p < 9; ++p) {
      EXPECT_EQ(rgb.row(i)[p], gray.row(i)[p]);
      EXPECT_EQ(rgb.row(i)[9 + p], gray.row(i)[p]);
      EXPECT_EQ(rgb.row(i)[18 + p], gray.row(i)[p]);
    }
  EXPECT_THROW(gray_to_rgb(rgb), ContractError);
  EXPECT_THROW(gray_to_rgb(DataBatch({2, 4})), ContractError);
}

TEST(Corrupt, ParameterTablesMonotone) {
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::brightness}) {
    for (int s = 1; s < 5; ++s) EXPECT_LT(corruption_parameter(kind, s), corruption_parameter(kind, s + 1));
  }
  // contrast keeps less of the signal as severity grows
  for (int s = 1; s < 5; ++s)
    EXPECT_GT(corruption_parameter(CorruptionKind::contrast, s), corruption_parameter(CorruptionKind::contrast, s + 1));
  EXPECT_THROW(corruption_parameter(CorruptionKind::brightness, 0), ContractError);
  EXPECT_THROW(corruption_parameter(CorruptionKind::brightness, 6), ContractError);
  EXPECT_THROW(parse_corruption("fog"), ContractError);
  EXPECT_EQ(parse_corruption(to_string(CorruptionKind::contrast)), CorruptionKind::contrast);
}

TEST(Corrupt, OutputClippedAndDeterministic) {
  auto clean = gen_noise(5, {3, 8, 8}, 1);
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::brightness, CorruptionKind::contrast}) {
    for (int s = 1; s <= 5; ++s) {
      auto c = corrupt(clean, kind, s, 3);
      expect_unit_range(c);
      EXPECT_EQ(c, corrupt(clean, kind, s, 3));
    }
  }
}

TEST(Corrupt, NoiseStdAtSeverityFive) {
  DataBatch grey({10, 3, 32, 32}, 0.5f);
  auto c = corrupt(grey, CorruptionKind::gaussian_noise, 5, 11);
  double s = 0, s2 = 0;
  for (float v : c.data()) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(c.size());
  EXPECT_NEAR(std::sqrt(s2 / n - (s / n) * (s / n)), 0.10, 0.01);
}

TEST(Corrupt, DeviationGrowsWithSeverity) {
  auto clean = gen_noise(8, {3, 8, 8}, 2);
  for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::brightness, CorruptionKind::contrast}) {
    double prev = 0;
    for (int s = 1; s <= 5; ++s) {
      auto c = corrupt(clean, kind, s, 4);
      double mad = 0;
      for (std::size_t i = 0; i < c.size(); ++i) mad += std::fabs(c[i] - clean[i]);
      mad /= static_cast<double>(c.size());
      EXPECT_GE(mad, prev) << to_string(kind) << " severity " << s;
      prev = mad;
    }
  }
}

TEST(Corrupt, ContrastPullsTowardMidGrey) {
  DataBatch b({1, 3}, std::vector<float>{0.0f, 0.5f, 1.0f});
  auto c = corrupt(b, CorruptionKind::contrast, 5, 0);
  EXPECT_FLOAT_EQ(c[0], 0.425f);
  EXPECT_FLOAT_EQ(c[1], 0.5f);
  EXPECT_FLOAT_EQ(c[2], 0.575f);
}
