#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

#include <unistd.h>

#include "inflow/checkpoint.hpp"
#include "inflow/io.hpp"
#include "test_support.hpp"

using namespace inflow;
namespace fs = std::filesystem;

namespace {

FlowModel<float> sample_model(bool image = false) {
  FlowConfig cfg;
  if (image) {
    cfg.input_shape = {3, 4, 4};
    cfg.subnet = {SubnetKind::conv, {4, 4}, 3};
    cfg.blocks = 3;
  } else {
    cfg.input_shape = {5};
    cfg.subnet.hidden = {8, 6};
    cfg.blocks = 4;
    cfg.shared = true;
  }
  cfg.seed = 77;
  cfg.final_bias = 0.1;
  FlowModel<double> m(cfg);
  Rng rng(3);
  oracle::randomize(m, rng, -0.3, 0.3);
  return m.cast<float>();
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("inflow_ckpt_" + std::to_string(::getpid()) + "_" + name);
}

CheckpointError::Kind decode_kind(std::string_view bytes) {
  try {
    decode_checkpoint<float>(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return CheckpointError::Kind::io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool image : {false, true}) {
    auto model = sample_model(image);
    CheckpointMeta meta{50, 50, 123};
    const std::string bytes = encode_checkpoint(model, meta);
    auto loaded = decode_checkpoint<float>(bytes);
    EXPECT_EQ(loaded.meta, meta);
    EXPECT_EQ(loaded.model.config(), model.config());
    auto a = model.parameters();
    auto b = loaded.model.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
    EXPECT_EQ(encode_checkpoint(loaded.model, loaded.meta), bytes);
  }
}

TEST(Checkpoint, SaveLoadSaveIdenticalBytes) {
  auto model = sample_model(true);
  const auto p1 = temp_path("a.infl"), p2 = temp_path("b.infl");
  save_checkpoint(model, p1, {1, 2, 3});
  auto loaded = load_checkpoint<float>(p1);
  save_checkpoint(loaded.model, p2, loaded.meta);
  EXPECT_EQ(read_file(p1), read_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Checkpoint, LoadedLikelihoodIsBitIdentical) {
  auto model = sample_model(false);
  auto loaded = decode_checkpoint<float>(encode_checkpoint(model));
  Rng rng(4);
  auto batch = oracle::random_tensor<float>({16, 5}, rng);
  for (Gate c : {Gate::open, Gate::closed}) {
    auto a = log_likelihood(model, batch, c);
    auto b = log_likelihood(loaded.model, batch, c);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
  }
}

TEST(Checkpoint, DoubleModelStoresFloat32) {
  FlowConfig cfg;
  cfg.input_shape = {2};
  FlowModel<double> m(cfg);
  auto params = m.parameters();
  (*params[0])[0] = 0.1;
  auto loaded = decode_checkpoint<double>(encode_checkpoint(m));
  EXPECT_EQ((*loaded.model.parameters()[0])[0], static_cast<double>(0.1f));
}

TEST(Checkpoint, EveryTruncationIsTyped) {
  const std::string bytes = encode_checkpoint(sample_model(false));
  for (std::size_t len = 4; len < bytes.size(); ++len) {
    EXPECT_EQ(decode_kind(std::string_view(bytes).substr(0, len)), CheckpointError::Kind::truncated) << "length " << len;
  }
  EXPECT_EQ(decode_kind(""), CheckpointError::Kind::bad_magic);
  EXPECT_EQ(decode_kind("IN"), CheckpointError::Kind::bad_magic);
}

TEST(Checkpoint, BadMagicAndVersion) {
  std::string bytes = encode_checkpoint(sample_model(false));
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(decode_kind(magic), CheckpointError::Kind::bad_magic);
  std::string version = bytes;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), CheckpointError::Kind::version_mismatch);
}

TEST(Checkpoint, TrailingBytesRejected) {
  EXPECT_EQ(decode_kind(encode_checkpoint(sample_model(false)) + "x"), CheckpointError::Kind::malformed);
}

TEST(Checkpoint, RandomCorruptionNeverCrashes) {
  const std::string bytes = encode_checkpoint(sample_model(false));
  Rng rng(5);
  int rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::string mutated = bytes;
    const auto pos = uniform_index(rng, mutated.size());
    mutated[pos] = static_cast<char>(uniform_index(rng, 256));
    try {
      decode_checkpoint<float>(mutated);
    } catch (const CheckpointError&) {
      ++rejected;
    }
  }
  EXPECT_GT(rejected, 0);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint<float>(temp_path("does_not_exist.infl"));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
  }
}
