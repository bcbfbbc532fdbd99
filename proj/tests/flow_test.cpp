#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "inflow/flow.hpp"
#include "inflow/train.hpp"
#include "test_support.hpp"

using namespace inflow;

namespace {

FlowConfig vector_config(std::size_t d, std::size_t blocks = 2, bool shared = false, std::uint64_t seed = 3) {
  FlowConfig cfg;
  cfg.input_shape = {d};
  cfg.blocks = blocks;
  cfg.subnet.hidden = {8, 8};
  cfg.shared = shared;
  cfg.seed = seed;
  return cfg;
}

FlowConfig image_config(std::size_t blocks = 2, bool shared = false) {
  FlowConfig cfg;
  cfg.input_shape = {3, 4, 4};
  cfg.blocks = blocks;
  cfg.subnet = {SubnetKind::conv, {4}, 3};
  cfg.shared = shared;
  cfg.seed = 9;
  return cfg;
}

FlowModel<double> random_model(const FlowConfig& cfg, std::uint64_t seed) {
  FlowModel<double> model(cfg);
  Rng rng(seed);
  oracle::randomize(model, rng, -0.25, 0.25);
  return model;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Sets every final-layer bias of block j's s and t nets (hidden weights are irrelevant
// because final weights are zero).
void set_constant_subnets(FlowModel<double>& model, const std::vector<std::pair<double, double>>& st) {
  auto params = model.parameters();
  std::size_t offset = 0;
  for (std::size_t j = 0; j < model.blocks().size(); ++j) {
    const auto& block = model.blocks()[j];
    offset += block.s_net().parameter_count();
    for (double& v : params[offset - 1]->data()) v = st[j].first;
    offset += block.t_net().parameter_count();
    for (double& v : params[offset - 1]->data()) v = st[j].second;
  }
}

struct Arch {
  FlowConfig cfg;
  const char* name;
};

std::vector<Arch> architectures() {
  return {{vector_config(2, 2), "vec2-K2"},          {vector_config(5, 4), "vec5-K4"},
          {vector_config(6, 2, true), "vec6-K2-shared"}, {vector_config(3, 4, true), "vec3-K4-shared"},
          {image_config(2), "img-K2"},               {image_config(4, true), "img-K4-shared"}};
}

}  // namespace

TEST(Gate, OnlyZeroOrOne) {
  EXPECT_EQ(gate_from_int(0), Gate::closed);
  EXPECT_EQ(gate_from_int(1), Gate::open);
  EXPECT_THROW(gate_from_int(2), ContractError);
  EXPECT_THROW(gate_from_int(-1), ContractError);
}

TEST(Split, ImageGivesOneChannelToU1) {
  Rng rng(1);
  auto u = oracle::random_tensor<double>({2, 3 * 2 * 2}, rng);
  auto [u1, u2] = split_channels(u, {3, 2, 2});
  EXPECT_EQ(u1.shape(), (Shape{2, 4}));
  EXPECT_EQ(u2.shape(), (Shape{2, 8}));
  EXPECT_EQ(u1[0], u[0]);
  EXPECT_EQ(u2[0], u[4]);
  EXPECT_EQ(merge_channels(u1, u2), u);
}

TEST(Split, VectorHalves) {
  Tensor<double> u({1, 4}, {1, 2, 3, 4});
  auto [u1, u2] = split_channels(u, {4});
  EXPECT_EQ(u1, Tensor<double>({1, 2}, {1, 2}));
  EXPECT_EQ(u2, Tensor<double>({1, 2}, {3, 4}));
  EXPECT_EQ(merge_channels(u1, u2), u);
  auto [a, b] = split_channels(Tensor<double>({1, 5}, {1, 2, 3, 4, 5}), {5});
  EXPECT_EQ(a.row_size(), 3u);
  EXPECT_EQ(b.row_size(), 2u);
}

TEST(Split, DegenerateInputsRejected) {
  EXPECT_THROW(split_point({1}), ConfigError);
  EXPECT_THROW(split_point({1, 4, 4}), ConfigError);
  EXPECT_THROW(FlowModel<double>(vector_config(1)), ConfigError);
  FlowConfig bad = vector_config(4);
  bad.blocks = 0;
  EXPECT_THROW(FlowModel<double>{bad}, ConfigError);
}

TEST(Coupling, ClosedGateIsIdentity) {
  auto model = random_model(vector_config(4), 2);
  Rng rng(2);
  auto u = oracle::random_tensor<double>({3, 4}, rng);
  auto [v, ld] = coupling_forward(model.blocks()[0], u, Gate::closed);
  EXPECT_EQ(v, u);
  for (double x : ld) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(coupling_inverse(model.blocks()[0], u, Gate::closed), u);
}

TEST(Coupling, ZeroSubnetsAreIdentity) {
  FlowConfig cfg = vector_config(4);
  cfg.final_bias = 0.0;
  FlowModel<double> model(cfg);
  Rng rng(3);
  auto u = oracle::random_tensor<double>({3, 4}, rng);
  auto [v, ld] = coupling_forward(model.blocks()[0], u, Gate::open);
  EXPECT_EQ(v, u);
  for (double x : ld) EXPECT_EQ(x, 0.0);
}

TEST(Coupling, HandExample) {
  FlowConfig cfg = vector_config(2, 1);
  cfg.final_bias = 0.0;
  FlowModel<double> model(cfg);
  set_constant_subnets(model, {{0.5, 0.1}});
  Tensor<double> u({1, 2}, {1, 2});
  auto [v, ld] = coupling_forward(model.blocks()[0], u, Gate::open);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_NEAR(v[1], 2 * std::exp(0.5) + 0.1, 1e-15);
  EXPECT_NEAR(v[1], 3.3974, 1e-4);
  EXPECT_EQ(ld[0], 0.5);
  auto back = coupling_inverse(model.blocks()[0], v, Gate::open);
  EXPECT_EQ(back[0], 1.0);
  EXPECT_NEAR(back[1], 2.0, 1e-15);
}

TEST(Coupling, RandomRoundTrip) {
  for (const auto& arch : architectures()) {
    auto model = random_model(arch.cfg, 4);
    Rng rng(4);
    auto u = oracle::random_tensor<double>({5, model.dim()}, rng);
    for (const auto& block : model.blocks()) {
      auto [v, ld] = coupling_forward(block, u, Gate::open);
      EXPECT_LT(max_abs_diff(coupling_inverse(block, v, Gate::open), u), 1e-5) << arch.name;
    }
  }
}

TEST(Subnet, OutputsAreNonNegative) {
  Rng rng(5);
  for (const auto& arch : architectures()) {
    auto model = random_model(arch.cfg, 5);
    for (const auto& block : model.blocks()) {
      auto u1 = oracle::random_tensor<double>({6, block.split()}, rng, -5, 5);
      auto [s, t] = block.scale_shift(u1);
      for (double x : s.data()) EXPECT_GE(x, 0.0) << arch.name;
      for (double x : t.data()) EXPECT_GE(x, 0.0) << arch.name;
    }
  }
}

TEST(Permutation, BijectiveAndChangesU1) {
  for (const Shape& shape : {Shape{2}, Shape{5}, Shape{8}, Shape{3, 4, 4}, Shape{2, 1, 1}}) {
    for (std::size_t j = 0; j < 5; ++j) {
      auto p = make_block_permutation(shape, 42, j);
      const std::size_t d = shape_size(shape);
      ASSERT_EQ(p.forward.size(), d);
      std::vector<std::size_t> sorted = p.forward;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < d; ++i) {
        EXPECT_EQ(sorted[i], i);
        EXPECT_EQ(p.inverse[p.forward[i]], i);
      }
      const std::size_t k = split_point(shape);
      bool changed = false;
      for (std::size_t i = 0; i < k; ++i) changed = changed || p.forward[i] >= k;
      EXPECT_TRUE(changed);
    }
  }
}

TEST(Permutation, ImagesMoveWholeChannels) {
  auto p = make_block_permutation({3, 2, 2}, 7, 0);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src = p.forward[c * 4] / 4;
    for (std::size_t q = 0; q < 4; ++q) EXPECT_EQ(p.forward[c * 4 + q], src * 4 + q);
  }
}

TEST(Permutation, DeterministicInSeed) {
  EXPECT_EQ(make_block_permutation({9}, 5, 2).forward, make_block_permutation({9}, 5, 2).forward);
  FlowModel<double> a(vector_config(9, 4, false, 11)), b(vector_config(9, 4, false, 11));
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_EQ(a.closed_gate_permutation(), b.closed_gate_permutation());
}

TEST(Flow, ClosedGateIsFixedPermutation) {
  for (const auto& arch : architectures()) {
    auto model = random_model(arch.cfg, 6);
    Rng rng(6);
    auto x = oracle::random_tensor<double>({4, model.dim()}, rng, -3, 3);
    auto out = flow_forward(model, x, Gate::closed);
    auto perm = model.closed_gate_permutation();
    for (std::size_t r = 0; r < 4; ++r) {
      EXPECT_EQ(out.logdet[r], 0.0);
      for (std::size_t i = 0; i < model.dim(); ++i) EXPECT_EQ(out.z(r, i), x(r, perm[i])) << arch.name;
    }
    auto ll = log_likelihood(model, x, Gate::closed);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(ll[r], gaussian_log_density(x.row(r))) << arch.name;
    EXPECT_EQ(flow_inverse(model, out.z, Gate::closed), x);
  }
}

TEST(Flow, ZeroInitModelPermutesOnly) {
  FlowConfig cfg = vector_config(4, 3);
  cfg.final_bias = 0.0;
  FlowModel<double> model(cfg);
  Rng rng(7);
  auto x = oracle::random_tensor<double>({2, 4}, rng);
  auto open = flow_forward(model, x, Gate::open);
  auto closed = flow_forward(model, x, Gate::closed);
  EXPECT_EQ(open.z, closed.z);
  for (double v : open.logdet) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(flow_inverse(model, open.z, Gate::open), x);
}

TEST(Flow, HandComposedTwoBlocks) {
  FlowConfig cfg = vector_config(2, 2);
  cfg.final_bias = 0.0;
  FlowModel<double> model(cfg);
  const double a1 = 0.3, b1 = 0.2, a2 = 0.7, b2 = 0.05;
  set_constant_subnets(model, {{a1, b1}, {a2, b2}});
  // For d = 2 the only permutation that changes u1 is the swap.
  ASSERT_EQ(model.permutations()[0].forward, (std::vector<std::size_t>{1, 0}));
  const double x1 = 0.4, x2 = -1.1;
  auto out = flow_forward(model, Tensor<double>({1, 2}, {x1, x2}), Gate::open);
  const double y1 = x2 * std::exp(a1) + b1;
  EXPECT_NEAR(out.z[0], y1, 1e-15);
  EXPECT_NEAR(out.z[1], x1 * std::exp(a2) + b2, 1e-15);
  EXPECT_NEAR(out.logdet[0], a1 + a2, 1e-15);
}

TEST(Flow, InverseRoundTrip) {
  for (const auto& arch : architectures()) {
    auto model = random_model(arch.cfg, 8);
    Rng rng(8);
    auto x = oracle::random_tensor<double>({6, model.dim()}, rng);
    for (Gate c : {Gate::closed, Gate::open}) {
      auto z = flow_forward(model, x, c).z;
      EXPECT_LT(max_abs_diff(flow_inverse(model, z, c), x), 1e-5) << arch.name;
    }
  }
}

TEST(Flow, FloatRoundTrip) {
  auto model = random_model(image_config(4), 9).cast<float>();
  Rng rng(9);
  auto x = oracle::random_tensor<float>({3, 48}, rng, 0, 1);
  auto z = flow_forward(model, x, Gate::open).z;
  auto back = flow_inverse(model, z, Gate::open);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-5);
}

TEST(Flow, LogDetMatchesNumericJacobian) {
  for (std::size_t d : {2u, 3u, 4u, 5u, 6u}) {
    for (bool shared : {false, true}) {
      auto model = random_model(vector_config(d, 4, shared, d), 100 + d);
      Rng rng(d);
      for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> x(d);
        for (double& v : x) v = uniform(rng, -1, 1);
        const double analytic = flow_forward(model, Tensor<double>({1, d}, x), Gate::open).logdet[0];
        const double numeric = oracle::log_abs_det(oracle::flow_jacobian(model, x, Gate::open), d);
        EXPECT_LT(oracle::rel_err(analytic, numeric), 1e-3) << "d=" << d << " analytic " << analytic;
      }
    }
  }
}

TEST(Flow, LogDetNonNegativeAndSelfConsistent) {
  for (const auto& arch : architectures()) {
    auto model = random_model(arch.cfg, 10);
    Rng rng(10);
    auto x = oracle::random_tensor<double>({8, model.dim()}, rng);
    auto out = flow_forward(model, x, Gate::open);
    auto ll = log_likelihood(model, x, Gate::open);
    for (std::size_t r = 0; r < 8; ++r) {
      EXPECT_GE(out.logdet[r], 0.0);
      const double base = gaussian_log_density(out.z.row(r));
      EXPECT_NEAR(ll[r], base + out.logdet[r], 1e-9);
      EXPECT_GE(ll[r], base);
    }
  }
}

TEST(GaussianLogDensity, Examples) {
  EXPECT_NEAR(gaussian_log_density(std::vector<double>{0, 0}), -1.837877, 1e-6);
  EXPECT_NEAR(gaussian_log_density(std::vector<double>{1}), -1.418939, 1e-6);
  // Random z against a long-double evaluation.
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> z(50);
    long double sq = 0;
    for (double& v : z) {
      v = uniform(rng, -4, 4);
      sq += static_cast<long double>(v) * v;
    }
    const long double ref = -25.0L * std::log(2.0L * 3.14159265358979323846264338327950288L) - sq / 2;
    EXPECT_NEAR(gaussian_log_density(z), static_cast<double>(ref), 1e-9);
  }
}

TEST(LogLikelihood, OriginExamples) {
  auto model = random_model(vector_config(2), 12);
  Tensor<double> zero({1, 2});
  EXPECT_NEAR(log_likelihood(model, zero, Gate::closed)[0], -1.837877, 1e-6);
  FlowConfig cfg = vector_config(2);
  cfg.final_bias = 0.0;
  FlowModel<double> id(cfg);
  EXPECT_NEAR(log_likelihood(id, zero, Gate::open)[0], -1.837877, 1e-6);
  EXPECT_NEAR(nll_loss(id, zero), 1.837877, 1e-6);
}

TEST(Nll, EmptyBatchRejected) {
  FlowModel<double> model(vector_config(2));
  EXPECT_THROW(nll_loss(model, Tensor<double>({0, 2})), ContractError);
  EXPECT_THROW(nll_with_gradients(model, Tensor<double>({0, 2})), ContractError);
}

TEST(Nll, ShapeMismatchRejected) {
  FlowModel<double> model(vector_config(4));
  EXPECT_THROW(flow_forward(model, Tensor<double>({2, 3}), Gate::open), DimensionError);
}

TEST(Nll, GradientMatchesFiniteDifferences) {
  std::vector<FlowConfig> cfgs{vector_config(2), vector_config(5, 3, true)};
  FlowConfig img = image_config(2);
  img.input_shape = {2, 3, 3};
  img.subnet.hidden = {2};
  cfgs.push_back(img);
  for (const auto& cfg : cfgs) {
    auto model = random_model(cfg, 13);
    Rng rng(13);
    auto batch = oracle::random_tensor<double>({4, model.dim()}, rng);
    auto [loss, grads] = nll_with_gradients(model, batch);
    EXPECT_NEAR(loss, nll_loss(model, batch), 1e-12);
    std::vector<double> analytic;
    for (const auto& g : grads) analytic.insert(analytic.end(), g.data().begin(), g.data().end());
    auto numeric = finite_diff_grad(
        [&](std::span<const double> p) {
          FlowModel<double> copy = model;
          copy.set_flat_parameters(p);
          return nll_loss(copy, batch);
        },
        model.flat_parameters(), 1e-6);
    ASSERT_EQ(analytic.size(), numeric.size());
    double scale = 0;
    for (double g : numeric) scale = std::max(scale, std::fabs(g));
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      // Relative error, with an absolute floor for coordinates whose gradient is ~0.
      EXPECT_LE(std::fabs(analytic[i] - numeric[i]), 1e-3 * std::max(std::fabs(numeric[i]), 1e-3 * scale))
          << "param " << i;
    }
  }
}

TEST(Nll, ClosedGateHasNoParameterGradient) {
  auto model = random_model(vector_config(4), 14);
  Rng rng(14);
  auto batch = oracle::random_tensor<double>({3, 4}, rng);
  auto [loss, grads] = nll_with_gradients(model, batch, Gate::closed);
  EXPECT_NEAR(loss, nll_loss(model, batch, Gate::closed), 1e-12);
  for (const auto& g : grads)
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Train, LossDecreasesOnBlob) {
  FlowModel<double> model(vector_config(2, 2, false, 1));
  Rng rng(15);
  Tensor<double> data({256, 2});
  for (double& v : data.data()) v = 0.5 + 0.05 * standard_normal(rng);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 50;
  cfg.batch_size = 64;
  cfg.adam.lr = 1e-3;
  const double before = nll_loss(model, data);
  auto result = train(model, data, cfg);
  ASSERT_EQ(result.losses.size(), 50u);
  EXPECT_LT(nll_loss(model, data), before);
}

TEST(Train, TwoClusterDeskRunImproves) {
  FlowConfig fc = vector_config(2, 2, false, 2);
  fc.subnet.hidden = {32, 32};
  FlowModel<float> model(fc);
  Rng rng(16);
  Tensor<float> data({2000, 2});
  for (std::size_t r = 0; r < 2000; ++r) {
    data(r, 0) = static_cast<float>((r % 2 ? 0.2 : 0.1) + 0.02 * standard_normal(rng));
    data(r, 1) = static_cast<float>(0.1 + 0.02 * standard_normal(rng));
  }
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.steps_per_epoch = 50;
  cfg.batch_size = 64;
  const double before = nll_loss(model, data);
  train(model, data, cfg);
  const double after = nll_loss(model, data);
  EXPECT_LT(after, 0.9 * before);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  FlowModel<double> model(vector_config(3));
  const auto before = model.flat_parameters();
  TrainConfig cfg;
  cfg.epochs = 0;
  auto result = train(model, Tensor<double>({10, 3}, 0.5), cfg);
  EXPECT_TRUE(result.losses.empty());
  EXPECT_EQ(model.flat_parameters(), before);
}

TEST(Train, SameSeedSameCurve) {
  Rng rng(17);
  auto data = oracle::random_tensor<double>({100, 2}, rng, 0, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 5;
  cfg.batch_size = 16;
  cfg.seed = 99;
  FlowModel<double> a(vector_config(2)), b(vector_config(2));
  EXPECT_EQ(train(a, data, cfg).losses, train(b, data, cfg).losses);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
}

TEST(Train, NonFiniteLossAborts) {
  FlowModel<double> model(vector_config(2));
  Tensor<double> data({4, 2}, std::numeric_limits<double>::infinity());
  TrainConfig cfg;
  cfg.batch_size = 2;
  try {
    train(model, data, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("norm"), std::string::npos);
  }
}
