#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "gradcheck.hpp"
#include "nbv/nbvnet.hpp"
#include "test_util.hpp"

using namespace nbv;
using namespace nbv::net;

namespace {

Tensor filled(Shape s, double v) { return Tensor(std::move(s), v); }

void set_all(NbvNet& net, double v) {
  for (Parameter* p : net.parameters()) std::fill(p->value.begin(), p->value.end(), v);
}

}  // namespace

TEST(Shapes, VariantFourFiveFlattensTo4096) {
  const NbvNet net = build_variant("4-5", 3, DropoutStart::None, 1);
  EXPECT_EQ(net.flattened_width(), 4096u);
  EXPECT_EQ(net.output_width(), 3u);
}

TEST(Shapes, VariantThreeXFlattensTo512) {
  for (const char* v : {"3-3", "3-5"}) {
    EXPECT_EQ(build_variant(v, 3, DropoutStart::None, 1).flattened_width(), 512u) << v;
  }
  EXPECT_EQ(build_variant("4-3", 14, DropoutStart::None, 1).flattened_width(), 4096u);
}

TEST(Shapes, ThreeThreeLayerList) {
  const auto layers = variant_layers("3-3", 3, DropoutStart::None);
  std::vector<std::string> got;
  for (const auto& l : layers) got.push_back(describe(l));
  const std::vector<std::string> expected = {
      "C(10,3,1)", "ReLU", "P(2)", "C(12,3,1)", "ReLU",  "P(2)",   "C(8,3,1)", "ReLU",
      "P(2)",      "Flatten", "FC(1024)", "ReLU", "FC(500)", "ReLU", "FC(3)",    "Tanh"};
  EXPECT_EQ(got, expected);
  const NbvNet net = build_variant("3-3", 3, DropoutStart::None, 1);
  // Stored shapes agree with symbolic propagation.
  Shape s = net.input_shape();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    s = propagate(layers[i], s);
    EXPECT_EQ(s, net.shapes()[i]) << i;
  }
  EXPECT_EQ(net.shapes()[10], Shape{1024});
  EXPECT_EQ(net.shapes()[12], Shape{500});
}

TEST(Shapes, DropoutPlacement) {
  auto count = [](DropoutStart d) {
    std::size_t n = 0;
    for (const auto& l : variant_layers("4-5", 3, d)) n += std::holds_alternative<Dropout>(l);
    return n;
  };
  EXPECT_EQ(count(DropoutStart::None), 0u);
  EXPECT_EQ(count(DropoutStart::FullyConnected), 4u);
  EXPECT_EQ(count(DropoutStart::Conv3), 6u);
  EXPECT_EQ(count(DropoutStart::Conv1), 8u);
}

TEST(Shapes, Errors) {
  expect_errc(Errc::UnknownVariant, [] { build_variant("5-5", 3, DropoutStart::None, 1); });
  expect_errc(Errc::ShapeMismatch, [] { propagate(FullyConnected{4}, Shape{2, 3, 3, 3}); });
  expect_errc(Errc::ShapeMismatch, [] { propagate(Conv3d{1, 5}, Shape{1, 3, 3, 3}); });
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 1, {8, 0.125});
  expect_errc(Errc::ShapeMismatch, [&] { net.infer(Tensor({1, 1, 9, 8, 8})); });
}

TEST(Init, SeedDeterminesParameters) {
  const VariantOptions small{8, 0.25};
  const NbvNet a = build_variant("3-3", 3, DropoutStart::None, 7, small);
  const NbvNet b = build_variant("3-3", 3, DropoutStart::None, 7, small);
  const NbvNet c = build_variant("3-3", 3, DropoutStart::None, 8, small);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  EXPECT_EQ(pa[0]->value, pb[0]->value);
  EXPECT_NE(pa[0]->value, pc[0]->value);
  // Fan-in bound: first conv has fan-in 27.
  const double bound = std::sqrt(6.0 / 27.0);
  for (double w : pa[0]->value) EXPECT_LE(std::abs(w), bound);
  for (double b0 : pa[1]->value) EXPECT_EQ(b0, 0.0);
}

TEST(Forward, AllOnesConvolution) {
  NbvNet net("conv", {1, 3, 3, 3}, {Conv3d{1, 3}, Flatten{}}, 0);
  set_all(net, 0.5);
  net.parameters()[1]->value[0] = 0.0;
  const Tensor y = net.infer(filled({1, 1, 3, 3, 3}, 1.0));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 13.5);
}

TEST(Forward, PaddedConvolutionCornerSeesEightInputs) {
  NbvNet net("conv", {1, 4, 4, 4}, {Conv3d{1, 3, 1, 1}, Flatten{}}, 0);
  set_all(net, 1.0);
  net.parameters()[1]->value[0] = 0.0;
  const Tensor y = net.infer(filled({1, 1, 4, 4, 4}, 1.0));
  EXPECT_DOUBLE_EQ(y[0], 8.0);        // corner
  EXPECT_DOUBLE_EQ(y[1 + 4 + 16], 27.0);  // interior
}

TEST(Forward, MaxPoolPicksMaximum) {
  NbvNet net("pool", {1, 2, 2, 2}, {MaxPool3d{2}, Flatten{}}, 0);
  Tensor x({1, 1, 2, 2, 2}, {0.1, -3, 0.7, 0.2, 0.5, 0.69, -1, 0});
  EXPECT_DOUBLE_EQ(net.infer(x)[0], 0.7);
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 3, {8, 0.25});
  set_all(net, 0.0);
  const Tensor y = net.infer(gradcheck::random_input(net.input_shape(), 2, 1));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Forward, BatchEqualsPerSample) {
  const NbvNet net = build_variant("4-5", 3, DropoutStart::None, 3, {16, 0.25});
  const Tensor batch = gradcheck::random_input(net.input_shape(), 3, 2);
  const Tensor y = net.infer(batch);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor one({1, 1, 16, 16, 16});
    std::copy(batch.sample(b).begin(), batch.sample(b).end(), one.data());
    const Tensor yb = net.infer(one);
    // Batched products may sum in a different order.
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(yb[k], y[b * 3 + k], 1e-12);
  }
}

TEST(Forward, TanhOutputStrictlyBounded) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 3, {8, 0.25});
  // Large weights drive the pre-activation far into saturation.
  for (Parameter* p : net.parameters())
    for (double& w : p->value) w *= 50.0;
  const Tensor y = net.infer(gradcheck::random_input(net.input_shape(), 4, 9));
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_GT(y[i], -1.0);
    EXPECT_LT(y[i], 1.0);
  }
}

TEST(Forward, InferMatchesEvalForward) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::Conv1, 3, {8, 0.25});
  const Tensor x = gradcheck::random_input(net.input_shape(), 2, 4);
  net.set_mode(Mode::Eval);
  EXPECT_EQ(net.forward(x).values(), net.infer(x).values());
}

TEST(Loss, MseAndGradient) {
  const Tensor target({1, 3}, {0, 0, 0});
  const Tensor pred({1, 3}, {1, -1, 1});
  const LossResult r = mse_loss(target, pred);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  EXPECT_DOUBLE_EQ(r.gradient[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.gradient[1], -2.0 / 3.0);
  EXPECT_EQ(mse_loss(pred, pred).loss, 0.0);
  expect_errc(Errc::ShapeMismatch, [&] { mse_loss(target, Tensor({1, 2})); });
}

TEST(Loss, Mae) {
  const Tensor target({1, 3}, {0, 0, 0});
  EXPECT_NEAR(mae(target, Tensor({1, 3}, {0.3, -0.3, 0.3})), 0.3, 1e-15);
  EXPECT_EQ(mae(target, target), 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Tensor a({2, 3}), b({2, 3});
    for (std::size_t j = 0; j < 6; ++j) {
      a[j] = rng.uniform(-1, 1);
      b[j] = rng.uniform(-1, 1);
    }
    EXPECT_LE(mae(a, b), std::sqrt(3.0 * mse_loss(a, b).loss) + 1e-12);
  }
}

TEST(Backward, StaleCacheWithoutForward) {
  NbvNet net("fc", {4}, {FullyConnected{2}}, 0);
  expect_errc(Errc::StaleCache, [&] { net.backward(Tensor({1, 2})); });
}

TEST(Backward, ZeroLossGradientGivesZeroGradients) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 3, {8, 0.25});
  net.forward(gradcheck::random_input(net.input_shape(), 2, 4));
  net.zero_grad();
  net.backward(Tensor({2, 3}));
  for (const Parameter* p : net.parameters())
    for (double g : p->grad) EXPECT_EQ(g, 0.0);
}

TEST(Backward, FullyConnectedOuterProduct) {
  NbvNet net("fc", {3}, {FullyConnected{2}}, 5);
  const Tensor x({1, 3}, {0.5, -2.0, 1.5});
  const Tensor g({1, 2}, {0.25, -1.0});
  net.forward(x);
  net.zero_grad();
  net.backward(g);
  const auto p = net.parameters();
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p[0]->grad[o * 3 + i], g[o] * x[i]);
    EXPECT_DOUBLE_EQ(p[1]->grad[o], g[o]);
  }
}

TEST(Backward, MaxPoolRoutesTiesToFirst) {
  NbvNet net("pool", {1, 2, 2, 2}, {Conv3d{1, 1}, MaxPool3d{2}, Flatten{}}, 0);
  set_all(net, 1.0);
  net.parameters()[1]->value[0] = 0.0;
  // Equal maxima at positions 1 and 5; the weight gradient is the routed input.
  const Tensor x({1, 1, 2, 2, 2}, {0, 2, 1, 0, 0, 2, 0, 0});
  net.forward(x);
  net.zero_grad();
  net.backward(Tensor({1, 1}, {1.0}));
  EXPECT_DOUBLE_EQ(net.parameters()[0]->grad[0], 2.0);
  EXPECT_DOUBLE_EQ(net.parameters()[1]->grad[0], 1.0);
}

// One small net per layer type; a trainable layer sits in front of each
// parameter-free layer so its input gradient is exercised.
TEST(GradientCheck, EveryLayerType) {
  struct Case {
    const char* name;
    Shape in;
    std::vector<LayerSpec> layers;
    Mode mode = Mode::Eval;
  };
  const std::vector<Case> cases = {
      {"conv", {2, 5, 5, 5}, {Conv3d{3, 3}, Flatten{}}},
      {"conv-stride-pad", {1, 5, 5, 5}, {Conv3d{2, 3, 1, 1}, Conv3d{2, 3, 2, 1}, Flatten{}}},
      {"pool", {1, 6, 6, 6}, {Conv3d{2, 3, 1, 1}, MaxPool3d{2}, Flatten{}, FullyConnected{2}}},
      {"relu", {6}, {FullyConnected{5}, ReLU{}, FullyConnected{3}}},
      {"tanh", {6}, {FullyConnected{5}, Tanh{}, FullyConnected{3}}},
      {"flatten", {1, 3, 3, 3}, {Conv3d{2, 2}, Flatten{}, FullyConnected{3}}},
      {"dropout", {8}, {FullyConnected{6}, Dropout{0.5}, FullyConnected{3}}, Mode::Train},
  };
  for (const Case& c : cases) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      NbvNet net(c.name, c.in, c.layers, seed);
      net.set_mode(c.mode);
      const auto r = gradcheck::check(net, gradcheck::random_input(c.in, 2, 100 + seed), seed);
      EXPECT_EQ(r.failed, 0u) << c.name << " seed " << seed << " worst " << r.worst << " at "
                              << r.worst_where;
    }
  }
}

TEST(GradientCheck, ReducedThreeThree) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 11, {8, 0.25});
  const auto r = gradcheck::check(net, gradcheck::random_input(net.input_shape(), 2, 12), 11);
  EXPECT_EQ(r.failed, 0u) << r.worst << " at " << r.worst_where;
  EXPECT_GT(r.checked, 500u);
}

TEST(Dropout, ExpectationMatchesEval) {
  NbvNet net("drop", {4}, {Dropout{0.5}}, 3);
  net.set_mode(Mode::Train);
  const Tensor x({1, 4}, {1.0, -0.5, 2.0, 0.25});
  std::vector<double> sum(4, 0.0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Tensor y = net.forward(x);
    for (std::size_t k = 0; k < 4; ++k) sum[k] += y[k];
  }
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(sum[k] / n / x[k], 1.0, 0.02) << k;
  }
}

TEST(Dropout, InactiveInEval) {
  NbvNet net("drop", {4}, {Dropout{0.5}}, 3);
  const Tensor x({1, 4}, {1.0, -0.5, 2.0, 0.25});
  EXPECT_EQ(net.forward(x).values(), x.values());
}

TEST(Adam, FirstStepIsMinusLearningRate) {
  std::vector<double> w{0.0}, g{1.0}, m{0.0}, v{0.0};
  adam_update(w, g, m, v, 0.001, 1);
  EXPECT_NEAR(w[0], -0.001, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> w{0.3, -0.2}, g{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
  adam_update(w, g, m, v, 0.01, 1);
  EXPECT_EQ(w[0], 0.3);
  EXPECT_EQ(w[1], -0.2);
}

TEST(Adam, StepBoundedByLearningRate) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w{0.0}, m{0.0}, v{0.0};
    const std::vector<double> g{rng.uniform(-10, 10)};
    double prev = 0.0;
    for (std::uint64_t t = 1; t <= 2; ++t) {
      adam_update(w, g, m, v, 0.01, t);
      EXPECT_LE(std::abs(w[0] - prev), 0.01 * (1 + 1e-6));
      prev = w[0];
    }
  }
}

namespace {

struct ToyData {
  std::vector<std::vector<float>> inputs, targets;
  std::vector<Example> examples;
};

ToyData toy_data(std::size_t n, std::size_t side, std::uint64_t seed) {
  ToyData d;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> x(side * side * side);
    for (float& v : x) v = rng.uniform() < 0.3 ? 1.0f : (rng.uniform() < 0.5 ? -1.0f : 0.0f);
    d.inputs.push_back(x);
    d.targets.push_back({float(rng.uniform(-0.8, 0.8)), float(rng.uniform(-0.8, 0.8)),
                         float(rng.uniform(-0.8, 0.8))});
  }
  for (std::size_t i = 0; i < n; ++i) d.examples.push_back({d.inputs[i], d.targets[i]});
  return d;
}

}  // namespace

TEST(Train, OverfitsSingleSample) {
  const ToyData d = toy_data(1, 8, 3);
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 4, {8, 0.25});
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 1;
  const auto log = train(net, d.examples, d.examples, cfg);
  ASSERT_EQ(log.size(), 200u);
  EXPECT_LT(log.back().val_mse, 0.01 * log.front().train_mse);
}

TEST(Train, ZeroLearningRateKeepsEverythingConstant) {
  const ToyData d = toy_data(6, 8, 5);
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 4, {8, 0.25});
  const std::vector<double> before = net.parameters()[0]->value;
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 4;
  const auto log = train(net, std::span(d.examples).first(4), std::span(d.examples).last(2), cfg);
  EXPECT_EQ(net.parameters()[0]->value, before);
  for (const auto& r : log) {
    EXPECT_EQ(r.train_mse, log[0].train_mse);
    EXPECT_EQ(r.val_mse, log[0].val_mse);
    EXPECT_EQ(r.val_mae, log[0].val_mae);
  }
}

TEST(Train, SameSeedIsBitIdentical) {
  const ToyData d = toy_data(10, 8, 6);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.chunk_size = 3;
  cfg.seed = 9;
  cfg.dropout_start = DropoutStart::Conv2;
  auto run = [&] {
    NbvNet net = build_variant("3-3", 3, DropoutStart::Conv2, 4, {8, 0.25});
    const auto log = train(net, std::span(d.examples).first(8), std::span(d.examples).last(2), cfg);
    return std::make_pair(log, net.parameters()[0]->value);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i) {
    EXPECT_EQ(a.first[i].train_mse, b.first[i].train_mse);
    EXPECT_EQ(a.first[i].val_mse, b.first[i].val_mse);
  }
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, ChunkingDoesNotChangeTheBatchGradient) {
  const ToyData d = toy_data(8, 8, 7);
  auto run = [&](int chunk) {
    NbvNet net = build_variant("3-3", 3, DropoutStart::None, 4, {8, 0.25});
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 6;
    cfg.chunk_size = chunk;
    train(net, std::span(d.examples).first(6), std::span(d.examples).last(2), cfg);
    return net.parameters()[0]->value;
  };
  const auto a = run(1), b = run(6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Train, RejectsEmptySets) {
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 4, {8, 0.25});
  const ToyData d = toy_data(2, 8, 1);
  expect_errc(Errc::EmptyDataset, [&] { train(net, {}, d.examples, TrainConfig{}); });
}

TEST(WeightFile, RoundTripIsExactAfterFloatRounding) {
  const auto dir = scratch_dir("weights");
  NbvNet net = build_variant("3-3", 3, DropoutStart::Conv3, 21, {8, 0.25});
  save_weights(net, dir / "w.nbvw");
  const NbvNet loaded = load_weights(dir / "w.nbvw");
  EXPECT_EQ(loaded.name(), net.name());
  net.round_to_float32();
  const Tensor x = gradcheck::random_input(net.input_shape(), 2, 3);
  EXPECT_EQ(net.infer(x).values(), loaded.infer(x).values());
}

TEST(WeightFile, FullSizeRoundTrip) {
  const auto dir = scratch_dir("weights_full");
  NbvNet net = build_variant("3-3", 3, DropoutStart::None, 2);
  save_weights(net, dir / "w.nbvw");
  NbvNet loaded = build_variant("3-3", 3, DropoutStart::None, 99);
  load_weights_into(loaded, dir / "w.nbvw");
  net.round_to_float32();
  const auto a = net.parameters(), b = loaded.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(WeightFile, TruncationAndCorruption) {
  const auto dir = scratch_dir("weights_bad");
  const NbvNet net = build_variant("3-3", 3, DropoutStart::None, 21, {8, 0.25});
  save_weights(net, dir / "w.nbvw");
  std::ifstream in(dir / "w.nbvw", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  for (std::size_t len : {std::size_t(0), std::size_t(3), std::size_t(10), bytes.size() / 2,
                          bytes.size() - 1}) {
    try {
      load_weights(write("t.nbvw", bytes.substr(0, len)));
      ADD_FAILURE() << "loaded a truncated file of " << len << " bytes";
    } catch (const Error& e) {
      EXPECT_TRUE(e.code() == Errc::IoError || e.code() == Errc::FormatVersionMismatch)
          << len << ": " << e.what();
    }
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  expect_errc(Errc::ChecksumMismatch, [&] { load_weights(write("c.nbvw", flipped)); });
  std::string version = bytes;
  version[4] = 9;
  expect_errc(Errc::FormatVersionMismatch, [&] { load_weights(write("v.nbvw", version)); });
  expect_errc(Errc::IoError, [&] { load_weights(dir / "missing.nbvw"); });
}

TEST(WeightFile, ArchitectureMismatch) {
  const auto dir = scratch_dir("weights_shape");
  save_weights(build_variant("3-3", 3, DropoutStart::None, 1), dir / "w.nbvw");
  NbvNet other = build_variant("4-5", 3, DropoutStart::None, 1);
  expect_errc(Errc::ShapeMismatch, [&] { load_weights_into(other, dir / "w.nbvw"); });
}
