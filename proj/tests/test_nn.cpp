#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gradcheck.hpp"
#include "seaseg/nn.hpp"

namespace seaseg {
namespace {

using testing::random_tensor;
using testing::rel_error;
using testing::LayerFn;
using testing::layer_grad_error;
using testing::randomize;

constexpr double kGradTol = 1e-4;

void zero_all(ParamStore<double>& store) {
  for (const auto& name : store.names()) {
    auto v = store.values(name);
    std::fill(v.begin(), v.end(), 0.0);
  }
}

Tensor<double> eval_layer(ParamStore<double>& store, const LayerFn& layer, const Tensor<double>& x) {
  Tape<double> tape;
  ParamBinder<double> binder(tape, store, false);
  LayerContext<double> ctx{binder};
  return layer(ctx, tape.leaf(x)).value();
}

TEST(HeNormal, ZeroMeanAndVarianceFromFanIn) {
  const int n = 100000;
  Tensor<double> t = he_normal_init<double>(Shape{n}, 8, 7);
  double mean = 0.0;
  for (std::int64_t i = 0; i < n; ++i) mean += t[i];
  mean /= n;
  double var = 0.0;
  for (std::int64_t i = 0; i < n; ++i) var += (t[i] - mean) * (t[i] - mean);
  const double sd = std::sqrt(var / n);
  EXPECT_LT(std::abs(mean), 3 * 0.5 / std::sqrt(double(n)));
  EXPECT_NEAR(sd, 0.5, 0.5 * 0.02);
}

TEST(HeNormal, SameSeedIdentical) {
  EXPECT_EQ(he_normal_init<float>(Shape{4, 3, 3, 3}, 27, 11), he_normal_init<float>(Shape{4, 3, 3, 3}, 27, 11));
  EXPECT_FALSE(he_normal_init<float>(Shape{16}, 4, 11) == he_normal_init<float>(Shape{16}, 4, 12));
}

TEST(HeNormal, RejectsNonPositiveFanIn) {
  EXPECT_THROW(he_normal_init<float>(Shape{2}, 0, 1), ValidationError);
}

TEST(ParamStore, PathsUniqueAndShapesFixed) {
  ParamStore<float> store;
  store.add("a.w", Tensor<float>(Shape{2, 3}));
  EXPECT_THROW(store.add("a.w", Tensor<float>(Shape{1})), ValidationError);
  EXPECT_THROW(store.assign("a.w", Tensor<float>(Shape{3, 2})), ShapeError);
  EXPECT_THROW(store.at("missing"), ValidationError);
  store.assign("a.w", Tensor<float>(Shape{2, 3}, 1.5f));
  EXPECT_EQ(store.at("a.w").at(0, 0, 0, 0), 1.5f);
  EXPECT_EQ(store.parameter_count(), 6);
}

TEST(ParamStore, PathSeedIndependentOfCreationOrder) {
  ParamStore<float> a, b;
  init_conv(a, "x", 4, 4, 3, false, 5);
  init_conv(a, "y", 4, 4, 3, false, 5);
  init_conv(b, "y", 4, 4, 3, false, 5);
  init_conv(b, "x", 4, 4, 3, false, 5);
  EXPECT_EQ(a.at("x.w"), b.at("x.w"));
  EXPECT_EQ(a.at("y.w"), b.at("y.w"));
  EXPECT_FALSE(a.at("x.w") == a.at("y.w"));
}

TEST(Cse, ZeroWeightsHalveInput) {
  ParamStore<double> store;
  init_cse(store, "se", 16, 4, 1);
  zero_all(store);
  std::mt19937_64 rng(1);
  Tensor<double> x = random_tensor(Shape{2, 16, 8, 8}, rng);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return cse_forward(ctx, "se", v, 4); }, x);
  ASSERT_EQ(out.shape(), x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out[i], x[i] / 2);
}

TEST(Cse, ZeroInputGivesZero) {
  ParamStore<double> store;
  init_cse(store, "se", 8, 2, 3);
  randomize(store, 4);
  Tensor<double> x(Shape{1, 8, 3, 3});
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return cse_forward(ctx, "se", v, 2); }, x);
  for (std::int64_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Cse, IndivisibleChannelsRejected) {
  ParamStore<double> store;
  EXPECT_THROW(init_cse(store, "se", 10, 4, 1), ValidationError);
  init_cse(store, "se", 8, 4, 1);
  Tensor<double> x(Shape{1, 8, 2, 2});
  EXPECT_THROW(eval_layer(store, [](auto& ctx, auto v) { return cse_forward(ctx, "se", v, 3); }, x),
               ValidationError);
}

TEST(Cse, PreservesSign) {
  ParamStore<double> store;
  init_cse(store, "se", 8, 2, 3);
  randomize(store, 5);
  std::mt19937_64 rng(6);
  Tensor<double> x = random_tensor(Shape{2, 8, 4, 4}, rng);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return cse_forward(ctx, "se", v, 2); }, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(std::signbit(out[i]), std::signbit(x[i]));
    EXPECT_LT(std::abs(out[i]), std::abs(x[i]));
  }
}

TEST(Cse, GradientMatchesFiniteDifferences) {
  ParamStore<double> store;
  init_cse(store, "se", 8, 2, 3);
  randomize(store, 7);
  std::mt19937_64 rng(8);
  EXPECT_LT(layer_grad_error(store, [](auto& ctx, auto v) { return cse_forward(ctx, "se", v, 2); },
                             random_tensor(Shape{2, 8, 3, 3}, rng)),
            kGradTol);
}

TEST(Sse, ZeroConvHalvesInput) {
  ParamStore<double> store;
  init_sse(store, "se", 6, 1);
  zero_all(store);
  std::mt19937_64 rng(2);
  Tensor<double> x = random_tensor(Shape{2, 6, 5, 5}, rng);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return sse_forward(ctx, "se", v); }, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out[i], x[i] / 2);
}

TEST(Sse, SinglePixelInput) {
  ParamStore<double> store;
  init_sse(store, "se", 4, 1);
  randomize(store, 9);
  Tensor<double> x(Shape{1, 4, 1, 1}, std::vector<double>{1.0, -2.0, 0.5, 3.0});
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return sse_forward(ctx, "se", v); }, x);
  ASSERT_EQ(out.shape(), x.shape());
  double z = store.at("se.conv.b")[0];
  for (int c = 0; c < 4; ++c) z += store.at("se.conv.w")[c] * x[c];
  const double s = 1.0 / (1.0 + std::exp(-z));
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[c], x[c] * s, 1e-12);
}

TEST(Sse, PreservesSign) {
  ParamStore<double> store;
  init_sse(store, "se", 8, 3);
  randomize(store, 10);
  std::mt19937_64 rng(11);
  Tensor<double> x = random_tensor(Shape{2, 8, 4, 4}, rng);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return sse_forward(ctx, "se", v); }, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(std::signbit(out[i]), std::signbit(x[i]));
}

TEST(Sse, GradientMatchesFiniteDifferences) {
  ParamStore<double> store;
  init_sse(store, "se", 5, 3);
  randomize(store, 12);
  std::mt19937_64 rng(13);
  EXPECT_LT(layer_grad_error(store, [](auto& ctx, auto v) { return sse_forward(ctx, "se", v); },
                             random_tensor(Shape{2, 5, 4, 3}, rng)),
            kGradTol);
}

TEST(Scse, ZeroGatesSumFusionIsExactIdentity) {
  ParamStore<double> store;
  init_scse(store, "se", 16, 16, 1);
  zero_all(store);
  std::mt19937_64 rng(3);
  Tensor<double> x = random_tensor(Shape{2, 16, 4, 4}, rng);
  SeConfig se{16, SeFusion::kSum};
  Tensor<double> out = eval_layer(store, [&](auto& ctx, auto v) { return scse_forward(ctx, "se", v, se); }, x);
  EXPECT_EQ(out, x);
}

TEST(Scse, MaxFusionWithIdenticalBranches) {
  // Zero weights make both branches x/2.
  ParamStore<double> store;
  init_scse(store, "se", 8, 4, 1);
  zero_all(store);
  std::mt19937_64 rng(4);
  Tensor<double> x = random_tensor(Shape{1, 8, 3, 3}, rng);
  SeConfig se{4, SeFusion::kMax};
  Tensor<double> out = eval_layer(store, [&](auto& ctx, auto v) { return scse_forward(ctx, "se", v, se); }, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out[i], x[i] / 2);
}

TEST(Scse, ShapePreservedForVariousInputs) {
  for (const Shape& shape : {Shape{1, 4, 1, 1}, Shape{3, 4, 7, 5}, Shape{2, 4, 16, 2}}) {
    ParamStore<double> store;
    init_scse(store, "se", 4, 2, 1);
    std::mt19937_64 rng(5);
    SeConfig se{2, SeFusion::kSum};
    Tensor<double> out = eval_layer(store, [&](auto& ctx, auto v) { return scse_forward(ctx, "se", v, se); },
                                    random_tensor(shape, rng));
    EXPECT_EQ(out.shape(), shape);
  }
}

TEST(Scse, GradientMatchesFiniteDifferences) {
  for (SeFusion fusion : {SeFusion::kSum, SeFusion::kMax}) {
    ParamStore<double> store;
    init_scse(store, "se", 4, 2, 3);
    randomize(store, 14);
    std::mt19937_64 rng(15);
    SeConfig se{2, fusion};
    EXPECT_LT(layer_grad_error(store, [&](auto& ctx, auto v) { return scse_forward(ctx, "se", v, se); },
                               random_tensor(Shape{2, 4, 3, 3}, rng)),
              kGradTol);
  }
}

TEST(BasicBlock, ZeroConvsIdentityBnGivesElu) {
  ParamStore<double> store;
  init_basic_block(store, "b", 4, 4, 1, 1);
  for (const auto& name : store.names()) {
    if (name.ends_with(".w")) {
      auto v = store.values(name);
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  std::mt19937_64 rng(16);
  Tensor<double> x = random_tensor(Shape{2, 4, 5, 5}, rng);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return basic_block_forward(ctx, "b", v, 1); }, x);
  for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out[i], x[i] > 0 ? x[i] : std::expm1(x[i]));
}

TEST(BasicBlock, StrideTwoHalvesSpatialSize) {
  ParamStore<double> store;
  init_basic_block(store, "b", 3, 6, 2, 1);
  EXPECT_TRUE(store.contains("b.proj.w"));
  std::mt19937_64 rng(17);
  Tensor<double> out = eval_layer(store, [](auto& ctx, auto v) { return basic_block_forward(ctx, "b", v, 2); },
                                  random_tensor(Shape{2, 3, 8, 6}, rng));
  EXPECT_EQ(out.shape(), (Shape{2, 6, 4, 3}));
}

TEST(BasicBlock, ProjectionPresentIffNeeded) {
  ParamStore<double> a, b, c;
  init_basic_block(a, "b", 4, 4, 1, 1);
  init_basic_block(b, "b", 4, 8, 1, 1);
  init_basic_block(c, "b", 4, 4, 2, 1);
  EXPECT_FALSE(a.contains("b.proj.w"));
  EXPECT_TRUE(b.contains("b.proj.w"));
  EXPECT_TRUE(c.contains("b.proj.w"));
  Tensor<double> x(Shape{1, 4, 4, 4});
  EXPECT_THROW(eval_layer(a, [](auto& ctx, auto v) { return basic_block_forward(ctx, "b", v, 2); }, x),
               ValidationError);
  EXPECT_THROW(init_basic_block(a, "z", 4, 4, 3, 1), ValidationError);
}

TEST(BasicBlock, GradientMatchesFiniteDifferences) {
  for (auto [in_ch, out_ch, stride] : {std::tuple{3, 3, 1}, std::tuple{2, 4, 2}}) {
    ParamStore<double> store;
    init_basic_block(store, "b", in_ch, out_ch, stride, 3);
    randomize(store, 18);
    std::mt19937_64 rng(19);
    EXPECT_LT(layer_grad_error(store, [s = stride](auto& ctx, auto v) { return basic_block_forward(ctx, "b", v, s); },
                               random_tensor(Shape{2, in_ch, 4, 4}, rng)),
              kGradTol);
  }
}

TEST(DecoderBlock, OutputMatchesSkipSpatialSize) {
  ParamStore<double> store;
  init_decoder_block(store, "d", 8, 4, 4, true, 2, 1);
  std::mt19937_64 rng(20);
  Tensor<double> x = random_tensor(Shape{2, 8, 3, 5}, rng);
  Tensor<double> skip = random_tensor(Shape{2, 4, 6, 10}, rng);
  Tape<double> tape;
  ParamBinder<double> binder(tape, store, false);
  LayerContext<double> ctx{binder};
  Var<double> out = decoder_block_forward(ctx, "d", tape.leaf(x), tape.leaf(skip), SeConfig{2});
  EXPECT_EQ(out.shape(), (Shape{2, 4, 6, 10}));
  EXPECT_EQ(tape.count(OpKind::kGate), 2);
}

TEST(DecoderBlock, SpatialMismatchRejected) {
  ParamStore<double> store;
  init_decoder_block(store, "d", 4, 4, 4, false, 2, 1);
  Tape<double> tape;
  ParamBinder<double> binder(tape, store, false);
  LayerContext<double> ctx{binder};
  EXPECT_THROW(decoder_block_forward(ctx, "d", tape.leaf(Tensor<double>(Shape{1, 4, 3, 3})),
                                     tape.leaf(Tensor<double>(Shape{1, 4, 7, 6})), SeConfig{2}),
               ShapeError);
}

TEST(DecoderBlock, EmptySkipReducesToUpsamplePath) {
  ParamStore<double> store;
  init_decoder_block(store, "d", 4, 0, 3, false, 1, 1);
  randomize(store, 21);
  std::mt19937_64 rng(22);
  Tensor<double> x = random_tensor(Shape{2, 4, 3, 3}, rng);

  Tape<double> tape;
  ParamBinder<double> binder(tape, store, false);
  LayerContext<double> ctx{binder};
  Var<double> xv = tape.leaf(x);
  Var<double> out = decoder_block_forward(ctx, "d", xv, tape.leaf(Tensor<double>(Shape{2, 0, 6, 6})), SeConfig{1});

  Var<double> y = upsample_bilinear2x(xv);
  y = elu(batchnorm(conv2d(y, binder("d.conv1.w"), std::nullopt, 1, 1), binder("d.bn1.gamma"),
                    binder("d.bn1.beta"), store.bn_stats("d.bn1"), BnMode::kTrain));
  y = elu(batchnorm(conv2d(y, binder("d.conv2.w"), std::nullopt, 1, 1), binder("d.bn2.gamma"),
                    binder("d.bn2.beta"), store.bn_stats("d.bn2"), BnMode::kTrain));
  EXPECT_EQ(out.value(), y.value());
}

TEST(DecoderBlock, GradientMatchesFiniteDifferences) {
  ParamStore<double> store;
  init_decoder_block(store, "d", 3, 2, 2, true, 1, 3);
  randomize(store, 23);
  std::mt19937_64 rng(24);
  Tensor<double> skip = random_tensor(Shape{2, 2, 4, 4}, rng);
  // The skip enters as a constant here; its gradient path is a plain concat already covered by
  // the op-level checks.
  LayerFn f = [&](LayerContext<double>& ctx, Var<double> v) {
    return decoder_block_forward(ctx, "d", v, ctx.params.tape().leaf(skip), SeConfig{1});
  };
  EXPECT_LT(layer_grad_error(store, f, random_tensor(Shape{2, 3, 2, 2}, rng)), kGradTol);
}

}  // namespace
}  // namespace seaseg
