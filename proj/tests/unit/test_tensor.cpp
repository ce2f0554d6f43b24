#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "funmatch/autodiff.hpp"
#include "funmatch/model.hpp"
#include "test_support.hpp"

namespace funmatch {
namespace {

using testing::grad_check;
using testing::random_tensor;

constexpr double kMaxRel = 1e-4;

TEST(Tensor, ElementCountMatchesShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(element_count({}), 1u);
  EXPECT_EQ(element_count({5, 0, 2}), 0u);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ReshapeKeepsValues) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[4], 5.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape<double> tape(false);
  Tensor<double> a({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Var c = tape.matmul(tape.constant(a), tape.constant(eye));
  EXPECT_EQ(tape.value(c), a);
}

TEST(Matmul, HandArithmetic) {
  Tape<double> tape(false);
  const Var c = tape.matmul(tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4})),
                            tape.constant(Tensor<double>({2, 1}, {1, 1})));
  EXPECT_EQ(tape.value(c), Tensor<double>({2, 1}, {3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> tape(false);
  try {
    tape.matmul(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 3})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2,3]"), std::string::npos) << what;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const auto r = grad_check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                            [](Tape<double>& t, const std::vector<Var>& v) {
                              return t.reduce_sum(t.matmul(v[0], v[1]));
                            });
  EXPECT_LT(r.max_rel_error, kMaxRel) << r.worst;
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
  std::mt19937_64 rng(2);
  Tape<double> tape(false);
  const Var y = tape.conv2d(tape.constant(random_tensor({2, 5, 5, 3}, rng)), tape.constant(Tensor<double>({3, 3, 3, 4})),
                            1, Padding::same);
  for (double v : tape.value(y).values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(tape.value(y).shape(), (Shape{2, 5, 5, 4}));
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(3);
  const Tensor<double> x = random_tensor({1, 6, 5, 1}, rng);
  Tensor<double> k({3, 3, 1, 1});
  k[4] = 1.0;
  Tape<double> tape(false);
  const Var y = tape.conv2d(tape.constant(x), tape.constant(k), 1, Padding::same);
  EXPECT_EQ(tape.value(y), x);
}

TEST(Conv2d, OutputExtents) {
  Tape<double> tape(false);
  const auto run = [&](std::size_t h, int stride, Padding pad) {
    return tape.value(tape.conv2d(tape.constant(Tensor<double>({1, h, h, 2})), tape.constant(Tensor<double>({3, 3, 2, 1})),
                                  stride, pad))
        .shape();
  };
  EXPECT_EQ(run(7, 1, Padding::same), (Shape{1, 7, 7, 1}));
  EXPECT_EQ(run(7, 2, Padding::same), (Shape{1, 4, 4, 1}));
  EXPECT_EQ(run(7, 1, Padding::valid), (Shape{1, 5, 5, 1}));
  EXPECT_EQ(run(7, 2, Padding::valid), (Shape{1, 3, 3, 1}));
}

TEST(Conv2d, RejectsUnsupportedKernelAndStride) {
  Tape<double> tape(false);
  const Var x = tape.constant(Tensor<double>({1, 5, 5, 1}));
  EXPECT_THROW(tape.conv2d(x, tape.constant(Tensor<double>({5, 5, 1, 1})), 1, Padding::same), ConfigError);
  EXPECT_THROW(tape.conv2d(x, tape.constant(Tensor<double>({3, 3, 1, 1})), 3, Padding::same), ConfigError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int stride : {1, 2}) {
    for (Padding pad : {Padding::same, Padding::valid}) {
      const auto r = grad_check({random_tensor({1, 5, 5, 2}, rng), random_tensor({3, 3, 2, 3}, rng)},
                                [&](Tape<double>& t, const std::vector<Var>& v) {
                                  const Var y = t.conv2d(v[0], v[1], stride, pad);
                                  // Weight the outputs so every position gets a distinct upstream gradient.
                                  Tensor<double> w(t.value(y).shape());
                                  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i));
                                  return t.reduce_sum(t.mul(y, t.constant(w)));
                                });
      EXPECT_LT(r.max_rel_error, kMaxRel) << "stride " << stride << ": " << r.worst;
    }
  }
}

TEST(Elementwise, LogSoftmaxOfZerosIsMinusLogThree) {
  Tape<double> tape(false);
  const Var y = tape.log_softmax(tape.constant(Tensor<double>({3})), 0);
  for (double v : tape.value(y).values()) EXPECT_NEAR(v, -std::log(3.0), 1e-15);
}

TEST(Elementwise, LogSoftmaxIsStableForHugeLogits) {
  Tape<float> tape(false);
  const Var y = tape.log_softmax(tape.constant(Tensor<float>({1, 3}, {1000.0f, 0.0f, -1000.0f})), 1);
  EXPECT_TRUE(tape.value(y).all_finite());
  EXPECT_NEAR(tape.value(y)[0], 0.0f, 1e-6f);
}

TEST(Elementwise, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor({8, 7}, rng, -20.0, 20.0);
  const Tensor<double> lp = log_softmax(x, 1);
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += std::exp(lp[r * 7 + c]);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Elementwise, AxisOutOfRangeIsAnError) {
  Tape<double> tape(false);
  EXPECT_THROW(tape.log_softmax(tape.constant(Tensor<double>({2, 3})), 2), ShapeError);
}

TEST(Elementwise, ReluOfNegativePlusReluIsAbs) {
  std::mt19937_64 rng(6);
  const Tensor<double> x = random_tensor({20}, rng);
  Tape<double> tape(false);
  const Var xv = tape.constant(x);
  const Var sum = tape.add(tape.relu(xv), tape.relu(tape.scale(xv, -1.0)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(tape.value(sum)[i], std::abs(x[i]));
}

TEST(Elementwise, AddRequiresExactShape) {
  Tape<double> tape(false);
  EXPECT_THROW(tape.add(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({3}))), ShapeError);
}

TEST(Elementwise, GlobalAvgPoolAndFlattenShapes) {
  Tape<double> tape(false);
  const Var x = tape.constant(Tensor<double>::filled({2, 3, 4, 5}, 2.0));
  EXPECT_EQ(tape.value(tape.global_avg_pool(x)), Tensor<double>::filled({2, 5}, 2.0));
  EXPECT_EQ(tape.value(tape.flatten(x)).shape(), (Shape{2, 60}));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  struct Case {
    const char* name;
    Shape shape;
    std::function<Var(Tape<double>&, Var)> op;
  };
  const std::vector<Case> cases = {
      {"relu", {4, 5}, [](Tape<double>& t, Var x) { return t.relu(x); }},
      {"scale", {4, 5}, [](Tape<double>& t, Var x) { return t.scale(x, -2.5); }},
      {"add", {4, 5}, [](Tape<double>& t, Var x) { return t.add(x, t.mul(x, x)); }},
      {"global_avg_pool", {2, 3, 3, 4}, [](Tape<double>& t, Var x) { return t.global_avg_pool(x); }},
      {"flatten", {2, 3, 2}, [](Tape<double>& t, Var x) { return t.flatten(x); }},
      {"log_softmax axis 1", {3, 6}, [](Tape<double>& t, Var x) { return t.log_softmax(x, 1); }},
      {"log_softmax axis 0", {3, 6}, [](Tape<double>& t, Var x) { return t.log_softmax(x, 0); }},
  };
  for (const Case& c : cases) {
    const auto r = grad_check({random_tensor(c.shape, rng)}, [&](Tape<double>& t, const std::vector<Var>& v) {
      const Var y = c.op(t, v[0]);
      Tensor<double> w(t.value(y).shape());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(1.3 * static_cast<double>(i));
      return t.reduce_mean(t.mul(y, t.constant(w)));
    });
    EXPECT_LT(r.max_rel_error, kMaxRel) << c.name << ": " << r.worst;
  }
}

TEST(Elementwise, ReduceMeanOfLogSoftmaxGradient) {
  std::mt19937_64 rng(8);
  const auto r = grad_check({random_tensor({4, 5}, rng)}, [](Tape<double>& t, const std::vector<Var>& v) {
    return t.reduce_mean(t.log_softmax(v[0], 1));
  });
  EXPECT_LT(r.max_rel_error, kMaxRel) << r.worst;
}

TEST(Backward, SumGivesAllOnes) {
  Tape<double> tape;
  const Var w = tape.variable(Tensor<double>({2, 3}, {1, -2, 3, 0.5, 9, -7}));
  const auto g = tape.backward(tape.reduce_sum(w));
  EXPECT_EQ(g[w], Tensor<double>::filled({2, 3}, 1.0));
}

TEST(Backward, ZeroTimesFunctionGivesZeros) {
  std::mt19937_64 rng(9);
  Tape<double> tape;
  const Var w = tape.variable(random_tensor({3, 3}, rng));
  const auto g = tape.backward(tape.scale(tape.reduce_sum(tape.mul(w, w)), 0.0));
  for (double v : g[w].values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, UnusedVariableGetsExactZero) {
  Tape<double> tape;
  const Var used = tape.variable(Tensor<double>({2}, {1, 2}));
  const Var unused = tape.variable(Tensor<double>({4}, {1, 2, 3, 4}));
  const auto g = tape.backward(tape.reduce_sum(used));
  EXPECT_EQ(g[unused], Tensor<double>({4}));
}

TEST(Backward, NonScalarLossIsAnError) {
  Tape<double> tape;
  const Var w = tape.variable(Tensor<double>({2}));
  EXPECT_THROW(tape.backward(w), ShapeError);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  const Var c = tape.constant(Tensor<double>({2}, {1, 2}));
  const Var w = tape.variable(Tensor<double>({2}, {3, 4}));
  const auto g = tape.backward(tape.reduce_sum(tape.mul(c, w)));
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_EQ(g[c], Tensor<double>({2}));
  EXPECT_EQ(g[w], Tensor<double>({2}, {1, 2}));
}

TEST(Backward, FullCnnGradientsMatchFiniteDifferences) {
  ModelConfig cfg;
  cfg.input_resolution = 6;
  cfg.input_channels = 2;
  cfg.classes = 3;
  cfg.layers = {LayerSpec::conv(3, 2), LayerSpec::relu(), LayerSpec::conv(4, 1), LayerSpec::relu(),
                LayerSpec::global_avg_pool(), LayerSpec::dense(3)};
  const Parameters<double> params = build<double>(cfg, 11);
  std::mt19937_64 rng(12);
  std::vector<Tensor<double>> inputs;
  for (const auto& p : params) inputs.push_back(p.value);
  // Non-zero biases so ReLUs are not all at the same operating point.
  for (auto& t : inputs) {
    if (t.rank() == 1) t = random_tensor(t.shape(), rng, -0.2, 0.2);
  }
  const Tensor<double> x = random_tensor({2, 6, 6, 2}, rng);
  const auto r = grad_check(inputs, [&](Tape<double>& t, const std::vector<Var>& v) {
    const Var logits = forward(t, cfg, v, t.constant(x));
    return t.reduce_mean(t.log_softmax(logits, 1));
  });
  EXPECT_LT(r.max_rel_error, kMaxRel) << r.worst;
}

TEST(Tape, IdenticalOpSequencesAreBitwiseIdentical) {
  std::mt19937_64 rng(13);
  const Tensor<float> x = random_tensor({2, 8, 8, 3}, rng).cast<float>();
  const Tensor<float> k = random_tensor({3, 3, 3, 5}, rng).cast<float>();
  const auto run = [&] {
    Tape<float> tape;
    const Var kv = tape.variable(k);
    const Var y = tape.reduce_mean(tape.relu(tape.conv2d(tape.constant(x), kv, 2, Padding::same)));
    return std::make_pair(tape.value(y), tape.backward(y)[kv]);
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, ReplayVisitsEveryOpOnce) {
  Tape<double> tape;
  const Var w = tape.variable(Tensor<double>({2}, {1, 2}));
  const Var a = tape.scale(w, 2.0);
  const Var b = tape.add(a, a);
  const Var loss = tape.reduce_sum(b);
  EXPECT_EQ(tape.op_count(), 3u);
  // d/dw sum(2w + 2w) = 4: a is used twice, its gradient accumulates once per use.
  EXPECT_EQ(tape.backward(loss)[w], Tensor<double>::filled({2}, 4.0));
}

}  // namespace
}  // namespace funmatch
