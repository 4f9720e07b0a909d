#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "gradcheck.hpp"
#include "zico/zico.hpp"

using namespace zico;

TEST(Ops, ReluClampsNegatives) {
  Tape t;
  const auto y = t.relu(t.constant(Tensor({3}, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(t.value(y), Tensor({3}, {0.0, 0.0, 2.0}));
}

TEST(Ops, IdentityConvolution) {
  Tape t;
  const Tensor w({1, 1, 1, 1}, {1.0});
  const auto y = t.conv2d(t.constant(Tensor({1, 1, 1, 1}, {3.0})), t.parameter(w), {1, 0, 1});
  EXPECT_EQ(t.value(y)[0], 3.0);
}

TEST(Ops, CrossEntropyOfUniformLogits) {
  Tape t;
  const auto loss = t.cross_entropy_loss(t.constant(Tensor({1, 2}, {0.0, 0.0})), std::vector<int>{0});
  EXPECT_NEAR(t.value(loss)[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(t.value(loss)[0], 0.693147, 1e-6);
}

TEST(Ops, ConvOutputExtentFollowsFloorRule) {
  std::mt19937_64 rng(3);
  for (std::size_t h : {1, 2, 5, 8, 9})
    for (std::size_t k : {1, 3, 5})
      for (std::size_t s : {1, 2}) {
        const std::size_t pad = k / 2;
        Tape t;
        const Tensor w({2, 1, k, k});
        const auto y = t.conv2d(t.constant(Tensor({1, 1, h, h})), t.parameter(w), {s, pad, 1});
        EXPECT_EQ(t.value(y).dim(2), (h + 2 * pad - k) / s + 1);
      }
}

TEST(Ops, ShapeErrorsNameTheOp) {
  Tape t;
  const Tensor w({4, 3, 3, 3});
  const auto x = t.constant(Tensor({1, 4, 5, 5}));
  try {
    t.conv2d(x, t.parameter(w), {1, 1, 1});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
  }
  EXPECT_THROW(t.conv2d(x, t.parameter(w), {1, 1, 3}), ShapeError);  // 4 % 3
  EXPECT_THROW(t.residual_add(x, t.constant(Tensor({1, 4, 5, 4}))), ShapeError);
  EXPECT_THROW(t.cross_entropy_loss(t.constant(Tensor({2, 3})), std::vector<int>{0, 3}), ShapeError);
  EXPECT_THROW(t.cross_entropy_loss(t.constant(Tensor({2, 3})), std::vector<int>{0}), ShapeError);
  const Tensor dw({2, 3});
  EXPECT_THROW(t.dense(t.constant(Tensor({1, 4})), t.parameter(dw)), ShapeError);
}

TEST(Backward, LinearGradient) {
  // y = w * x with x = 2 and loss = y.
  Tape t;
  const Tensor w({1, 1}, {-0.7});
  const auto y = t.dense(t.constant(Tensor({1, 1}, {2.0})), t.parameter(w));
  const auto g = t.backward(y);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0][0], 2.0);
}

TEST(Backward, UnreachableParameterGetsZeros) {
  Tape t;
  const Tensor w({1, 1}, {0.5}), unused({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto y = t.dense(t.constant(Tensor({1, 1}, {2.0})), t.parameter(w));
  t.parameter(unused);
  const auto g = t.backward(y);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1], Tensor({3, 2}));
}

TEST(Backward, Errors) {
  Tape empty;
  const auto c = empty.constant(Tensor::scalar(1.0));
  EXPECT_THROW(empty.backward(c), Error);
  Tape t;
  const auto v = t.relu(t.constant(Tensor({2}, {1.0, 2.0})));
  EXPECT_THROW(t.backward(v), ShapeError);
}

TEST(Backward, ResidualAddRoutesGradientUnchanged) {
  Tape t;
  const Tensor a({1, 3}, {1, 2, 3}), b({1, 3}, {4, 5, 6}), w({2, 3}, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6});
  const auto s = t.residual_add(t.parameter(a), t.parameter(b));
  const auto loss = t.cross_entropy_loss(t.dense(s, t.parameter(w)), std::vector<int>{1});
  const auto g = t.backward(loss);
  EXPECT_EQ(g[0], g[1]);
}

TEST(Backward, ReplaysInReverseOrder) {
  Tape t;
  const Tensor w({2, 1, 1, 1}, {1.0, -1.0}), d({2, 2}, {1, 0, 0, 1});
  auto x = t.relu(t.conv2d(t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), t.parameter(w), {}));
  auto loss = t.cross_entropy_loss(t.dense(t.global_avg_pool(x), t.parameter(d)), std::vector<int>{0});
  const std::vector<OpKind> expected{OpKind::conv2d, OpKind::relu, OpKind::global_avg_pool, OpKind::dense,
                                     OpKind::cross_entropy_loss};
  EXPECT_EQ(t.op_kinds(), expected);
  EXPECT_NO_THROW(t.backward(loss));
}

class GradientCheck : public ::testing::TestWithParam<OpKind> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  std::mt19937_64 rng(1000 + static_cast<int>(GetParam()));
  for (int i = 0; i < 25; ++i) {
    auto inst = gradcheck::make_instance(GetParam(), rng);
    EXPECT_LT(gradcheck::max_rel_error(inst), 1e-6) << "instance " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCheck, ::testing::ValuesIn(gradcheck::kAllOps),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Backward, TwoConvNetworkMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> p{gradcheck::random_tensor({2, 2, 4, 4}, rng), gradcheck::random_tensor({3, 2, 3, 3}, rng),
                          gradcheck::random_tensor({4, 3, 3, 3}, rng), gradcheck::random_tensor({3, 4}, rng)};
    auto loss = [&](Tape& t) {
      std::vector<VarId> v;
      for (auto& x : p) v.push_back(t.parameter(x));
      auto h = t.conv2d(v[0], v[1], {1, 1, 1});
      h = t.conv2d(h, v[2], {2, 1, 1});
      return t.cross_entropy_loss(t.dense(t.global_avg_pool(h), v[3]), std::vector<int>{0, 2});
    };
    Tape t;
    const auto g = t.backward(loss(t));
    const auto fd = oracle::finite_difference(p, [&] {
      Tape u;
      return u.value(loss(u))[0];
    });
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g[i].size(); ++j) EXPECT_LT(oracle::rel_err(g[i][j], fd[i][j], gradcheck::kFloor), 1e-6);
  }
}

TEST(Determinism, ForwardBackwardIsBitIdenticalAcrossThreads) {
  Genome g;
  g.stages = {{2, 16, 3, ConvMode::regular, 2}};
  g.input_height = g.input_width = 8;
  const auto graph = compile(g, 5);
  const auto batch = make_batches(graph, 10, 2, 1, 9)[0];
  auto digest = [&] {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& layer : layer_gradients(graph, batch, LossKind::cross_entropy)) h = hash_values(layer, h);
    return h;
  };
  const auto ref = digest();
  std::vector<std::uint64_t> got(4);
  {
    std::vector<std::jthread> ts;
    for (std::size_t i = 0; i < got.size(); ++i) ts.emplace_back([&, i] { got[i] = digest(); });
  }
  for (auto h : got) EXPECT_EQ(h, ref);
}
