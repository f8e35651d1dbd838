#include <gtest/gtest.h>

#include <random>

#include "r2b/gating.hpp"

using namespace r2b;

namespace {

template <typename T>
Ten<T> random_tensor(std::vector<int64_t> shape, std::mt19937& rng, double lo = -1, double hi = 1) {
  Ten<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
NodeP<T> sum_node(const NodeP<T>& x) {
  Ten<T> v({1});
  for (int64_t i = 0; i < x->value.numel(); ++i) v[0] += x->value[i];
  return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < p->value.numel(); ++i) p->grad[i] += self.grad[0];
  });
}

}  // namespace

TEST(Gate, HalfAtZeroParameters) {
  // with all weights and biases zero the pre-sigmoid activation is 0
  std::mt19937 rng(41);
  auto g = GatingParams<double>::init(6, 4, 8, rng);
  for (auto& p : g.params())
    if (p != g.slope)
      for (auto& v : p->value.data) v = 0;
  auto x = random_tensor<double>({3, 6, 2, 2}, rng);
  auto out = gate_forward(x, g);
  ASSERT_EQ(out.shape, (std::vector<int64_t>{3, 4}));
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.5);
}

TEST(Gate, OutputStrictlyInsideUnitInterval) {
  std::mt19937 rng(42);
  auto g = GatingParams<double>::init(8, 5, 8, rng);
  auto x = random_tensor<double>({4, 8, 3, 3}, rng, -5, 5);
  auto out = gate_forward(x, g);
  for (int64_t i = 0; i < out.numel(); ++i) {
    EXPECT_GT(out[i], 0.0);
    EXPECT_LT(out[i], 1.0);
  }
}

TEST(Gate, LargeBiasSaturatesTowardOne) {
  std::mt19937 rng(43);
  auto g = GatingParams<double>::init(4, 3, 8, rng);
  for (auto& v : g.b2->value.data) v = 10.0;
  auto x = random_tensor<double>({2, 4, 2, 2}, rng);
  auto out = gate_forward(x, g);
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_GT(out[i], 0.95);
}

TEST(Gate, BottleneckWidthCeil) {
  std::mt19937 rng(44);
  auto a = GatingParams<float>::init(64, 64, 8, rng);
  EXPECT_EQ(a.w1->value.dim(0), 8);
  auto b = GatingParams<float>::init(9, 9, 8, rng);
  EXPECT_EQ(b.w1->value.dim(0), 2);  // ceil(9/8)
  auto c = GatingParams<float>::init(3, 3, 8, rng);
  EXPECT_EQ(c.w1->value.dim(0), 1);
}

TEST(Gate, DependsOnSampleContent) {
  std::mt19937 rng(45);
  auto g = GatingParams<double>::init(6, 6, 2, rng);
  Ten<double> x({2, 6, 2, 2});
  for (int64_t i = 0; i < x.numel() / 2; ++i) x[i] = 1.0;
  for (int64_t i = x.numel() / 2; i < x.numel(); ++i) x[i] = -1.0;
  auto out = gate_forward(x, g);
  bool differs = false;
  for (int64_t o = 0; o < 6; ++o)
    if (std::abs(out.at2(0, o) - out.at2(1, o)) > 1e-9) differs = true;
  EXPECT_TRUE(differs);
}

TEST(Gate, BatchPermutationEquivariant) {
  std::mt19937 rng(46);
  auto g = GatingParams<double>::init(5, 4, 4, rng);
  auto x = random_tensor<double>({3, 5, 3, 3}, rng);
  Ten<double> xp(x.shape);
  const int64_t per = 5 * 9;
  const int perm[3] = {2, 0, 1};
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t i = 0; i < per; ++i) xp[n * per + i] = x[perm[n] * per + i];
  auto out = gate_forward(x, g);
  auto outp = gate_forward(xp, g);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t o = 0; o < 4; ++o) EXPECT_NEAR(outp.at2(n, o), out.at2(perm[n], o), 1e-12);
}

TEST(Gate, InputChannelMismatchThrows) {
  std::mt19937 rng(47);
  auto g = GatingParams<double>::init(6, 4, 8, rng);
  auto x = random_tensor<double>({1, 5, 2, 2}, rng);
  EXPECT_THROW(gate_forward(x, g), std::invalid_argument);
}

TEST(Gate, FiniteDifferenceGradients) {
  std::mt19937 rng(48);
  auto g = GatingParams<double>::init(6, 4, 2, rng);
  auto x = make_param(random_tensor<double>({2, 6, 3, 3}, rng));
  auto build = [&] { return sum_node(gate(x, g)); };
  std::vector<NodeP<double>> params = g.params();
  params.push_back(x);
  EXPECT_LT(finite_diff_check<double>(build, params, 1e-6), 1e-5);
}

TEST(Rescale, GammaTimesGateHandValues) {
  // gamma = 2 and gate = 0.5 cancel to a net factor of 1
  Ten<double> conv({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Ten<double> g({1, 1}, {0.5});
  auto out = rescale(conv, std::vector<double>{2.0}, g);
  for (int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], conv[i]);
}

TEST(Rescale, OrderOfFactorsIrrelevant) {
  std::mt19937 rng(49);
  auto conv = random_tensor<double>({2, 3, 2, 2}, rng);
  std::vector<double> gamma{0.5, 1.5, 2.0};
  auto g = random_tensor<double>({2, 3}, rng, 0.1, 0.9);
  // applying gamma first then the gate equals the fused call
  Ten<double> staged = conv;
  const int64_t inner = 4;
  for (int64_t i = 0; i < staged.numel(); ++i) {
    const int64_t nc = i / inner;
    staged[i] *= gamma[static_cast<size_t>(nc % 3)];
    staged[i] *= g[nc];
  }
  auto fused = rescale(conv, gamma, g);
  for (int64_t i = 0; i < staged.numel(); ++i) EXPECT_NEAR(fused[i], staged[i], 1e-12);
}

TEST(Rescale, ShapeChecks) {
  Ten<double> conv({1, 2, 2, 2}, 1.0);
  Ten<double> g({1, 2}, 0.5);
  EXPECT_THROW(rescale(conv, std::vector<double>{1.0}, g), std::invalid_argument);
  Ten<double> gbad({2, 2}, 0.5);
  EXPECT_THROW(rescale(conv, std::vector<double>{1.0, 1.0}, gbad), std::invalid_argument);
}
