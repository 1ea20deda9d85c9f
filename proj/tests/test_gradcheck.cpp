#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace fusionlab;
using namespace fusionlab::testing;

TEST(GradientCheck, LinearFunctionIsExact) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  const double err =
      gradient_check([&]<class T>(const BasicVar<T>& v) { return probe(v, w); }, x, kGradEps);
  EXPECT_LE(err, 1e-6);
}

TEST(GradientCheck, ConstantFunctionHasZeroError) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 2}, rng);
  const auto res = gradient_check_detailed(
      [&]<class T>(const BasicVar<T>& v) {
        return add(sum(scale(v, T{0})), constant(BasicTensor<T>::scalar(T{3})));
      },
      x, kGradEps);
  EXPECT_EQ(res.analytic, 0.0);
  EXPECT_LE(res.max_rel_error, 1e-8);
}

TEST(GradientCheck, ComposedMatmulSoftmaxBce) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor w = random_tensor({3, 2}, rng);
    const Tensor v = random_tensor({2, 1}, rng);
    Tensor labels({4});
    for (auto& y : labels.data()) y = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    const double err = gradient_check(
        [&]<class T>(const BasicVar<T>& a) {
          auto s = matmul(softmax_rows(matmul(a, C<T>(w))), C<T>(v));
          return bce_with_logits(s, labels);
        },
        x, kGradEps);
    EXPECT_LE(err, kGradTol) << "trial " << trial;
  }
}

TEST(GradientCheck, NonScalarFunctionIsContractError) {
  const Tensor x({3});
  EXPECT_THROW(gradient_check([]<class T>(const BasicVar<T>& v) { return scale(v, T{2}); }, x,
                              kGradEps),
               ContractError);
}

TEST(GradientCheck, NonPositiveStepIsContractError) {
  const Tensor x({3});
  EXPECT_THROW(gradient_check([]<class T>(const BasicVar<T>& v) { return sum(v); }, x, 0.0f),
               ContractError);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  // relu at an input exactly on the kink: analytic 0, numeric 0.5.
  const Tensor x = Tensor::vector({0.0f});
  const double err = gradient_check(
      []<class T>(const BasicVar<T>& v) { return sum(relu(v)); }, x, kGradEps);
  EXPECT_GT(err, 0.1);
}

TEST(GradientCheck, Float32NumericPathAgreesOnSmoothFunction) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 3}, rng);
  const double err = gradient_check(
      []<class T>(const BasicVar<T>& v) { return sum(tanh(v)); }, x, 1e-2f,
      NumericPrecision::Float32);
  EXPECT_LE(err, 1e-3);
}

// A handful of end-to-end trials per strategy; the acceptance binary runs
// 100 each.
TEST(GradientCheck, TinyModelsEndToEnd) {
  for (auto tag : {FusionTag::EarlyConcat, FusionTag::EarlyProduct, FusionTag::LateWeighted,
                   FusionTag::LateStacked, FusionTag::MoHate}) {
    for (int t = 0; t < 5; ++t) {
      Rng rng(9000 + t);
      const auto trial = tiny_model_trial(tag, rng);
      EXPECT_LE(trial.result.max_rel_error, kGradTol)
          << to_string(tag) << " trial " << t << " param " << trial.param;
    }
  }
}
