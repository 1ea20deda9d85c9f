#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"

using namespace fusionlab;
using namespace fusionlab::testing;

namespace {

CrossModalAttention random_attention(ParamStore& store, const std::string& name, std::size_t d_ctx,
                                     std::size_t d_text, std::size_t d_k, std::size_t max_len,
                                     Rng& rng) {
  init_cross_modal_attention(store, name, d_ctx, d_text, d_k, max_len, rng);
  store[name + ".align_bias"] = parameter(random_tensor({max_len}, rng, -0.5, 0.5));
  return CrossModalAttention::bind(store, name);
}

// Mean over rows of text ⊙ (align[:, 0] * mean_rows(text·W_v) + bias), the
// closed form of one step whose context is a single zero row.
std::vector<double> zero_context_step(const std::vector<std::vector<double>>& text,
                                      const CrossModalAttention& p,
                                      std::vector<std::vector<double>>& next) {
  const std::size_t L = text.size(), d = text[0].size();
  const Tensor& wv = p.w_v.value();
  std::vector<double> mean_v(d, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      for (std::size_t q = 0; q < d; ++q) v += text[l][q] * wv.at(q, j);
      mean_v[j] += v / static_cast<double>(L);
    }
  next.assign(L, std::vector<double>(d));
  std::vector<double> pooled(d, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t j = 0; j < d; ++j) {
      next[l][j] = text[l][j] * (p.align.value().at(l, 0) * mean_v[j] + p.align_bias.value()[l]);
      pooled[j] += next[l][j] / static_cast<double>(L);
    }
  return pooled;
}

}  // namespace

TEST(EarlyConcat, WidthIsSumOfDims) {
  std::vector<Var> xs(3, constant(Tensor({2, 768})));
  EXPECT_EQ(fuse_early_concat(xs).dim(1), 2304u);
}

TEST(EarlyConcat, SingleModalityIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_TRUE(bit_identical(fuse_early_concat<float>({constant(x)}).value(), x));
}

TEST(EarlyConcat, MaskedModalityGivesZeroSegment) {
  Rng rng(2);
  const Tensor y = fuse_early_concat<float>({constant(random_tensor({2, 3}, rng)),
                                             constant(Tensor::zeros({2, 2}))})
                       .value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 3; j < 5; ++j) EXPECT_EQ(y.at(b, j), 0.0f);
}

TEST(EarlyProduct, OnesAndZeros) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 4}, rng);
  EXPECT_TRUE(bit_identical(
      fuse_early_product<float>({constant(Tensor::ones({2, 4})), constant(x)}).value(), x));
  const Tensor z =
      fuse_early_product<float>({constant(x), constant(Tensor::zeros({2, 4}))}).value();
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

TEST(EarlyProduct, CommutativeAndAssociative) {
  Rng rng(4);
  const Var a = constant(random_tensor({3, 5}, rng)), b = constant(random_tensor({3, 5}, rng)),
            c = constant(random_tensor({3, 5}, rng));
  const Tensor abc = fuse_early_product<float>({a, b, c}).value();
  const Tensor cab = fuse_early_product<float>({c, a, b}).value();
  const Tensor nested = fuse_early_product<float>({fuse_early_product<float>({a, b}), c}).value();
  for (std::size_t i = 0; i < abc.size(); ++i) {
    const double scale = std::max(1e-30, static_cast<double>(std::abs(abc[i])));
    EXPECT_LE(std::abs(abc[i] - cab[i]) / scale, 1e-6);
    EXPECT_LE(std::abs(abc[i] - nested[i]) / scale, 1e-6);
  }
}

TEST(LateWeighted, EqualWeightsTakeTheMean) {
  const Var probs = constant(Tensor::matrix({{0.2f, 0.4f, 0.6f}}));
  const Var w = constant(Tensor::zeros({3}));
  EXPECT_NEAR(fuse_late_weighted(probs, w).value().item(), 0.4f, 1e-6);
}

TEST(LateWeighted, DominantWeightSelectsModality) {
  const Var probs = constant(Tensor::matrix({{0.2f, 0.9f, 0.6f}, {0.7f, 0.1f, 0.3f}}));
  const Var w = constant(Tensor::vector({0.0f, 40.0f, 0.0f}));
  const Tensor y = fuse_late_weighted(probs, w).value();
  EXPECT_NEAR(y[0], 0.9f, 1e-6);
  EXPECT_NEAR(y[1], 0.1f, 1e-6);
}

TEST(LateWeighted, WidthMismatchThrows) {
  EXPECT_THROW(fuse_late_weighted(constant(Tensor({2, 3})), constant(Tensor({2}))),
               DimensionError);
}

TEST(LateStacked, IdentityOnFirstModalitySelectsIt) {
  const Var probs = constant(Tensor::matrix({{0.2f, 0.9f}, {0.7f, 0.1f}}));
  const Dense stage2{constant(Tensor::matrix({{1}, {0}})), constant(Tensor::zeros({1}))};
  const Tensor y = fuse_late_stacked(probs, stage2).value();
  EXPECT_EQ(y.at(0, 0), 0.2f);
  EXPECT_EQ(y.at(1, 0), 0.7f);
}

TEST(Attention, ZeroKeyDimIsConfigError) {
  ParamStore store;
  Rng rng(5);
  EXPECT_THROW(init_cross_modal_attention(store, "a", 3, 4, 0, 5, rng), ConfigError);
}

TEST(Attention, SingleKeyGetsAllWeight) {
  ParamStore store;
  Rng rng(6);
  const auto p = random_attention(store, "a", 3, 4, 2, 5, rng);
  const Tensor text = random_tensor({1, 4}, rng);
  const auto r = cross_modal_attend(constant(text), constant(random_tensor({3, 3}, rng)), p);
  EXPECT_EQ(r.weights.shape(), (Shape{3, 1}));
  for (float w : r.weights.value().data()) EXPECT_EQ(w, 1.0f);
  // Every context row then attends to the single V row; aligned row 0 is
  // (sum of align[0, 0:3]) * V + bias[0].
  const Tensor v = matmul(constant(text), p.w_v).value();
  double a_sum = 0.0;
  for (std::size_t t = 0; t < 3; ++t) a_sum += p.align.value().at(0, t);
  const Tensor out = r.contextualised.value();
  for (std::size_t j = 0; j < 4; ++j) {
    const double expected = text[j] * (a_sum * v[j] + p.align_bias.value()[0]);
    EXPECT_NEAR(out[j], expected, 1e-5);
  }
}

TEST(Attention, SingleContextRowIsADistribution) {
  ParamStore store;
  Rng rng(7);
  const auto p = random_attention(store, "a", 3, 4, 2, 5, rng);
  const auto r = cross_modal_attend(constant(random_tensor({4, 4}, rng)),
                                    constant(random_tensor({1, 3}, rng)), p);
  EXPECT_EQ(r.weights.shape(), (Shape{1, 4}));
  double s = 0.0;
  for (float w : r.weights.value().data()) s += w;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Attention, ZeroContextGivesUniformWeights) {
  ParamStore store;
  Rng rng(8);
  const auto p = random_attention(store, "a", 3, 4, 2, 5, rng);
  const auto r = cross_modal_attend(constant(random_tensor({5, 4}, rng)),
                                    constant(Tensor::zeros({2, 3})), p);
  for (float w : r.weights.value().data()) EXPECT_FLOAT_EQ(w, 0.2f);
}

TEST(Attention, RowsSumToOne) {
  ParamStore store;
  Rng rng(9);
  const auto p = random_attention(store, "a", 3, 4, 2, 6, rng);
  const auto r = cross_modal_attend(constant(random_tensor({5, 4}, rng, -2, 2)),
                                    constant(random_tensor({6, 3}, rng, -2, 2)), p);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += r.weights.value().at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, ScalingQueryAndKeyScalesLogits) {
  ParamStore store;
  Rng rng(10);
  auto p = random_attention(store, "a", 3, 4, 2, 5, rng);
  const Var text = constant(random_tensor({4, 4}, rng));
  const Var ctx = constant(random_tensor({2, 3}, rng));
  const Tensor w1 = cross_modal_attend(text, ctx, p).weights.value();
  const float c = 2.5f;
  auto scaled = p;
  scaled.w_q = constant(scale(p.w_q, std::sqrt(c)).value());
  scaled.w_k = constant(scale(p.w_k, std::sqrt(c)).value());
  const Tensor w2 = cross_modal_attend(text, ctx, scaled).weights.value();
  // log w_ij - log w_i0 is the logit gap, which must grow by exactly c.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 1; j < 4; ++j) {
      const double g1 = std::log(w1.at(i, j)) - std::log(w1.at(i, 0));
      const double g2 = std::log(w2.at(i, j)) - std::log(w2.at(i, 0));
      EXPECT_NEAR(g2, c * g1, 1e-4 * (1.0 + std::abs(g2)));
    }
}

TEST(Attention, LongerThanMaxLenIsDataError) {
  ParamStore store;
  Rng rng(11);
  const auto p = random_attention(store, "a", 3, 4, 2, 3, rng);
  EXPECT_THROW(cross_modal_attend(constant(Tensor({4, 4})), constant(Tensor({1, 3})), p),
               DataError);
}

TEST(MoHate, NoContextsMeanPoolsText) {
  Rng rng(12);
  const Tensor t0 = random_tensor({3, 4}, rng), t1 = random_tensor({2, 4}, rng);
  const Tensor y = fuse_mo_hate<float>({constant(t0), constant(t1)}, {}, {}).value();
  EXPECT_EQ(y.shape(), (Shape{2, 4}));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(y.at(0, j), (t0.at(0, j) + t0.at(1, j) + t0.at(2, j)) / 3.0, 1e-6);
    EXPECT_NEAR(y.at(1, j), (t1.at(0, j) + t1.at(1, j)) / 2.0, 1e-6);
  }
}

TEST(MoHate, OrderChangesTheOutput) {
  Rng rng(13);
  ParamStore store;
  const auto pa = random_attention(store, "a", 3, 4, 2, 5, rng);
  const auto pv = random_attention(store, "v", 5, 4, 2, 5, rng);
  const Var text = constant(random_tensor({4, 4}, rng));
  const Var audio = constant(random_tensor({3, 3}, rng));
  const Var vision = constant(random_tensor({1, 5}, rng));
  const Tensor av = fuse_mo_hate<float>({text}, {{audio}, {vision}}, {pa, pv}).value();
  const Tensor va = fuse_mo_hate<float>({text}, {{vision}, {audio}}, {pv, pa}).value();
  EXPECT_GT(max_abs_diff(av, va), 1e-6f);
}

TEST(MoHate, MaskedContextsMatchHandOracle) {
  Rng rng(14);
  ParamStore store;
  const auto pa = random_attention(store, "a", 3, 4, 2, 5, rng);
  const auto pv = random_attention(store, "v", 5, 4, 2, 5, rng);
  const Tensor text = random_tensor({4, 4}, rng);
  const Var zero_audio = constant(Tensor::zeros({1, 3}));
  const Var zero_vision = constant(Tensor::zeros({1, 5}));
  const Tensor y =
      fuse_mo_hate<float>({constant(text)}, {{zero_audio}, {zero_vision}}, {pa, pv}).value();
  std::vector<std::vector<double>> seq(4, std::vector<double>(4)), next;
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t j = 0; j < 4; ++j) seq[l][j] = text.at(l, j);
  zero_context_step(seq, pa, next);
  const auto pooled = zero_context_step(next, pv, seq);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[j], pooled[j], 1e-5);
  // Repeated calls are byte-identical.
  const Tensor again =
      fuse_mo_hate<float>({constant(text)}, {{zero_audio}, {zero_vision}}, {pa, pv}).value();
  EXPECT_TRUE(bit_identical(y, again));
}

TEST(MoHate, ParameterCountMustMatchContexts) {
  const Var text = constant(Tensor({2, 4}));
  EXPECT_THROW(fuse_mo_hate<float>({text}, {{text}}, {}), ContractError);
}

TEST(FusionTag, ParsesAndPrints) {
  for (auto t : {FusionTag::EarlyConcat, FusionTag::EarlyProduct, FusionTag::LateWeighted,
                 FusionTag::LateStacked, FusionTag::MoHate})
    EXPECT_EQ(parse_fusion_tag(to_string(t)), t);
  EXPECT_THROW(parse_fusion_tag("average"), ConfigError);
}
