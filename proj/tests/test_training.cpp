#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace fusionlab;
using namespace fusionlab::testing;

namespace {

TrainConfig fast_train(std::size_t epochs, std::uint64_t seed = 2) {
  TrainConfig t;
  t.lr = 3e-3f;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.seed = seed;
  return t;
}

ModelConfig narrow(const DatasetManifest& m, FusionTag tag, std::uint64_t seed = 1) {
  ModelConfig c = config_for(m, tag);
  c.lstm_hidden = 8;
  c.head_hidden = 8;
  c.attn_dim = 4;
  c.max_seq_len = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientFromZeroMomentsChangesNothing) {
  TrainConfig cfg;
  std::vector<float> p{0.5f, -1.0f};
  const std::vector<float> g{0.0f, 0.0f};
  AdamMoments mom{Tensor::zeros({2}), Tensor::zeros({2})};
  for (std::uint64_t t = 1; t <= 5; ++t) adam_update(p, g, mom, t, cfg);
  EXPECT_EQ(p[0], 0.5f);
  EXPECT_EQ(p[1], -1.0f);
  for (float v : mom.m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  TrainConfig cfg;
  std::vector<float> p{0.0f};
  const std::vector<float> g{0.0f};
  AdamMoments mom{Tensor::vector({0.4f}), Tensor::vector({0.09f})};
  adam_update(p, g, mom, 3, cfg);
  EXPECT_FLOAT_EQ(mom.m[0], 0.4f * 0.9f);
  EXPECT_FLOAT_EQ(mom.v[0], 0.09f * 0.999f);
}

TEST(Adam, FirstStepIsLrTimesSignForm) {
  TrainConfig cfg;
  cfg.lr = 0.01f;
  for (float g : {0.3f, -2.0f, 1e-6f}) {
    std::vector<float> p{1.0f};
    AdamMoments mom{Tensor::zeros({1}), Tensor::zeros({1})};
    adam_update(p, std::vector<float>{g}, mom, 1, cfg);
    // m_hat = g and v_hat = g^2 after one step.
    const double expected = 1.0 - 0.01 * g / (std::abs(static_cast<double>(g)) + cfg.adam_eps);
    EXPECT_NEAR(p[0], expected, 1e-7) << g;
  }
}

TEST(Adam, ConstantGradientStepTendsToLrSign) {
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  for (float g : {0.7f, -0.05f}) {
    std::vector<float> p{0.0f};
    AdamMoments mom{Tensor::zeros({1}), Tensor::zeros({1})};
    double before = 0.0;
    for (std::uint64_t t = 1; t <= 10000; ++t) {
      before = p[0];
      adam_update(p, std::vector<float>{g}, mom, t, cfg);
    }
    const double step = p[0] - before;
    EXPECT_NEAR(step, -cfg.lr * (g > 0 ? 1.0 : -1.0), 0.05 * cfg.lr) << g;
  }
}

TEST(Adam, StepCounterStartsAtOne) {
  TrainConfig cfg;
  std::vector<float> p{0.0f};
  AdamMoments mom{Tensor::zeros({1}), Tensor::zeros({1})};
  EXPECT_THROW(adam_update(p, std::vector<float>{1.0f}, mom, 0, cfg), ContractError);
}

TEST(Adam, SingleSampleLossDecreasesForSmallLr) {
  TrainConfig cfg;
  cfg.lr = 1e-5f;
  const auto m = tiny_manifest(3);
  Rng order(0);
  const auto idx = m.split_indices(Split::Train);
  const Batch one = build_batch(m, {idx.front()});
  for (int init = 0; init < 20; ++init) {
    auto c = tiny_config(m, FusionTag::EarlyConcat, 100 + init);
    c.dropout = 0.0f;
    ModelState model = build_model(c);
    Rng unused(0);
    const auto loss = [&] {
      return bce_with_logits(forward_logits(c, model.params, one, false, unused), one.labels);
    };
    Var before = loss();
    backward(before);
    Adam adam(cfg);
    adam.step(model.params, nullptr);
    EXPECT_LT(loss().value().item(), before.value().item()) << "init " << init;
  }
}

TEST(EarlyStopping, PatienceOneDecreasingStopsAtTwo) {
  EarlyStopper s(1);
  EXPECT_TRUE(s.observe(0.8));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.observe(0.7));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(EarlyStopping, TiesMoveBestForwardButDoNotResetPatience) {
  EarlyStopper s(2);
  s.observe(0.5);
  s.observe(0.6);
  EXPECT_TRUE(s.observe(0.6));
  EXPECT_EQ(s.best_epoch(), 3u);
  EXPECT_FALSE(s.should_stop());
  s.observe(0.6);
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 4u);
}

TEST(EarlyStopping, ZeroPatienceIsConfigError) {
  EXPECT_THROW(EarlyStopper(0), ConfigError);
}

TEST(Fit, PatienceOneReturnsEpochOneState) {
  const auto m = tiny_manifest(4);
  const auto model = build_model(tiny_config(m, FusionTag::EarlyConcat, 1));
  TrainConfig cfg = fast_train(10);
  cfg.patience = 1;
  std::vector<ModelState> seen;
  double f1 = 1.0;
  const ValidationFn decreasing = [&](const ModelState& s) {
    seen.push_back(clone(s));
    MacroMetrics mm;
    mm.f1 = f1;
    f1 -= 0.1;
    return mm;
  };
  const auto r = fusionlab::detail::fit(clone(model), m, cfg, batch_loss, decreasing, nullptr, 0);
  ASSERT_EQ(r.log.epochs.size(), 2u);
  EXPECT_EQ(r.log.best_epoch, 1u);
  ASSERT_EQ(seen.size(), 2u);
  for (const auto& [name, p] : r.best.params) {
    EXPECT_TRUE(bit_identical(p.value(), seen[0].params.at(name).value())) << name;
  }
  EXPECT_FALSE(bit_identical(r.best.params.at("head.fc1.weight").value(),
                             seen[1].params.at("head.fc1.weight").value()));
}

TEST(Fit, NonFiniteLossNamesTheBatch) {
  const auto m = tiny_manifest(5);
  auto model = build_model(tiny_config(m, FusionTag::EarlyConcat, 1));
  model.params.at("head.fc2.bias").mutable_value()[0] = std::nanf("");
  try {
    train(model, m, fast_train(3));
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1, batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("first id"), std::string::npos) << msg;
  }
}

TEST(Fit, EmptySplitsAreDataErrors) {
  auto m = tiny_manifest(6);
  for (auto& r : m.records)
    if (r.split == Split::Val) r.split = Split::Train;
  const auto model = build_model(tiny_config(m, FusionTag::EarlyConcat, 1));
  EXPECT_THROW(train(model, m, fast_train(2)), DataError);
}

TEST(Train, SameSeedSameLogAndCheckpoint) {
  const auto m = gen_separable(40, default_synthetic_modalities(), "text", 3);
  for (auto tag : {FusionTag::EarlyConcat, FusionTag::LateStacked, FusionTag::MoHate}) {
    const auto model = build_model(narrow(m, tag));
    const auto a = train(model, m, fast_train(4));
    const auto b = train(model, m, fast_train(4));
    ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
      EXPECT_EQ(a.log.epochs[i].train_loss, b.log.epochs[i].train_loss);
      EXPECT_EQ(a.log.epochs[i].val_macro_f1, b.log.epochs[i].val_macro_f1);
    }
    EXPECT_EQ(a.log.best_epoch, b.log.best_epoch);
    for (const auto& [name, p] : a.best.params)
      EXPECT_TRUE(bit_identical(p.value(), b.best.params.at(name).value())) << name;
  }
}

TEST(Train, BestEpochHasHighestValidationF1) {
  const auto m = gen_separable(60, default_synthetic_modalities(), "text", 4);
  const auto r = train(build_model(narrow(m, FusionTag::EarlyConcat)), m, fast_train(15));
  double best = 0.0;
  for (const auto& e : r.log.epochs)
    if (e.epoch == r.log.best_epoch) best = e.val_macro_f1;
  for (const auto& e : r.log.epochs) EXPECT_GE(best, e.val_macro_f1);
  // The returned state reproduces the logged validation score.
  EXPECT_EQ(split_metrics(r.best, m, Split::Val, 0.5f).f1, best);
}

TEST(Train, SeparableSmallSetFitsWithin200Epochs) {
  std::vector<ModalitySpec> mods{{"text", 8, false, "t"}, {"vision", 8, false, "v"}};
  const auto m = gen_separable(32, mods, "text", 5);
  const auto r = train(build_model(narrow(m, FusionTag::EarlyConcat)), m, fast_train(200));
  double lowest = INFINITY;
  for (const auto& e : r.log.epochs) lowest = std::min(lowest, e.train_loss);
  EXPECT_LT(lowest, 0.05);
}

TEST(LateStacked, StageTwoReadsOneProbabilityPerModality) {
  const auto m = tiny_manifest(7);
  const auto model = build_model(tiny_config(m, FusionTag::LateStacked, 1));
  EXPECT_EQ(model.params.at("stack.weight").shape(), (Shape{3, 1}));
}

TEST(LateStacked, StageOneFrozenDuringStageTwo) {
  const auto m = gen_separable(40, default_synthetic_modalities(), "text", 8);
  const auto r = train(build_model(narrow(m, FusionTag::LateStacked)), m, fast_train(5));
  ASSERT_TRUE(r.stage1.has_value());
  bool stack_moved = false;
  for (const auto& [name, p] : r.best.params) {
    const Tensor& before = r.stage1->params.at(name).value();
    if (name.rfind("stack.", 0) == 0) {
      stack_moved = stack_moved || !bit_identical(before, p.value());
    } else {
      EXPECT_TRUE(bit_identical(before, p.value())) << name;
    }
  }
  EXPECT_TRUE(stack_moved);
  EXPECT_EQ(r.log.best_stage, 2);
  EXPECT_EQ(r.log.epochs.front().stage, 1);
  EXPECT_EQ(r.log.epochs.back().stage, 2);
}

TEST(LateStacked, PlantedSignalGetsDominantWeight) {
  const auto m = gen_separable(200, default_synthetic_modalities(), "text", 9);
  const auto r = train(build_model(narrow(m, FusionTag::LateStacked)), m, fast_train(60));
  const Tensor& w = r.best.params.at("stack.weight").value();
  const std::size_t text = m.modality_index("text");
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (k != text) {
      EXPECT_GT(std::abs(w[text]), std::abs(w[k])) << m.modalities[k].name;
    }
  }
}

TEST(TrainLogFile, WallTimesOnlyOnHashLines) {
  TempDir dir("log");
  const auto m = tiny_manifest(10);
  const auto r = train(build_model(tiny_config(m, FusionTag::EarlyConcat, 1)), m, fast_train(3));
  write_train_log(dir / "log.jsonl", r.log);
  std::ifstream is(dir / "log.jsonl");
  std::string line;
  std::size_t json_lines = 0, best_lines = 0;
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) == 0) {
      EXPECT_NE(line.find("wall_ms"), std::string::npos);
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    EXPECT_FALSE(j.contains("wall_ms"));
    ++json_lines;
    best_lines += j.at("best").get<bool>();
  }
  EXPECT_EQ(json_lines, r.log.epochs.size());
  EXPECT_EQ(best_lines, 1u);
}

TEST(TrainConfigValidation, RejectsBadValues) {
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.lr = 0.0f;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.patience = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}
