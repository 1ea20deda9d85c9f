#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusionlab/metrics.hpp"
#include "fusionlab/model.hpp"

namespace fusionlab {

struct TrainConfig {
  std::size_t batch_size = 32;
  float lr = 1e-4f;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  float threshold = 0.5f;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0f)) throw ConfigError("lr must be > 0");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamMoments {
  Tensor m;
  Tensor v;
};

// One bias-corrected Adam update of `param` in place; t is the 1-based step.
inline void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& mom,
                        std::uint64_t t, const TrainConfig& cfg) {
  if (t == 0) throw ContractError("adam: step counter starts at 1");
  if (grad.size() != param.size() || mom.m.size() != param.size() ||
      mom.v.size() != param.size()) {
    throw DimensionError("adam: parameter, gradient and moment sizes disagree");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  auto m = mom.m.data();
  auto v = mom.v.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
    param[i] = static_cast<float>(param[i] - step);
  }
}

class Adam {
 public:
  explicit Adam(TrainConfig cfg) : cfg_(cfg) {}

  // Updates the parameters accepted by `trainable` from their current grads.
  void step(ParamStore& params, const std::function<bool(const std::string&)>& trainable) {
    ++t_;
    for (auto& [name, p] : params) {
      if (trainable && !trainable(name)) continue;
      auto it = moments_.find(name);
      if (it == moments_.end()) {
        it = moments_
                 .emplace(name, AdamMoments{Tensor::zeros(p.shape()), Tensor::zeros(p.shape())})
                 .first;
      }
      adam_update(p.mutable_value().data(), p.grad().data(), it->second, t_, cfg_);
    }
  }

  std::uint64_t steps() const { return t_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

 private:
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

inline void zero_grads(ParamStore& params) {
  for (auto& [_, p] : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Early stopping

// Tracks the best value of a higher-is-better metric. Only strict
// improvements reset the patience counter; a tie with the best so far moves
// the best epoch forward to the later, longer-trained state.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("patience must be >= 1");
  }

  // Returns true when the current epoch is (one of) the best.
  bool observe(double metric) {
    ++epoch_;
    if (epoch_ == 1 || metric > best_) {
      best_ = metric;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    if (metric == best_) {
      best_epoch_ = epoch_;
      return true;
    }
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = 0.0;
};

// ---------------------------------------------------------------------------
// Scoring helpers shared with evaluation

struct SplitScores {
  std::vector<std::string> ids;
  std::vector<float> scores;
  std::vector<int> labels;
};

inline SplitScores score_split(const ModelState& model, const DatasetManifest& manifest,
                               Split split, std::size_t batch_size = 64) {
  Rng unused(0);
  SplitScores out;
  for (const auto& batch : make_batches(manifest, split, batch_size, unused, false)) {
    const Tensor s = forward(model, batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out.ids.push_back(batch.ids[b]);
      out.scores.push_back(s[b]);
      out.labels.push_back(static_cast<int>(batch.labels[b]));
    }
  }
  return out;
}

inline MacroMetrics split_metrics(const ModelState& model, const DatasetManifest& manifest,
                                  Split split, float threshold) {
  const auto s = score_split(model, manifest, split);
  const auto preds = predict_labels(Tensor({s.scores.size()}, s.scores), threshold);
  return macro_metrics(compute_confusion(preds, s.labels));
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int stage = 0;  // 0 single-stage, 1/2 for the two late-stacked stages
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double val_accuracy = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 1-based, within the final stage
  int best_stage = 0;
};

struct TrainResult {
  ModelState best;
  TrainLog log;
  // LateStacked only: the stage-1 best state that stage 2 started from.
  std::optional<ModelState> stage1;
};

using LossFn = std::function<Var(const ModelState&, const Batch&, Rng&)>;
using ValidationFn = std::function<MacroMetrics(const ModelState&)>;

namespace detail {

inline std::string batch_label(std::size_t epoch, std::size_t index, const Batch& batch) {
  return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(index) +
         " (first id '" + batch.ids.front() + "')";
}

// Adam over mini-batches of the train split with early stopping on the
// validation macro-F1. Returns a copy of the best-validation state.
inline TrainResult fit(ModelState model, const DatasetManifest& manifest, const TrainConfig& cfg,
                       const LossFn& loss_fn, const ValidationFn& validate,
                       const std::function<bool(const std::string&)>& trainable, int stage) {
  cfg.validate();
  if (manifest.split_indices(Split::Train).empty()) throw DataError("split 'train' is empty");
  if (manifest.split_indices(Split::Val).empty()) throw DataError("split 'val' is empty");
  Rng rng(cfg.seed);
  Adam adam(cfg);
  EarlyStopper stopper(cfg.patience);
  TrainResult result;
  result.best = clone(model);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng epoch_rng = rng.split();
    const auto batches = make_batches(manifest, Split::Train, cfg.batch_size, epoch_rng, true);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      zero_grads(model.params);
      Var loss = loss_fn(model, batches[i], epoch_rng);
      const float lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at " + batch_label(epoch, i, batches[i]));
      }
      backward(loss);
      adam.step(model.params, trainable);
      ++model.step;
      loss_sum += static_cast<double>(lv) * static_cast<double>(batches[i].size());
      seen += batches[i].size();
    }
    const MacroMetrics val = validate(model);
    EpochLog e;
    e.stage = stage;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(seen);
    e.val_macro_f1 = val.f1;
    e.val_accuracy = val.accuracy;
    e.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
    result.log.epochs.push_back(e);
    if (stopper.observe(val.f1)) result.best = clone(model);
    if (stopper.should_stop()) break;
  }
  result.log.best_epoch = stopper.best_epoch();
  result.log.best_stage = stage;
  return result;
}

inline bool is_stage2_param(const std::string& name) { return name.rfind("stack.", 0) == 0; }

}  // namespace detail

// Mean BCE of the model's logits on one batch (training mode).
inline Var batch_loss(const ModelState& model, const Batch& batch, Rng& rng) {
  return bce_with_logits(forward_logits(model.config, model.params, batch, true, rng),
                         batch.labels);
}

// Two-stage late fusion. Stage 1 trains every per-modality classifier on
// its own BCE; those weights are then frozen and stage 2 fits the stacked
// classifier on the stage-1 probabilities.
inline TrainResult train_late_stacked(const ModelState& model, const DatasetManifest& manifest,
                                      const TrainConfig& cfg) {
  if (model.config.strategy != FusionTag::LateStacked) {
    throw ConfigError("train_late_stacked requires the late_stacked strategy");
  }
  check_compatible(model.config, manifest);
  const auto& c = model.config;
  const float M = static_cast<float>(c.modalities.size());

  const LossFn stage1_loss = [&](const ModelState& m, const Batch& batch, Rng& rng) {
    auto logits = late_stage1_logits(c, m.params, batch, true, rng);
    Tensor labels({batch.size(), c.modalities.size()});
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t k = 0; k < c.modalities.size(); ++k) labels.at(b, k) = batch.labels[b];
    // Mean over samples and modalities equals the average per-modality BCE.
    return bce_with_logits(logits, labels);
  };
  const ValidationFn stage1_val = [&](const ModelState& m) {
    Rng unused(0);
    std::vector<int> preds, labels;
    for (const auto& batch : make_batches(manifest, Split::Val, 64, unused, false)) {
      const Tensor p = sigmoid(late_stage1_logits(c, m.params, batch, false, unused)).value();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        float mean_p = 0.0f;
        for (std::size_t k = 0; k < c.modalities.size(); ++k) mean_p += p.at(b, k);
        preds.push_back(mean_p / M >= cfg.threshold ? 1 : 0);
        labels.push_back(static_cast<int>(batch.labels[b]));
      }
    }
    return macro_metrics(compute_confusion(preds, labels));
  };
  auto stage1 = detail::fit(clone(model), manifest, cfg, stage1_loss, stage1_val,
                            [](const std::string& n) { return !detail::is_stage2_param(n); }, 1);

  const LossFn stage2_loss = [&](const ModelState& m, const Batch& batch, Rng& rng) {
    const Tensor probs = sigmoid(late_stage1_logits(c, m.params, batch, false, rng)).value();
    auto logits = fuse_late_stacked(constant(probs), Dense::bind(m.params, "stack"));
    return bce_with_logits(logits, batch.labels);
  };
  const ValidationFn full_val = [&](const ModelState& m) {
    return split_metrics(m, manifest, Split::Val, cfg.threshold);
  };
  auto stage2 = detail::fit(clone(stage1.best), manifest, cfg, stage2_loss, full_val,
                            detail::is_stage2_param, 2);

  TrainResult out;
  out.best = std::move(stage2.best);
  out.log.epochs = stage1.log.epochs;
  out.log.epochs.insert(out.log.epochs.end(), stage2.log.epochs.begin(), stage2.log.epochs.end());
  out.log.best_epoch = stage2.log.best_epoch;
  out.log.best_stage = 2;
  out.stage1 = std::move(stage1.best);
  return out;
}

// Trains `model` on the manifest's train split and returns the state with
// the best validation macro-F1 (not the last one).
inline TrainResult train(const ModelState& model, const DatasetManifest& manifest,
                         const TrainConfig& cfg) {
  check_compatible(model.config, manifest);
  if (model.config.strategy == FusionTag::LateStacked) {
    return train_late_stacked(model, manifest, cfg);
  }
  const ValidationFn val = [&](const ModelState& m) {
    return split_metrics(m, manifest, Split::Val, cfg.threshold);
  };
  return detail::fit(clone(model), manifest, cfg, batch_loss, val, nullptr, 0);
}

// JSON-lines, one object per epoch; wall-clock times go on separate lines
// starting with '#', so the JSON lines are reproducible byte for byte.
inline void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  for (const auto& e : log.epochs) {
    nlohmann::json j;
    j["stage"] = e.stage;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_macro_f1"] = e.val_macro_f1;
    j["val_accuracy"] = e.val_accuracy;
    j["best"] = e.stage == log.best_stage && e.epoch == log.best_epoch;
    os << "# stage " << e.stage << " epoch " << e.epoch << " wall_ms " << e.wall_ms << '\n';
    os << j.dump() << '\n';
  }
}

}  // namespace fusionlab
