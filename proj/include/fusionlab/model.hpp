#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusionlab/embedding_store.hpp"
#include "fusionlab/fusion.hpp"

namespace fusionlab {

struct ModelConfig {
  FusionTag strategy = FusionTag::EarlyConcat;
  std::vector<ModalitySpec> modalities;  // manifest order
  // MoHate fusion order: anchor first, then contexts. Empty means the text
  // modality (when present) followed by the others in manifest order.
  std::vector<std::string> order;
  std::size_t lstm_hidden = 128;
  std::size_t head_hidden = 128;
  std::size_t attn_dim = 64;
  std::size_t max_seq_len = 100;
  float dropout = 0.2f;
  std::uint64_t seed = 0;

  std::size_t modality_index(const std::string& name) const {
    for (std::size_t i = 0; i < modalities.size(); ++i)
      if (modalities[i].name == name) return i;
    throw ConfigError("unknown modality '" + name + "'");
  }

  // Width a modality contributes to simple and late fusion.
  std::size_t feature_width(std::size_t k) const {
    return modalities[k].sequential ? lstm_hidden : modalities[k].dim;
  }

  std::vector<std::string> fusion_order() const {
    if (!order.empty()) return order;
    std::vector<std::string> out;
    for (const auto& m : modalities)
      if (m.name == "text") out.push_back(m.name);
    for (const auto& m : modalities)
      if (m.name != "text") out.push_back(m.name);
    return out;
  }

  // Common width of the product when modality widths differ (0 if equal).
  std::size_t product_projection_width() const {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (std::size_t k = 0; k < modalities.size(); ++k) {
      lo = std::min(lo, feature_width(k));
      hi = std::max(hi, feature_width(k));
    }
    return lo == hi ? 0 : lo;
  }

  // Input width of the classification head.
  std::size_t head_input_width() const {
    switch (strategy) {
      case FusionTag::EarlyConcat: {
        std::size_t w = 0;
        for (std::size_t k = 0; k < modalities.size(); ++k) w += feature_width(k);
        return w;
      }
      case FusionTag::EarlyProduct: {
        const std::size_t p = product_projection_width();
        return p ? p : feature_width(0);
      }
      case FusionTag::MoHate:
        return modalities[modality_index(fusion_order().front())].dim;
      case FusionTag::LateWeighted:
      case FusionTag::LateStacked:
        return 0;
    }
    return 0;
  }

  void validate() const {
    if (modalities.empty()) throw ConfigError("model has no modalities");
    if (!(dropout >= 0.0f && dropout < 1.0f)) {
      throw ConfigError("dropout must lie in [0, 1), got " + std::to_string(dropout));
    }
    if (lstm_hidden == 0 || head_hidden == 0 || attn_dim == 0 || max_seq_len == 0) {
      throw ConfigError("all layer widths must be >= 1");
    }
    if (!order.empty()) {
      std::vector<std::string> names;
      for (const auto& m : modalities) names.push_back(m.name);
      for (const auto& o : order) modality_index(o);
      auto sorted_order = order;
      std::sort(sorted_order.begin(), sorted_order.end());
      std::sort(names.begin(), names.end());
      if (sorted_order != names) {
        throw ConfigError("fusion order must be a permutation of the model modalities");
      }
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["strategy"] = to_string(c.strategy);
  j["modalities"] = nlohmann::json::array();
  for (const auto& m : c.modalities) {
    j["modalities"].push_back({{"name", m.name},
                               {"dim", m.dim},
                               {"sequential", m.sequential},
                               {"encoder_tag", m.encoder_tag}});
  }
  j["order"] = c.order;
  j["lstm_hidden"] = c.lstm_hidden;
  j["head_hidden"] = c.head_hidden;
  j["attn_dim"] = c.attn_dim;
  j["max_seq_len"] = c.max_seq_len;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.strategy = parse_fusion_tag(j.at("strategy").get<std::string>());
  for (const auto& jm : j.at("modalities")) {
    c.modalities.push_back({jm.at("name").get<std::string>(), jm.at("dim").get<std::size_t>(),
                            jm.at("sequential").get<bool>(),
                            jm.value("encoder_tag", std::string{})});
  }
  c.order = j.at("order").get<std::vector<std::string>>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.attn_dim = j.at("attn_dim").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<float>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

// The model's modalities must match the manifest's exactly (names, widths and
// kinds, in order).
inline void check_compatible(const ModelConfig& c, const DatasetManifest& m) {
  for (const auto& mm : c.modalities) {
    if (!m.has_modality(mm.name)) {
      throw ConfigError("modality '" + mm.name + "' is not in manifest '" + m.dataset + "'");
    }
  }
  for (const auto& spec : m.modalities) {
    std::size_t k = 0;
    try {
      k = c.modality_index(spec.name);
    } catch (const ConfigError&) {
      throw ConfigError("manifest modality '" + spec.name + "' is not known to the model");
    }
    if (c.modalities[k].dim != spec.dim || c.modalities[k].sequential != spec.sequential) {
      throw ConfigError("modality '" + spec.name + "' differs between model and manifest");
    }
  }
  if (c.modalities.size() != m.modalities.size()) {
    throw ConfigError("model and manifest modality counts differ");
  }
  for (std::size_t k = 0; k < m.modalities.size(); ++k) {
    if (c.modalities[k].name != m.modalities[k].name) {
      throw ConfigError("modality '" + m.modalities[k].name + "' is out of order in the model");
    }
  }
}

// Configuration for a manifest's modalities with every other field default.
inline ModelConfig config_for(const DatasetManifest& m, FusionTag strategy) {
  ModelConfig c;
  c.strategy = strategy;
  c.modalities = m.modalities;
  return c;
}

struct ModelState {
  ModelConfig config;
  ParamStore params;
  std::uint64_t step = 0;
};

// Deterministic initialization from config.seed; every parameter shape
// follows from the config alone.
inline ModelState build_model(const ModelConfig& config) {
  config.validate();
  ModelState s;
  s.config = config;
  Rng rng(config.seed);
  const auto& mods = config.modalities;
  const auto init_head = [&](const std::string& name, std::size_t in) {
    init_dense(s.params, name + ".fc1", in, config.head_hidden, rng);
    init_dense(s.params, name + ".fc2", config.head_hidden, 1, rng);
  };
  if (config.strategy != FusionTag::MoHate) {
    for (const auto& m : mods)
      if (m.sequential) init_lstm(s.params, "lstm." + m.name, m.dim, config.lstm_hidden, rng);
  }
  switch (config.strategy) {
    case FusionTag::EarlyConcat:
      init_head("head", config.head_input_width());
      break;
    case FusionTag::EarlyProduct:
      if (const auto w = config.product_projection_width()) {
        for (std::size_t k = 0; k < mods.size(); ++k)
          init_dense(s.params, "proj." + mods[k].name, config.feature_width(k), w, rng);
      }
      init_head("head", config.head_input_width());
      break;
    case FusionTag::LateWeighted:
    case FusionTag::LateStacked:
      for (std::size_t k = 0; k < mods.size(); ++k)
        init_head("late." + mods[k].name, config.feature_width(k));
      if (config.strategy == FusionTag::LateWeighted) {
        s.params["late.weights"] = parameter(Tensor::zeros({mods.size()}));
      } else {
        // Zero start: stage 2 is a convex fit, and no modality is favoured
        // before it sees the stage-1 probabilities.
        s.params["stack.weight"] = parameter(Tensor::zeros({mods.size(), 1}));
        s.params["stack.bias"] = parameter(Tensor::zeros({1}));
      }
      break;
    case FusionTag::MoHate: {
      const auto order = config.fusion_order();
      const auto& anchor = mods[config.modality_index(order.front())];
      for (std::size_t step = 1; step < order.size(); ++step) {
        const auto& ctx = mods[config.modality_index(order[step])];
        init_cross_modal_attention(s.params, "attn." + std::to_string(step) + "." + ctx.name,
                                   ctx.dim, anchor.dim, config.attn_dim, config.max_seq_len, rng);
      }
      init_head("head", anchor.dim);
      break;
    }
  }
  return s;
}

namespace detail {

inline void check_batch(const ModelConfig& c, const Batch& batch) {
  if (batch.modality_count() != c.modalities.size()) {
    throw ConfigError("batch carries " + std::to_string(batch.modality_count()) +
                      " modalities, model expects " + std::to_string(c.modalities.size()));
  }
  for (std::size_t k = 0; k < c.modalities.size(); ++k) {
    const auto& spec = c.modalities[k];
    const auto& v = batch.modalities[k].values;
    const bool ok = spec.sequential ? (v.rank() == 3 && v.dim(2) == spec.dim)
                                    : (v.rank() == 2 && v.dim(1) == spec.dim);
    if (!ok) {
      throw ConfigError("batch modality '" + spec.name + "' has shape " + shape_str(v.shape()));
    }
  }
}

template <typename T>
BasicVar<T> head_forward(const BasicParamStore<T>& params, const std::string& name,
                         const BasicVar<T>& x, float p, Rng& rng, bool training) {
  auto fc1 = BasicDense<T>::bind(params, name + ".fc1");
  auto fc2 = BasicDense<T>::bind(params, name + ".fc2");
  return fc2(dropout(relu(fc1(x)), p, rng, training));
}

// Per-modality [B x width] features: raw vectors, or the LSTM summary for
// sequences. Rows of absent samples are zero.
template <typename T>
std::vector<BasicVar<T>> modality_features(const ModelConfig& c, const BasicParamStore<T>& params,
                                           const Batch& batch) {
  std::vector<BasicVar<T>> out;
  const std::size_t B = batch.size();
  for (std::size_t k = 0; k < c.modalities.size(); ++k) {
    const auto& spec = c.modalities[k];
    const auto& mb = batch.modalities[k];
    auto x = constant(mb.values.template cast<T>());
    if (!spec.sequential) {
      out.push_back(x);
      continue;
    }
    auto summary =
        temporal_summarize(x, mb.lengths, BasicLstmParams<T>::bind(params, "lstm." + spec.name));
    std::vector<bool> present(B);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      present[b] = batch.present(b, k);
      all = all && present[b];
    }
    if (!all) {
      summary = select_rows(present, summary,
                            constant(BasicTensor<T>::zeros({B, c.lstm_hidden})));
    }
    out.push_back(summary);
  }
  return out;
}

// Sample b of modality k as a [len x dim] sequence (vectors give len 1).
template <typename T>
BasicVar<T> sample_sequence(const Batch& batch, std::size_t k, std::size_t b) {
  const auto& mb = batch.modalities[k];
  const auto& v = mb.values;
  if (!mb.sequential) {
    const std::size_t d = v.dim(1);
    std::vector<T> row(v.data().begin() + static_cast<std::ptrdiff_t>(b * d),
                       v.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
    return constant(BasicTensor<T>({1, d}, std::move(row)));
  }
  const std::size_t Tm = v.dim(1), d = v.dim(2), len = mb.lengths[b];
  const auto begin = v.data().begin() + static_cast<std::ptrdiff_t>(b * Tm * d);
  std::vector<T> rows(begin, begin + static_cast<std::ptrdiff_t>(len * d));
  return constant(BasicTensor<T>({len, d}, std::move(rows)));
}

}  // namespace detail

// Stage-1 logits of the late-fusion strategies, one column per modality:
// [B x M].
template <typename T>
BasicVar<T> late_stage1_logits(const ModelConfig& c, const BasicParamStore<T>& params,
                               const Batch& batch, bool training, Rng& rng) {
  detail::check_batch(c, batch);
  auto feats = detail::modality_features(c, params, batch);
  std::vector<BasicVar<T>> cols;
  for (std::size_t k = 0; k < c.modalities.size(); ++k) {
    cols.push_back(detail::head_forward(params, "late." + c.modalities[k].name, feats[k],
                                        c.dropout, rng, training));
  }
  return concat(cols, 1);
}

// Fused representation ahead of the classification head (simple fusion and
// MoHate only).
template <typename T>
BasicVar<T> fused_features(const ModelConfig& c, const BasicParamStore<T>& params,
                           const Batch& batch) {
  detail::check_batch(c, batch);
  switch (c.strategy) {
    case FusionTag::EarlyConcat:
      return fuse_early_concat(detail::modality_features(c, params, batch));
    case FusionTag::EarlyProduct: {
      auto feats = detail::modality_features(c, params, batch);
      if (c.product_projection_width()) {
        for (std::size_t k = 0; k < feats.size(); ++k)
          feats[k] = BasicDense<T>::bind(params, "proj." + c.modalities[k].name)(feats[k]);
      }
      return fuse_early_product(feats);
    }
    case FusionTag::MoHate: {
      const auto order = c.fusion_order();
      const std::size_t anchor = c.modality_index(order.front());
      std::vector<BasicVar<T>> texts;
      std::vector<std::vector<BasicVar<T>>> contexts(order.size() - 1);
      std::vector<BasicCrossModalAttention<T>> steps;
      for (std::size_t b = 0; b < batch.size(); ++b)
        texts.push_back(detail::sample_sequence<T>(batch, anchor, b));
      for (std::size_t s = 1; s < order.size(); ++s) {
        const std::size_t k = c.modality_index(order[s]);
        steps.push_back(BasicCrossModalAttention<T>::bind(
            params, "attn." + std::to_string(s) + "." + order[s]));
        for (std::size_t b = 0; b < batch.size(); ++b)
          contexts[s - 1].push_back(detail::sample_sequence<T>(batch, k, b));
      }
      return fuse_mo_hate(texts, contexts, steps);
    }
    case FusionTag::LateWeighted:
    case FusionTag::LateStacked:
      break;
  }
  throw ContractError("fused_features: late-fusion strategies have no fused vector");
}

// Final per-sample logits [B]; sigmoid of these are the scores.
template <typename T>
BasicVar<T> forward_logits(const ModelConfig& c, const BasicParamStore<T>& params,
                           const Batch& batch, bool training, Rng& rng) {
  const Shape out_shape{batch.size()};
  switch (c.strategy) {
    case FusionTag::LateWeighted: {
      auto probs = sigmoid(late_stage1_logits(c, params, batch, training, rng));
      return reshape(logit(fuse_late_weighted(probs, params.at("late.weights"))), out_shape);
    }
    case FusionTag::LateStacked: {
      auto probs = sigmoid(late_stage1_logits(c, params, batch, training, rng));
      return reshape(fuse_late_stacked(probs, BasicDense<T>::bind(params, "stack")), out_shape);
    }
    default:
      break;
  }
  auto fused = fused_features(c, params, batch);
  return reshape(detail::head_forward(params, "head", fused, c.dropout, rng, training), out_shape);
}

// Per-sample probabilities in (0, 1).
inline Tensor forward(const ModelState& model, const Batch& batch, bool training, Rng& rng) {
  return sigmoid(forward_logits(model.config, model.params, batch, training, rng)).value();
}

inline Tensor forward(const ModelState& model, const Batch& batch) {
  Rng unused(0);
  return forward(model, batch, false, unused);
}

// label = 1 iff score >= threshold.
inline std::vector<int> predict_labels(const Tensor& scores, float threshold = 0.5f) {
  std::vector<int> out;
  out.reserve(scores.size());
  for (float s : scores.data()) out.push_back(s >= threshold ? 1 : 0);
  return out;
}

// Deep copy: fresh parameter leaves with identical values.
inline ModelState clone(const ModelState& m) {
  ModelState c = m;
  c.params = cast_params<float>(m.params);
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then per parameter a u32 name length,
// the name bytes, and the tensor in EMB1 framing.

inline constexpr int kCheckpointFormatVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ModelState& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = to_json(m.config);
  header["step"] = m.step;
  header["tensors"] = m.params.size();
  os << header.dump() << '\n';
  for (const auto& [name, v] : m.params) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, v.value());
  }
  if (!os) throw FormatError("write failed: " + path.string());
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint not found: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint format");
  }
  ModelState expected = build_model(model_config_from_json(header.at("config")));
  expected.step = header.value("step", std::uint64_t{0});
  const auto count = header.at("tensors").get<std::size_t>();
  if (count != expected.params.size()) {
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(count) +
                      " tensors, config implies " + std::to_string(expected.params.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    if (!detail::get_u32(is, len) || len > 4096) throw FormatError(path.string() + ": truncated");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(path.string() + ": truncated");
    Tensor t = read_tensor(is, path.string() + " [" + name + "]");
    auto it = expected.params.find(name);
    if (it == expected.params.end()) {
      throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
    }
    if (t.shape() != it->second.shape()) {
      throw FormatError(path.string() + ": tensor '" + name + "' has shape " +
                        shape_str(t.shape()) + ", expected " + shape_str(it->second.shape()));
    }
    it->second.mutable_value() = std::move(t);
  }
  return expected;
}

}  // namespace fusionlab
