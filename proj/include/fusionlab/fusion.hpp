#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fusionlab/layers.hpp"

namespace fusionlab {

enum class FusionTag { EarlyConcat, EarlyProduct, LateWeighted, LateStacked, MoHate };

inline std::string to_string(FusionTag t) {
  switch (t) {
    case FusionTag::EarlyConcat: return "early_concat";
    case FusionTag::EarlyProduct: return "early_product";
    case FusionTag::LateWeighted: return "late_weighted";
    case FusionTag::LateStacked: return "late_stacked";
    case FusionTag::MoHate: return "mo_hate";
  }
  return "?";
}

inline FusionTag parse_fusion_tag(const std::string& s) {
  if (s == "early_concat" || s == "concat") return FusionTag::EarlyConcat;
  if (s == "early_product" || s == "product") return FusionTag::EarlyProduct;
  if (s == "late_weighted") return FusionTag::LateWeighted;
  if (s == "late_stacked") return FusionTag::LateStacked;
  if (s == "mo_hate" || s == "mohate") return FusionTag::MoHate;
  throw ConfigError("unknown fusion strategy '" + s + "'");
}

// ---------------------------------------------------------------------------
// Simple (early) fusion

// [B x d_1], ..., [B x d_m] -> [B x sum d_i], in the given order.
template <typename T>
BasicVar<T> fuse_early_concat(const std::vector<BasicVar<T>>& modality_vectors) {
  if (modality_vectors.empty()) throw ContractError("fuse_early_concat: no modalities");
  return concat(modality_vectors, 1);
}

// Hadamard product of equally sized [B x d] modality vectors.
template <typename T>
BasicVar<T> fuse_early_product(const std::vector<BasicVar<T>>& modality_vectors) {
  if (modality_vectors.empty()) throw ContractError("fuse_early_product: no modalities");
  return elementwise_product(modality_vectors);
}

// ---------------------------------------------------------------------------
// Late fusion

// softmax(weights) as a [1 x M] row.
template <typename T>
BasicVar<T> modality_weights(const BasicVar<T>& weights) {
  return softmax_rows(reshape(weights, {1, weights.value().size()}));
}

// score_b = sum_m softmax(weights)_m * probs[b, m]; returns [B x 1].
template <typename T>
BasicVar<T> fuse_late_weighted(const BasicVar<T>& probs, const BasicVar<T>& weights) {
  if (probs.shape().size() != 2 || probs.dim(1) != weights.value().size()) {
    throw DimensionError("fuse_late_weighted: probabilities " + shape_str(probs.shape()) +
                         " vs weights " + shape_str(weights.shape()));
  }
  return matmul(probs, transpose(modality_weights(weights)));
}

// Second-stage classifier over the [B x M] first-stage probabilities;
// returns logits [B x 1].
template <typename T>
BasicVar<T> fuse_late_stacked(const BasicVar<T>& probs, const BasicDense<T>& stage2) {
  if (stage2.out_features() != 1 || probs.dim(1) != stage2.in_features()) {
    throw DimensionError("fuse_late_stacked: probabilities " + shape_str(probs.shape()) +
                         " vs stage-2 weight " + shape_str(stage2.weight.shape()));
  }
  return stage2(probs);
}

// ---------------------------------------------------------------------------
// Modality-order-aware cross-modal attention

// Parameters of one fusion step. The query comes from the context modality,
// keys and values from the (contextualised) text sequence.
template <typename T>
struct BasicCrossModalAttention {
  BasicVar<T> w_q;    // [d_context x d_k]
  BasicVar<T> w_k;    // [d_text x d_k]
  BasicVar<T> w_v;    // [d_text x d_text]
  BasicVar<T> align;       // [max_len x max_len]: maps context positions onto text positions
  BasicVar<T> align_bias;  // [max_len], one per text position

  std::size_t key_dim() const { return w_k.dim(1); }
  std::size_t max_len() const { return align.dim(0); }

  static BasicCrossModalAttention bind(const BasicParamStore<T>& store, const std::string& name) {
    return {store.at(name + ".w_q"), store.at(name + ".w_k"), store.at(name + ".w_v"),
            store.at(name + ".align"), store.at(name + ".align_bias")};
  }
};
using CrossModalAttention = BasicCrossModalAttention<float>;

inline void init_cross_modal_attention(ParamStore& store, const std::string& name,
                                       std::size_t d_context, std::size_t d_text,
                                       std::size_t d_k, std::size_t max_len, Rng& rng) {
  if (d_k == 0) throw ConfigError("cross-modal attention key dimension must be >= 1");
  store[name + ".w_q"] = parameter(init_uniform({d_context, d_k}, d_context, rng));
  store[name + ".w_k"] = parameter(init_uniform({d_text, d_k}, d_text, rng));
  store[name + ".w_v"] = parameter(init_uniform({d_text, d_text}, d_text, rng));
  store[name + ".align"] = parameter(init_uniform({max_len, max_len}, max_len, rng));
  store[name + ".align_bias"] = parameter(Tensor::zeros({max_len}));
}

template <typename T>
struct AttendResult {
  BasicVar<T> contextualised;  // [L x d_text]
  BasicVar<T> weights;         // [T x L], rows sum to one
};

// One sample: text [L x d_text], context [T x d_context].
//   Q = context·W_q, K = text·W_k, V = text·W_v
//   A = softmax(Q Kᵀ / sqrt(d_k)) V                     [T x d_text]
//   aligned = align[0:L, 0:T] · A + align_bias[0:L]     [L x d_text], bias per row
//   contextualised = text ⊙ aligned
template <typename T>
AttendResult<T> cross_modal_attend(const BasicVar<T>& text, const BasicVar<T>& context,
                                   const BasicCrossModalAttention<T>& p) {
  const std::size_t d_k = p.key_dim();
  if (d_k == 0) throw ConfigError("cross_modal_attend: d_k must be >= 1");
  const std::size_t L = text.dim(0), Tc = context.dim(0);
  if (L > p.max_len() || Tc > p.max_len()) {
    throw DataError("cross_modal_attend: sequence length " + std::to_string(std::max(L, Tc)) +
                    " exceeds max_seq_len " + std::to_string(p.max_len()));
  }
  auto q = matmul(context, p.w_q);
  auto k = matmul(text, p.w_k);
  auto v = matmul(text, p.w_v);
  auto logits = scale(matmul(q, transpose(k)), T{1} / std::sqrt(static_cast<T>(d_k)));
  auto weights = softmax_rows(logits);
  auto attended = matmul(weights, v);
  auto align = slice(slice(p.align, 0, 0, L), 1, 0, Tc);
  auto bias = reshape(slice(p.align_bias, 0, 0, L), {L, 1});
  auto ones = constant(BasicTensor<T>::ones({1, text.dim(1)}));
  auto aligned = add(matmul(align, attended), matmul(bias, ones));
  return {mul(text, aligned), weights};
}

// Folds cross_modal_attend over the contexts in fusion order, then mean-pools
// each final text sequence. texts[b] is [L_b x d]; contexts[s][b] is the
// sample-b input of step s. Returns [B x d].
template <typename T>
BasicVar<T> fuse_mo_hate(const std::vector<BasicVar<T>>& texts,
                         const std::vector<std::vector<BasicVar<T>>>& contexts,
                         const std::vector<BasicCrossModalAttention<T>>& steps) {
  if (contexts.size() != steps.size()) {
    throw ContractError("fuse_mo_hate: " + std::to_string(contexts.size()) + " contexts but " +
                        std::to_string(steps.size()) + " parameter sets");
  }
  std::vector<BasicVar<T>> pooled;
  pooled.reserve(texts.size());
  for (std::size_t b = 0; b < texts.size(); ++b) {
    BasicVar<T> seq = texts[b];
    for (std::size_t s = 0; s < steps.size(); ++s) {
      seq = cross_modal_attend(seq, contexts[s].at(b), steps[s]).contextualised;
    }
    pooled.push_back(mean_rows(seq));
  }
  return concat(pooled, 0);
}

// ---------------------------------------------------------------------------
// Temporal summary

// Runs the LSTM over each sample's first lengths[b] steps of seq [B x T x d]
// and returns the final hidden states [B x h]. Steps past a sample's length
// leave its state untouched, so padding never reaches the summary.
template <typename T>
BasicVar<T> temporal_summarize(const BasicVar<T>& seq, const std::vector<std::size_t>& lengths,
                               const BasicLstmParams<T>& p) {
  if (seq.shape().size() != 3) {
    throw DimensionError("temporal_summarize: expected [B x T x d], got " + shape_str(seq.shape()));
  }
  const std::size_t B = seq.dim(0), Tm = seq.dim(1), d = seq.dim(2);
  if (lengths.size() != B) throw DimensionError("temporal_summarize: lengths/batch mismatch");
  std::size_t longest = 0;
  for (auto len : lengths) {
    if (len == 0 || len > Tm) {
      throw ContractError("temporal_summarize: length " + std::to_string(len) +
                          " outside [1, " + std::to_string(Tm) + "]");
    }
    longest = std::max(longest, len);
  }
  const std::size_t h = p.hidden_size();
  LstmState<T> state{constant(BasicTensor<T>::zeros({B, h})),
                     constant(BasicTensor<T>::zeros({B, h}))};
  for (std::size_t t = 0; t < longest; ++t) {
    auto x_t = reshape(slice(seq, 1, t, t + 1), {B, d});
    auto next = lstm_cell(x_t, state, p);
    std::vector<bool> active(B);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      active[b] = lengths[b] > t;
      all = all && active[b];
    }
    if (all) {
      state = next;
    } else {
      state = {select_rows(active, next.h, state.h), select_rows(active, next.c, state.c)};
    }
  }
  return state.h;
}

}  // namespace fusionlab
