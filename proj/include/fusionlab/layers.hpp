#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fusionlab/ops.hpp"

namespace fusionlab {

// Named trainable tensors. std::map keeps a canonical (sorted) order so that
// checkpoints and optimizer state iterate identically on every run.
template <typename T>
using BasicParamStore = std::map<std::string, BasicVar<T>>;
using ParamStore = BasicParamStore<float>;

// Fresh parameter leaves holding a converted copy of every value.
template <typename U, typename T>
BasicParamStore<U> cast_params(const BasicParamStore<T>& store) {
  BasicParamStore<U> out;
  for (const auto& [name, v] : store) out[name] = parameter(v.value().template cast<U>());
  return out;
}

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct BasicDense {
  BasicVar<T> weight;  // [in × out]
  BasicVar<T> bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  BasicVar<T> operator()(const BasicVar<T>& x) const { return add_bias(matmul(x, weight), bias); }

  static BasicDense bind(const BasicParamStore<T>& store, const std::string& name) {
    return BasicDense{store.at(name + ".weight"), store.at(name + ".bias")};
  }
};
using Dense = BasicDense<float>;

inline void init_dense(ParamStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng) {
  store[name + ".weight"] = parameter(init_uniform({in, out}, in, rng));
  store[name + ".bias"] = parameter(Tensor::zeros({out}));
}

// LSTM weights with gates packed in the order input, forget, candidate,
// output along the last axis.
template <typename T>
struct BasicLstmParams {
  BasicVar<T> w_ih;  // [d_in × 4h]
  BasicVar<T> w_hh;  // [h × 4h]
  BasicVar<T> bias;  // [4h]

  std::size_t input_size() const { return w_ih.dim(0); }
  std::size_t hidden_size() const { return w_hh.dim(0); }

  static BasicLstmParams bind(const BasicParamStore<T>& store, const std::string& name) {
    return BasicLstmParams{store.at(name + ".w_ih"), store.at(name + ".w_hh"),
                           store.at(name + ".bias")};
  }
};
using LstmParams = BasicLstmParams<float>;

// Forget-gate bias starts at 1.0, every other bias at zero.
inline void init_lstm(ParamStore& store, const std::string& name, std::size_t in,
                      std::size_t hidden, Rng& rng) {
  Tensor b = Tensor::zeros({4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0f;
  store[name + ".w_ih"] = parameter(init_uniform({in, 4 * hidden}, in, rng));
  store[name + ".w_hh"] = parameter(init_uniform({hidden, 4 * hidden}, hidden, rng));
  store[name + ".bias"] = parameter(std::move(b));
}

template <typename T>
struct LstmState {
  BasicVar<T> h;  // [B × hidden]
  BasicVar<T> c;  // [B × hidden]
};

// One application of the LSTM cell to a batch of inputs x [B × d_in].
template <typename T>
LstmState<T> lstm_cell(const BasicVar<T>& x, const LstmState<T>& state,
                       const BasicLstmParams<T>& p) {
  const std::size_t h = p.hidden_size();
  if (x.shape().size() != 2 || x.dim(1) != p.input_size()) {
    throw DimensionError("lstm_cell: input " + shape_str(x.shape()) +
                         " does not match input size " + std::to_string(p.input_size()));
  }
  auto gates = add_bias(add(matmul(x, p.w_ih), matmul(state.h, p.w_hh)), p.bias);
  auto in_gate = sigmoid(slice(gates, 1, 0, h));
  auto forget_gate = sigmoid(slice(gates, 1, h, 2 * h));
  auto candidate = tanh(slice(gates, 1, 2 * h, 3 * h));
  auto out_gate = sigmoid(slice(gates, 1, 3 * h, 4 * h));
  auto c = add(mul(forget_gate, state.c), mul(in_gate, candidate));
  auto hidden = mul(out_gate, tanh(c));
  return {hidden, c};
}

// Runs the recurrence over `steps` (each [B × d_in]) and returns every
// hidden state in order.
template <typename T>
std::vector<BasicVar<T>> lstm_unroll(const std::vector<BasicVar<T>>& steps,
                                     const BasicLstmParams<T>& p, LstmState<T> state) {
  if (steps.empty()) throw ContractError("lstm: empty input sequence");
  std::vector<BasicVar<T>> hs;
  hs.reserve(steps.size());
  for (const auto& x : steps) {
    state = lstm_cell(x, state, p);
    hs.push_back(state.h);
  }
  return hs;
}

// x [T × d_in] -> hidden states [T × hidden]; h0 and c0 are [1 × hidden].
template <typename T>
BasicVar<T> lstm_sequence(const BasicVar<T>& x, const BasicLstmParams<T>& p,
                          const BasicVar<T>& h0, const BasicVar<T>& c0) {
  if (x.shape().size() != 2) {
    throw DimensionError("lstm_sequence: expected [T x d_in], got " + shape_str(x.shape()));
  }
  std::vector<BasicVar<T>> steps;
  for (std::size_t t = 0; t < x.dim(0); ++t) steps.push_back(slice(x, 0, t, t + 1));
  return concat(lstm_unroll(steps, p, LstmState<T>{h0, c0}), 0);
}

}  // namespace fusionlab
