#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fusionlab/embedding_store.hpp"

namespace fusionlab {

// Generated datasets are split 60/20/20 within each stratum (class, or XOR
// quadrant), so every split is label balanced.

inline std::vector<ModalitySpec> default_synthetic_modalities() {
  return {{"text", 16, false, "synthetic"},
          {"audio", 8, true, "synthetic"},
          {"vision", 12, false, "synthetic"}};
}

struct SeqLengthRange {
  std::size_t min = 2;
  std::size_t max = 6;
};

namespace detail {

inline Tensor random_signs(std::size_t dim, Rng& rng) {
  Tensor t({dim});
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1.0f : -1.0f;
  return t;
}

// center + sigma * N(0, 1), per coordinate.
inline void add_noisy(std::span<float> out, std::span<const float> center, float scale,
                      double sigma, Rng& rng) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(scale * center[i] + sigma * rng.normal());
  }
}

// Assigns splits to one stratum of record indices (already shuffled).
inline void assign_splits(std::vector<EmbeddingRecord>& records,
                          const std::vector<std::size_t>& stratum, SplitCounts& counts) {
  const std::size_t n = stratum.size();
  const std::size_t n_train = n * 3 / 5;
  const std::size_t n_val = n / 5;
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;
    records[stratum[i]].split = s;
    ++counts[s];
  }
}

inline std::string record_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%05zu", i);
  return buf;
}

}  // namespace detail

// Labels are balanced (n/2 of each class, the extra one negative for odd n).
// The informative modality is drawn around +r for label 1 and -r for label 0,
// with r a fixed random sign vector and noise sigma 0.25; every other
// modality is standard normal noise. Sequential modalities repeat the draw at
// each of T steps, T uniform in `lengths`.
inline DatasetManifest gen_separable(std::size_t n, const std::vector<ModalitySpec>& modalities,
                                     const std::string& informative, std::uint64_t seed,
                                     SeqLengthRange lengths = {}) {
  if (n < 8) throw ConfigError("gen_separable needs n >= 8");
  if (lengths.min == 0 || lengths.min > lengths.max) throw ConfigError("bad sequence lengths");
  DatasetManifest m;
  m.dataset = "synthetic_separable";
  m.modalities = modalities;
  detail::check_modalities(m.modalities);
  const std::size_t inf = m.modality_index(informative);
  Rng rng(seed);
  const Tensor direction = detail::random_signs(m.modalities[inf].dim, rng);

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) {
    EmbeddingRecord r;
    r.id = detail::record_id(i);
    r.label = i < n / 2 ? 1 : 0;
    by_class[r.label].push_back(i);
    for (std::size_t k = 0; k < m.modalities.size(); ++k) {
      const auto& spec = m.modalities[k];
      const std::size_t T =
          spec.sequential ? lengths.min + rng.below(lengths.max - lengths.min + 1) : 1;
      Tensor t = spec.sequential ? Tensor({T, spec.dim}) : Tensor({spec.dim});
      for (std::size_t s = 0; s < T; ++s) {
        auto row = t.data().subspan(s * spec.dim, spec.dim);
        if (k == inf) {
          detail::add_noisy(row, direction.data(), r.label ? 1.0f : -1.0f, 0.25, rng);
        } else {
          for (auto& v : row) v = static_cast<float>(rng.normal());
        }
      }
      r.tensors.push_back(std::move(t));
    }
    m.records.push_back(std::move(r));
  }
  SplitCounts counts;
  for (auto& stratum : by_class) {
    rng.shuffle(stratum);
    detail::assign_splits(m.records, stratum, counts);
  }
  m.expected_splits = counts;
  return m;
}

struct XorDims {
  std::size_t text = 8;
  std::size_t vision = 8;
  std::size_t text_len = 4;
};

// Two modalities, each carrying one latent bit; label = bit_text XOR
// bit_vision. The quadrants (bit_text, bit_vision) hold n/4 records each, so
// either bit alone is independent of the label. Text is a sequence of
// text_len tokens: token l = s_t * r + p_l + 0.25 * noise, with s = +-1 the
// signed bit, r a fixed sign vector and p_l fixed per-position sign vectors.
// Vision is s_v * r' + 0.25 * noise.
inline DatasetManifest gen_confounder_xor(std::size_t n, std::uint64_t seed, XorDims dims = {}) {
  if (n < 16 || n % 2 != 0) throw ConfigError("gen_confounder_xor needs an even n >= 16");
  if (dims.text == 0 || dims.vision == 0 || dims.text_len == 0) {
    throw ConfigError("gen_confounder_xor: dims must be >= 1");
  }
  DatasetManifest m;
  m.dataset = "synthetic_confounder_xor";
  m.modalities = {{"text", dims.text, true, "synthetic"},
                  {"vision", dims.vision, false, "synthetic"}};
  Rng rng(seed);
  const Tensor r_text = detail::random_signs(dims.text, rng);
  const Tensor r_vision = detail::random_signs(dims.vision, rng);
  std::vector<Tensor> positions;
  for (std::size_t l = 0; l < dims.text_len; ++l)
    positions.push_back(detail::random_signs(dims.text, rng));

  // Quadrant q = 2 * bit_text + bit_vision. With n % 4 == 2 the first two
  // quadrants get one extra record each, which keeps the labels balanced.
  std::array<std::vector<std::size_t>, 4> quadrants;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t q = i % 4;
    const int bt = static_cast<int>(q / 2), bv = static_cast<int>(q % 2);
    EmbeddingRecord r;
    r.id = detail::record_id(i);
    r.label = bt ^ bv;
    quadrants[q].push_back(i);
    Tensor text({dims.text_len, dims.text});
    const float st = bt ? 1.0f : -1.0f, sv = bv ? 1.0f : -1.0f;
    for (std::size_t l = 0; l < dims.text_len; ++l) {
      auto row = text.data().subspan(l * dims.text, dims.text);
      detail::add_noisy(row, r_text.data(), st, 0.25, rng);
      for (std::size_t j = 0; j < dims.text; ++j) row[j] += positions[l][j];
    }
    Tensor vision({dims.vision});
    detail::add_noisy(vision.data(), r_vision.data(), sv, 0.25, rng);
    r.tensors.push_back(std::move(text));
    r.tensors.push_back(std::move(vision));
    m.records.push_back(std::move(r));
  }
  SplitCounts counts;
  for (auto& stratum : quadrants) {
    rng.shuffle(stratum);
    detail::assign_splits(m.records, stratum, counts);
  }
  m.expected_splits = counts;
  return m;
}

// gen_separable (text informative) with `missing` ABSENT on
// floor(fraction * n) records chosen uniformly at random.
inline DatasetManifest gen_missing_modality(std::size_t n,
                                            const std::vector<ModalitySpec>& modalities,
                                            double fraction, std::uint64_t seed,
                                            const std::string& missing = "audio",
                                            const std::string& informative = "text") {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("missing fraction must lie in [0, 1]");
  }
  if (missing == informative) {
    throw ConfigError("the missing modality must differ from the informative one");
  }
  DatasetManifest m = gen_separable(n, modalities, informative, seed);
  m.dataset = "synthetic_missing_" + missing;
  const std::size_t k = m.modality_index(missing);
  Rng rng(seed ^ 0x6d697373696e67ULL);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < count; ++i) m.records[order[i]].tensors[k].reset();
  return m;
}

}  // namespace fusionlab
