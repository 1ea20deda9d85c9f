#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "fusionlab/rng.hpp"
#include "fusionlab/tensor.hpp"

namespace fusionlab {

// ---------------------------------------------------------------------------
// "EMB1" tensor files: magic, u32 ndim, ndim x u32 dims, float32 payload, all
// little-endian.

inline constexpr std::array<char, 4> kTensorMagic{'E', 'M', 'B', '1'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
}

// `what` names the source in error messages.
inline Tensor read_tensor(std::istream& is, const std::string& what) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw FormatError(what + ": truncated header");
  if (magic != kTensorMagic) {
    throw FormatError(what + ": bad magic '" + std::string(magic.data(), 4) +
                      "', expected 'EMB1'");
  }
  std::uint32_t ndim = 0;
  if (!detail::get_u32(is, ndim)) throw FormatError(what + ": truncated header");
  if (ndim == 0 || ndim > 8) {
    throw FormatError(what + ": implausible rank " + std::to_string(ndim));
  }
  Shape shape(ndim);
  for (auto& d : shape) {
    std::uint32_t v = 0;
    if (!detail::get_u32(is, v)) throw FormatError(what + ": truncated header");
    if (v == 0) throw FormatError(what + ": zero-sized dimension in header");
    d = v;
  }
  const std::size_t n = numel(shape);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    if (!detail::get_u32(is, bits)) {
      throw FormatError(what + ": truncated payload, header declares " + std::to_string(n) +
                        " floats but only " + std::to_string(i) + " present");
    }
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  write_tensor(os, t);
  if (!os) throw FormatError("write failed: " + path.string());
}

inline Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("tensor file not found: " + path.string());
  Tensor t = read_tensor(is, path.string());
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split tag '" + s + "'");
}

struct ModalitySpec {
  std::string name;
  std::size_t dim = 0;
  bool sequential = false;
  std::string encoder_tag;
};

// One sample. A missing optional marks the modality ABSENT.
struct EmbeddingRecord {
  std::string id;
  int label = 0;
  Split split = Split::Train;
  std::vector<std::optional<Tensor>> tensors;  // parallel to the manifest modalities
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t& operator[](Split s) {
    return s == Split::Train ? train : s == Split::Val ? val : test;
  }
  std::size_t operator[](Split s) const {
    return s == Split::Train ? train : s == Split::Val ? val : test;
  }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

inline constexpr int kManifestFormatVersion = 1;

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  std::string dataset;
  std::vector<ModalitySpec> modalities;
  std::vector<EmbeddingRecord> records;
  std::optional<SplitCounts> expected_splits;

  std::size_t modality_index(const std::string& name) const {
    for (std::size_t i = 0; i < modalities.size(); ++i)
      if (modalities[i].name == name) return i;
    throw DataError("unknown modality '" + name + "'");
  }

  bool has_modality(const std::string& name) const {
    return std::any_of(modalities.begin(), modalities.end(),
                       [&](const ModalitySpec& m) { return m.name == name; });
  }

  SplitCounts split_summary() const {
    SplitCounts c;
    for (const auto& r : records) ++c[r.split];
    return c;
  }

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) idx.push_back(i);
    return idx;
  }
};

// Checks a present tensor against its spec: [dim] for vectors, [T x dim]
// with T >= 1 for sequences.
inline void validate_tensor(const ModalitySpec& spec, const Tensor& t, const std::string& id) {
  const auto fail = [&](const std::string& why) {
    throw DataError("record '" + id + "', modality '" + spec.name + "': " + why);
  };
  if (spec.sequential) {
    if (t.rank() != 2) fail("expected a [T x " + std::to_string(spec.dim) + "] sequence, got " +
                            shape_str(t.shape()));
    if (t.dim(1) != spec.dim) fail("dim mismatch: expected " + std::to_string(spec.dim) +
                                   ", got " + std::to_string(t.dim(1)));
  } else {
    if (t.rank() != 1) fail("expected a [" + std::to_string(spec.dim) + "] vector, got " +
                            shape_str(t.shape()));
    if (t.dim(0) != spec.dim) fail("dim mismatch: expected " + std::to_string(spec.dim) +
                                   ", got " + std::to_string(t.dim(0)));
  }
  if (!t.all_finite()) fail("non-finite values");
}

namespace detail {

inline void check_modalities(const std::vector<ModalitySpec>& mods) {
  if (mods.empty()) throw DataError("manifest declares no modalities");
  std::set<std::string> names;
  for (const auto& m : mods) {
    if (m.name.empty()) throw DataError("modality with empty name");
    if (m.dim == 0) throw DataError("modality '" + m.name + "' has dim 0");
    if (!names.insert(m.name).second) throw DataError("duplicate modality '" + m.name + "'");
  }
}

}  // namespace detail

// Reads and fully validates a JSON-lines manifest, loading every referenced
// tensor. Paths in records are relative to the manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("manifest not found: " + path.string());
  const auto base = path.parent_path();
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::unordered_set<std::string> ids;
  const auto where = [&] { return path.string() + ":" + std::to_string(lineno); };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where() + ": " + e.what());
    }
    try {
      if (!have_header) {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kManifestFormatVersion) {
          throw FormatError(where() + ": unsupported format_version " +
                            std::to_string(m.format_version));
        }
        m.dataset = j.at("dataset").get<std::string>();
        for (const auto& jm : j.at("modalities")) {
          ModalitySpec spec;
          spec.name = jm.at("name").get<std::string>();
          const auto dim = jm.at("dim").get<long long>();
          if (dim <= 0) throw DataError(where() + ": modality '" + spec.name + "' dim must be > 0");
          spec.dim = static_cast<std::size_t>(dim);
          spec.sequential = jm.value("sequential", false);
          spec.encoder_tag = jm.value("encoder_tag", std::string{});
          m.modalities.push_back(std::move(spec));
        }
        detail::check_modalities(m.modalities);
        if (j.contains("expected_splits")) {
          const auto& e = j["expected_splits"];
          m.expected_splits = SplitCounts{e.at("train").get<std::size_t>(),
                                          e.at("val").get<std::size_t>(),
                                          e.at("test").get<std::size_t>()};
        }
        have_header = true;
        continue;
      }
      EmbeddingRecord r;
      r.id = j.at("id").get<std::string>();
      if (!ids.insert(r.id).second) throw DataError(where() + ": duplicate record id '" + r.id + "'");
      const auto label = j.at("label").get<int>();
      if (label != 0 && label != 1) {
        throw DataError(where() + ": record '" + r.id + "' label must be 0 or 1");
      }
      r.label = label;
      r.split = parse_split(j.at("split").get<std::string>());
      r.tensors.resize(m.modalities.size());
      const auto& jt = j.at("tensors");
      for (auto it = jt.begin(); it != jt.end(); ++it) {
        if (!m.has_modality(it.key())) {
          throw DataError(where() + ": record '" + r.id + "' references unknown modality '" +
                          it.key() + "'");
        }
      }
      for (std::size_t k = 0; k < m.modalities.size(); ++k) {
        const auto& spec = m.modalities[k];
        if (!jt.contains(spec.name) || jt[spec.name].is_null()) continue;
        Tensor t = read_tensor_file(base / jt[spec.name].get<std::string>());
        validate_tensor(spec, t, r.id);
        r.tensors[k] = std::move(t);
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where() + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError(path.string() + ": empty manifest");
  if (m.expected_splits && *m.expected_splits != m.split_summary()) {
    const auto got = m.split_summary();
    const auto& want = *m.expected_splits;
    throw DataError("split counts " + std::to_string(got.train) + "/" + std::to_string(got.val) +
                    "/" + std::to_string(got.test) + " differ from declared " +
                    std::to_string(want.train) + "/" + std::to_string(want.val) + "/" +
                    std::to_string(want.test));
  }
  return m;
}

// Writes `m` as manifest.jsonl plus one EMB1 file per present tensor under
// dir/tensors/. Output bytes depend only on the manifest contents.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                           const DatasetManifest& m) {
  detail::check_modalities(m.modalities);
  std::filesystem::create_directories(dir / "tensors");
  const auto manifest_path = dir / "manifest.jsonl";
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + manifest_path.string());
  nlohmann::json header;
  header["format_version"] = m.format_version;
  header["dataset"] = m.dataset;
  header["modalities"] = nlohmann::json::array();
  for (const auto& spec : m.modalities) {
    header["modalities"].push_back({{"name", spec.name},
                                    {"dim", spec.dim},
                                    {"sequential", spec.sequential},
                                    {"encoder_tag", spec.encoder_tag}});
  }
  if (m.expected_splits) {
    header["expected_splits"] = {{"train", m.expected_splits->train},
                                 {"val", m.expected_splits->val},
                                 {"test", m.expected_splits->test}};
  }
  os << header.dump() << '\n';
  for (const auto& r : m.records) {
    nlohmann::json j;
    j["id"] = r.id;
    j["label"] = r.label;
    j["split"] = to_string(r.split);
    j["tensors"] = nlohmann::json::object();
    for (std::size_t k = 0; k < m.modalities.size(); ++k) {
      const auto& name = m.modalities[k].name;
      if (k < r.tensors.size() && r.tensors[k]) {
        validate_tensor(m.modalities[k], *r.tensors[k], r.id);
        const std::string rel = "tensors/" + r.id + "." + name + ".emb";
        write_tensor_file(dir / rel, *r.tensors[k]);
        j["tensors"][name] = rel;
      } else {
        j["tensors"][name] = nullptr;
      }
    }
    os << j.dump() << '\n';
  }
  if (!os) throw FormatError("write failed: " + manifest_path.string());
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Batches

// One modality of a batch: [B x dim] for vectors, [B x T_max x dim] for
// sequences with zero right-padding. `lengths` holds each sample's true T
// (1 for vectors and for absent sequences).
struct ModalityBatch {
  Tensor values;
  std::vector<std::size_t> lengths;
  bool sequential = false;
};

struct Batch {
  std::vector<std::string> ids;
  Tensor labels;  // [B]
  std::vector<ModalityBatch> modalities;
  std::vector<std::uint8_t> presence;  // [B x M], row-major

  std::size_t size() const { return ids.size(); }
  std::size_t modality_count() const { return modalities.size(); }
  bool present(std::size_t b, std::size_t m) const { return presence[b * modalities.size() + m]; }
};

// Materializes the records at `indices` (in that order). Absent modalities
// become zero tensors flagged false in the presence mask.
inline Batch build_batch(const DatasetManifest& m, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("build_batch: no records");
  const std::size_t B = indices.size();
  const std::size_t M = m.modalities.size();
  Batch batch;
  batch.labels = Tensor({B});
  batch.presence.assign(B * M, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& r = m.records.at(indices[b]);
    batch.ids.push_back(r.id);
    batch.labels[b] = static_cast<float>(r.label);
    for (std::size_t k = 0; k < M; ++k) batch.presence[b * M + k] = r.tensors[k].has_value();
  }
  for (std::size_t k = 0; k < M; ++k) {
    const auto& spec = m.modalities[k];
    ModalityBatch mb;
    mb.sequential = spec.sequential;
    mb.lengths.assign(B, 1);
    if (!spec.sequential) {
      mb.values = Tensor({B, spec.dim});
      for (std::size_t b = 0; b < B; ++b) {
        const auto& t = m.records[indices[b]].tensors[k];
        if (t) std::copy(t->data().begin(), t->data().end(), &mb.values[b * spec.dim]);
      }
    } else {
      std::size_t t_max = 1;
      for (std::size_t b = 0; b < B; ++b) {
        const auto& t = m.records[indices[b]].tensors[k];
        if (t) {
          mb.lengths[b] = t->dim(0);
          t_max = std::max(t_max, t->dim(0));
        }
      }
      mb.values = Tensor({B, t_max, spec.dim});
      for (std::size_t b = 0; b < B; ++b) {
        const auto& t = m.records[indices[b]].tensors[k];
        if (t) std::copy(t->data().begin(), t->data().end(), &mb.values[b * t_max * spec.dim]);
      }
    }
    batch.modalities.push_back(std::move(mb));
  }
  return batch;
}

// Record indices of `split` in manifest order, or shuffled by `rng`.
inline std::vector<std::size_t> epoch_order(const DatasetManifest& m, Split split, Rng& rng,
                                            bool shuffle) {
  auto idx = m.split_indices(split);
  if (idx.empty()) throw DataError("split '" + to_string(split) + "' is empty");
  if (shuffle) rng.shuffle(idx);
  return idx;
}

// One epoch of batches; every record of the split appears exactly once and
// only the last batch may be short.
inline std::vector<Batch> make_batches(const DatasetManifest& m, Split split,
                                       std::size_t batch_size, Rng& rng, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const auto idx = epoch_order(m, split, rng, shuffle);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    out.push_back(build_batch(m, {idx.begin() + static_cast<std::ptrdiff_t>(start),
                                  idx.begin() + static_cast<std::ptrdiff_t>(end)}));
  }
  return out;
}

// Replaces every modality not named in `enabled` by zeros and clears its
// presence bits. Disabled sequences keep their padded shape with length 1.
inline Batch apply_modality_mask(Batch batch, const DatasetManifest& m,
                                 const std::set<std::string>& enabled) {
  for (const auto& name : enabled) m.modality_index(name);
  const std::size_t M = m.modalities.size();
  for (std::size_t k = 0; k < M; ++k) {
    if (enabled.count(m.modalities[k].name)) continue;
    auto& mb = batch.modalities[k];
    mb.values = Tensor::zeros(mb.values.shape());
    std::fill(mb.lengths.begin(), mb.lengths.end(), 1);
    for (std::size_t b = 0; b < batch.size(); ++b) batch.presence[b * M + k] = 0;
  }
  return batch;
}

// Same masking applied to a whole manifest (records lose disabled tensors).
inline DatasetManifest mask_manifest(DatasetManifest m, const std::set<std::string>& enabled) {
  for (const auto& name : enabled) m.modality_index(name);
  for (auto& r : m.records)
    for (std::size_t k = 0; k < m.modalities.size(); ++k)
      if (!enabled.count(m.modalities[k].name)) r.tensors[k].reset();
  return m;
}

}  // namespace fusionlab
