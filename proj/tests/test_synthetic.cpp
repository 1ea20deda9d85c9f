#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace fusionlab;
using namespace fusionlab::testing;

namespace {

// Side of the origin `t` falls on along `direction`.
int sign_bit(const Tensor& t, const Tensor& direction) {
  double s = 0.0;
  const std::size_t d = direction.size();
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * direction[i % d];
  return s > 0.0 ? 1 : 0;
}

// Plug-in mutual information (nats) between two binary variables.
double mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  double joint[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) joint[a[i]][b[i]] += 1.0;
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      const double pxy = joint[x][y] / n;
      const double px = (joint[x][0] + joint[x][1]) / n;
      const double py = (joint[0][y] + joint[1][y]) / n;
      if (pxy > 0.0) mi += pxy * std::log(pxy / (px * py));
    }
  return mi;
}

// Decodes the two latent bits of a confounder record. Records 0 and 3 sit in
// quadrants (0, 0) and (1, 1); a record's bit is the side of their midpoint it
// falls on along their difference. The midpoint cancels the positional
// offsets added to text tokens.
int side_of_midpoint(const Tensor& x, const Tensor& lo, const Tensor& hi) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += (x[i] - 0.5 * (double(lo[i]) + double(hi[i]))) * (double(hi[i]) - double(lo[i]));
  return s > 0.0 ? 1 : 0;
}

std::pair<int, int> decode_bits(const DatasetManifest& m, const EmbeddingRecord& r) {
  const auto& lo = m.records[0];
  const auto& hi = m.records[3];
  return {side_of_midpoint(*r.tensors[0], *lo.tensors[0], *hi.tensors[0]),
          side_of_midpoint(*r.tensors[1], *lo.tensors[1], *hi.tensors[1])};
}

}  // namespace

TEST(Separable, BalancedStratifiedAndValid) {
  const auto m = gen_separable(200, default_synthetic_modalities(), "text", 1);
  EXPECT_EQ(m.records.size(), 200u);
  std::size_t pos = 0;
  for (const auto& r : m.records) pos += r.label;
  EXPECT_EQ(pos, 100u);
  EXPECT_EQ(m.split_summary(), (SplitCounts{120, 40, 40}));
  for (const auto& r : m.records)
    for (std::size_t k = 0; k < m.modalities.size(); ++k)
      validate_tensor(m.modalities[k], *r.tensors[k], r.id);
}

TEST(Separable, InformativeModalityIsLinearlySeparable) {
  const auto m = gen_separable(200, default_synthetic_modalities(), "text", 2);
  // Class means give a separating direction; every record lands on its side.
  const std::size_t d = m.modalities[0].dim;
  std::vector<double> mean[2] = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& r : m.records)
    for (std::size_t j = 0; j < d; ++j) mean[r.label][j] += (*r.tensors[0])[j];
  Tensor w({d});
  for (std::size_t j = 0; j < d; ++j) w[j] = static_cast<float>(mean[1][j] - mean[0][j]);
  for (const auto& r : m.records) EXPECT_EQ(sign_bit(*r.tensors[0], w), r.label) << r.id;
}

TEST(Separable, SameSeedSameBytes) {
  TempDir a("gen"), b("gen");
  write_dataset(a.path(), gen_separable(20, default_synthetic_modalities(), "text", 3));
  write_dataset(b.path(), gen_separable(20, default_synthetic_modalities(), "text", 3));
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  for (const auto& entry : std::filesystem::directory_iterator(a / "tensors")) {
    const auto name = entry.path().filename().string();
    EXPECT_EQ(slurp(entry.path()), slurp(b / ("tensors/" + name))) << name;
  }
}

TEST(Separable, TooFewRecordsIsConfigError) {
  EXPECT_THROW(gen_separable(7, default_synthetic_modalities(), "text", 1), ConfigError);
}

TEST(Xor, DecodedBitsFillEachQuadrantEqually) {
  const auto m = gen_confounder_xor(400, 1);
  std::array<int, 4> counts{};
  for (const auto& r : m.records) {
    const auto [bt, bv] = decode_bits(m, r);
    ++counts[2 * bt + bv];
  }
  for (int c : counts) EXPECT_EQ(c, 100);
}

TEST(Xor, DecodedBitXorRecoversEveryLabel) {
  const auto m = gen_confounder_xor(400, 2);
  for (const auto& r : m.records) {
    const auto [bt, bv] = decode_bits(m, r);
    EXPECT_EQ(bt ^ bv, r.label) << r.id;
  }
}

TEST(Xor, EitherBitAloneCarriesNoLabelInformation) {
  const auto m = gen_confounder_xor(1000, 3);
  std::vector<int> bt, bv, y;
  for (const auto& r : m.records) {
    const auto [t, v] = decode_bits(m, r);
    bt.push_back(t);
    bv.push_back(v);
    y.push_back(r.label);
  }
  EXPECT_LE(mutual_information(bt, y), 0.01);
  EXPECT_LE(mutual_information(bv, y), 0.01);
  // The pair determines the label: I(bits; y) = ln 2.
  std::vector<int> joint;
  for (std::size_t i = 0; i < bt.size(); ++i) joint.push_back(bt[i] ^ bv[i]);
  EXPECT_NEAR(mutual_information(joint, y), std::log(2.0), 1e-9);
}

TEST(Xor, StratifiedSplits) {
  const auto m = gen_confounder_xor(400, 4);
  EXPECT_EQ(m.split_summary(), (SplitCounts{240, 80, 80}));
  std::array<int, 4> test_quadrants{};
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split == Split::Test) ++test_quadrants[i % 4];
  for (int c : test_quadrants) EXPECT_EQ(c, 20);
}

TEST(Xor, OddOrSmallNIsConfigError) {
  EXPECT_THROW(gen_confounder_xor(401, 1), ConfigError);
  EXPECT_THROW(gen_confounder_xor(14, 1), ConfigError);
}

TEST(Missing, FractionZeroHasNoAbsentRecords) {
  const auto m = gen_missing_modality(50, default_synthetic_modalities(), 0.0, 1);
  for (const auto& r : m.records)
    for (const auto& t : r.tensors) EXPECT_TRUE(t.has_value());
}

TEST(Missing, FractionOneDropsAllAudio) {
  const auto m = gen_missing_modality(50, default_synthetic_modalities(), 1.0, 2);
  const std::size_t a = m.modality_index("audio");
  for (const auto& r : m.records) EXPECT_FALSE(r.tensors[a].has_value());
  ModelConfig cfg = config_for(m, FusionTag::EarlyConcat);
  cfg.lstm_hidden = 4;
  cfg.head_hidden = 4;
  TrainConfig t;
  t.max_epochs = 2;
  const auto r = train(build_model(cfg), m, t);
  for (const auto& e : r.log.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(Missing, DeclaredFractionIsExactAndManifestValidates) {
  TempDir dir("missing");
  const auto m = gen_missing_modality(200, default_synthetic_modalities(), 0.3, 3);
  const std::size_t a = m.modality_index("audio");
  std::size_t absent = 0;
  for (const auto& r : m.records) absent += !r.tensors[a].has_value();
  EXPECT_EQ(absent, 60u);
  const auto loaded = load_manifest(write_dataset(dir.path(), m));
  std::size_t reloaded_absent = 0;
  for (const auto& r : loaded.records) reloaded_absent += !r.tensors[a].has_value();
  EXPECT_EQ(reloaded_absent, 60u);
}

TEST(Missing, BatchesHoldZerosExactlyWhereAbsent) {
  const auto m = gen_missing_modality(40, default_synthetic_modalities(), 0.5, 4);
  const std::size_t a = m.modality_index("audio");
  std::vector<std::size_t> all(m.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch b = build_batch(m, all);
  const auto& mb = b.modalities[a];
  const std::size_t row = mb.values.dim(1) * mb.values.dim(2);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(b.present(i, a), m.records[i].tensors[a].has_value());
    bool any_nonzero = false;
    for (std::size_t j = 0; j < row; ++j) any_nonzero = any_nonzero || mb.values[i * row + j] != 0.0f;
    EXPECT_EQ(any_nonzero, b.present(i, a)) << i;
  }
}

TEST(Missing, BadArgumentsAreConfigErrors) {
  EXPECT_THROW(gen_missing_modality(20, default_synthetic_modalities(), 1.5, 1), ConfigError);
  EXPECT_THROW(gen_missing_modality(20, default_synthetic_modalities(), 0.3, 1, "text"),
               ConfigError);
}
