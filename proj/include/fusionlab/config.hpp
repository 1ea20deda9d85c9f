#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fusionlab/training.hpp"

namespace fusionlab {

// Everything a run needs besides the manifest. Modalities are taken from the
// manifest when the run starts.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::optional<std::uint64_t> seed;  // set only when the file names one
};

inline constexpr std::uint64_t kDefaultSeed = 0;

// Keys accepted in config files, with a one-line description each.
inline const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys{
      {"strategy", "early_concat | early_product | late_weighted | late_stacked | mo_hate"},
      {"order", "mo_hate fusion order, comma separated, anchor first (text,audio,vision)"},
      {"lstm_hidden", "LSTM hidden width for sequential modalities (128)"},
      {"head_hidden", "hidden width of the MLP head (128)"},
      {"attn_dim", "attention key width d_k (64)"},
      {"max_seq_len", "longest sequence mo_hate accepts (100)"},
      {"dropout", "dropout probability in [0, 1) (0.2)"},
      {"batch_size", "mini-batch size (32)"},
      {"lr", "Adam learning rate (1e-4)"},
      {"max_epochs", "epoch cap (20)"},
      {"patience", "early-stopping patience in epochs (5)"},
      {"beta1", "Adam beta1 (0.9)"},
      {"beta2", "Adam beta2 (0.999)"},
      {"adam_eps", "Adam epsilon (1e-8)"},
      {"threshold", "decision threshold on scores (0.5)"},
      {"seed", "seed for initialization, shuffling and dropout (0)"},
  };
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

// Flat "key = value" lines; '#' starts a comment; blank lines are ignored.
// Unknown or repeated keys are errors.
inline RunConfig parse_config(std::istream& is, const std::string& source = "<config>") {
  RunConfig rc;
  std::map<std::string, std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected 'key = value'");
    if (!seen.emplace(key, value).second) throw ConfigError(where + ": repeated key '" + key + "'");
    auto& m = rc.model;
    auto& t = rc.train;
    using detail::parse_number;
    if (key == "strategy") m.strategy = parse_fusion_tag(value);
    else if (key == "order") m.order = detail::split_list(value);
    else if (key == "lstm_hidden") m.lstm_hidden = parse_number<std::size_t>(key, value);
    else if (key == "head_hidden") m.head_hidden = parse_number<std::size_t>(key, value);
    else if (key == "attn_dim") m.attn_dim = parse_number<std::size_t>(key, value);
    else if (key == "max_seq_len") m.max_seq_len = parse_number<std::size_t>(key, value);
    else if (key == "dropout") m.dropout = parse_number<float>(key, value);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "lr") t.lr = parse_number<float>(key, value);
    else if (key == "max_epochs") t.max_epochs = parse_number<std::size_t>(key, value);
    else if (key == "patience") t.patience = parse_number<std::size_t>(key, value);
    else if (key == "beta1") t.beta1 = parse_number<double>(key, value);
    else if (key == "beta2") t.beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") t.adam_eps = parse_number<double>(key, value);
    else if (key == "threshold") t.threshold = parse_number<float>(key, value);
    else if (key == "seed") rc.seed = parse_number<std::uint64_t>(key, value);
    else throw ConfigError(where + ": unknown key '" + key + "'");
  }
  rc.train.validate();
  return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config not found: " + path.string());
  return parse_config(is, path.string());
}

// Seed precedence: command-line flag, then config file, then the
// FUSIONLAB_SEED environment variable, then kDefaultSeed.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag,
                                  std::optional<std::uint64_t> file) {
  if (flag) return *flag;
  if (file) return *file;
  if (const char* env = std::getenv("FUSIONLAB_SEED"); env && *env) {
    return detail::parse_number<std::uint64_t>("FUSIONLAB_SEED", env);
  }
  return kDefaultSeed;
}

// Completes a parsed config against a manifest: modalities from the manifest
// and the resolved seed for both initialization and training.
inline RunConfig bind_config(RunConfig rc, const DatasetManifest& manifest, std::uint64_t seed) {
  rc.model.modalities = manifest.modalities;
  rc.model.seed = seed;
  rc.train.seed = seed;
  rc.model.validate();
  return rc;
}

}  // namespace fusionlab
