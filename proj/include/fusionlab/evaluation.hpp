#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fusionlab/metrics.hpp"
#include "fusionlab/training.hpp"

namespace fusionlab {

struct SamplePrediction {
  std::string id;
  float score = 0.0f;
  int label = 0;
  int pred = 0;
};

// One row of a results table. `marks` holds the ablation check-mark columns
// (letter, enabled) and is empty for plain evaluations.
struct EvalReport {
  std::string model;
  ConfusionCounts counts;
  MacroMetrics metrics;
  std::optional<double> auroc;  // empty when the split holds one class
  std::vector<SamplePrediction> samples;
  std::vector<std::pair<char, bool>> marks;
  std::vector<std::string> notes;
};

inline EvalReport evaluate(const ModelState& model, const DatasetManifest& manifest, Split split,
                           float threshold = 0.5f) {
  check_compatible(model.config, manifest);
  const auto s = score_split(model, manifest, split);
  const auto preds = predict_labels(Tensor({s.scores.size()}, s.scores), threshold);
  EvalReport r;
  r.model = to_string(model.config.strategy);
  r.counts = compute_confusion(preds, s.labels);
  r.metrics = macro_metrics(r.counts);
  if (r.counts.tp + r.counts.fn > 0 && r.counts.tn + r.counts.fp > 0) {
    r.auroc = auroc(s.scores, s.labels);
  } else {
    r.notes.push_back("AUROC undefined: split '" + to_string(split) + "' holds a single class");
  }
  if (r.metrics.zero_division) {
    r.notes.push_back("a precision or recall denominator was zero and was scored as 0");
  }
  if (model.config.strategy == FusionTag::EarlyProduct &&
      model.config.product_projection_width() != 0) {
    r.notes.push_back("early_product used learned projections to a common width");
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.samples.push_back({s.ids[i], s.scores[i], s.labels[i], preds[i]});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationSubset {
  std::string letters;  // upper case, e.g. "TA"
  std::set<std::string> modalities;
};

// Resolves each grid letter to the manifest modality whose name starts with
// it, then lists all non-empty subsets by size and, within a size, in grid
// order: "tav" gives T, A, V, TA, TV, AV, TAV.
inline std::vector<AblationSubset> ablation_grid(const DatasetManifest& manifest,
                                                 const std::string& grid) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  std::vector<std::pair<char, std::string>> letters;
  for (char ch : grid) {
    const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    for (const auto& [l, _] : letters)
      if (l == lower) throw ConfigError(std::string("grid letter '") + ch + "' repeated");
    std::vector<std::string> hits;
    for (const auto& m : manifest.modalities)
      if (!m.name.empty() &&
          std::tolower(static_cast<unsigned char>(m.name.front())) == lower)
        hits.push_back(m.name);
    if (hits.empty()) {
      throw ConfigError(std::string("grid letter '") + ch + "' matches no modality");
    }
    if (hits.size() > 1) {
      throw ConfigError(std::string("grid letter '") + ch + "' matches several modalities");
    }
    letters.emplace_back(lower, hits.front());
  }
  const std::size_t n = letters.size();
  std::vector<AblationSubset> out;
  for (std::size_t size = 1; size <= n; ++size) {
    // Index combinations of `size` in lexicographic order.
    std::vector<std::size_t> pick(size);
    for (std::size_t i = 0; i < size; ++i) pick[i] = i;
    while (true) {
      AblationSubset s;
      for (auto i : pick) {
        s.letters += static_cast<char>(std::toupper(static_cast<unsigned char>(letters[i].first)));
        s.modalities.insert(letters[i].second);
      }
      out.push_back(std::move(s));
      std::size_t i = size;
      while (i > 0 && pick[i - 1] == n - size + i - 1) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < size; ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  return out;
}

struct AblationRun {
  AblationSubset subset;
  EvalReport report;
  TrainResult trained;
};

// Trains a fresh model per subset on the manifest with every other modality
// masked out, and evaluates it on `split`. Each run starts from the same
// seeds, so results do not depend on `jobs`.
inline std::vector<AblationRun> run_ablation(const ModelConfig& config,
                                             const DatasetManifest& manifest,
                                             const std::vector<AblationSubset>& subsets,
                                             const TrainConfig& train_cfg,
                                             Split split = Split::Test, std::size_t jobs = 1) {
  if (subsets.empty()) throw ContractError("run_ablation: no subsets");
  if (jobs == 0) throw ConfigError("jobs must be >= 1");
  check_compatible(config, manifest);
  train_cfg.validate();
  std::string grid_letters;
  for (const auto& s : subsets)
    if (s.letters.size() == 1) grid_letters += s.letters;
  const auto run_one = [&](const AblationSubset& subset) {
    const auto masked = mask_manifest(manifest, subset.modalities);
    AblationRun run;
    run.subset = subset;
    run.trained = train(build_model(config), masked, train_cfg);
    run.report = evaluate(run.trained.best, masked, split, train_cfg.threshold);
    run.report.model = subset.letters;
    for (char l : grid_letters)
      run.report.marks.emplace_back(l, subset.letters.find(l) != std::string::npos);
    return run;
  };
  std::vector<AblationRun> out(subsets.size());
  for (std::size_t start = 0; start < subsets.size(); start += jobs) {
    const std::size_t end = std::min(subsets.size(), start + jobs);
    if (jobs == 1) {
      out[start] = run_one(subsets[start]);
      continue;
    }
    std::vector<std::future<AblationRun>> wave;
    for (std::size_t i = start; i < end; ++i)
      wave.push_back(std::async(std::launch::async, run_one, std::cref(subsets[i])));
    for (std::size_t i = start; i < end; ++i) out[i] = wave[i - start].get();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { Csv, Markdown, Json };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  if (s == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + s + "'");
}

// Round half to even at 3 decimals (0.8485 -> 0.848, 0.8495 -> 0.850), applied
// to the decimal value nearest the double.
inline double round3(double x) { return std::nearbyint(x * 1000.0) / 1000.0; }

inline std::string format3(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", round3(x));
  return buf;
}

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"model", "F1(M)", "P(M)", "R(M)", "Acc", "AUROC"};
  return cols;
}

inline std::vector<std::string> report_cells(const EvalReport& r) {
  std::vector<std::string> cells{r.model,
                                 format3(r.metrics.f1),
                                 format3(r.metrics.precision),
                                 format3(r.metrics.recall),
                                 format3(r.metrics.accuracy),
                                 r.auroc ? format3(*r.auroc) : std::string{}};
  for (const auto& [_, on] : r.marks) cells.push_back(on ? "x" : "");
  return cells;
}

inline std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
  if (reports.empty()) throw ContractError("emit_report: no reports");
  auto header = report_columns();
  for (const auto& [letter, _] : reports.front().marks)
    header.push_back(std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(letter)))));
  for (const auto& r : reports) {
    if (r.marks.size() != reports.front().marks.size()) {
      throw ContractError("emit_report: rows disagree on check-mark columns");
    }
  }
  std::ostringstream os;
  switch (format) {
    case ReportFormat::Csv: {
      const auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << '\n';
      };
      line(header);
      for (const auto& r : reports) line(report_cells(r));
      break;
    }
    case ReportFormat::Markdown: {
      const auto line = [&](const std::vector<std::string>& cells) {
        os << '|';
        for (const auto& c : cells) os << ' ' << c << " |";
        os << '\n';
      };
      line(header);
      os << '|';
      for (std::size_t i = 0; i < header.size(); ++i) os << (i == 0 ? " --- |" : " ---: |");
      os << '\n';
      for (const auto& r : reports) line(report_cells(r));
      std::set<std::string> notes;
      for (const auto& r : reports)
        for (const auto& n : r.notes) notes.insert(r.model + ": " + n);
      if (!notes.empty()) os << '\n';
      for (const auto& n : notes) os << "- " << n << '\n';
      break;
    }
    case ReportFormat::Json: {
      auto rows = nlohmann::json::array();
      for (const auto& r : reports) {
        nlohmann::json j;
        j["model"] = r.model;
        j["F1(M)"] = round3(r.metrics.f1);
        j["P(M)"] = round3(r.metrics.precision);
        j["R(M)"] = round3(r.metrics.recall);
        j["Acc"] = round3(r.metrics.accuracy);
        j["AUROC"] = r.auroc ? nlohmann::json(round3(*r.auroc)) : nlohmann::json(nullptr);
        for (const auto& [letter, on] : r.marks)
          j[std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(letter))))] = on;
        j["confusion"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn},
                          {"fn", r.counts.fn}};
        j["zero_division"] = r.metrics.zero_division;
        j["notes"] = r.notes;
        rows.push_back(j);
      }
      os << rows.dump(2) << '\n';
      break;
    }
  }
  return os.str();
}

inline void emit_report(const std::vector<EvalReport>& reports, ReportFormat format,
                        const std::filesystem::path& path) {
  const std::string text = render_report(reports, format);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw FormatError("write failed: " + path.string());
}

// Per-sample dump, one JSON object per line: id, score, label, pred.
inline void write_predictions(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  for (const auto& s : report.samples) {
    nlohmann::json j;
    j["id"] = s.id;
    j["score"] = s.score;
    j["label"] = s.label;
    j["pred"] = s.pred;
    os << j.dump() << '\n';
  }
}

}  // namespace fusionlab
