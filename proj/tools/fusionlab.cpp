#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fusionlab/fusionlab.hpp"

namespace fs = std::filesystem;
using namespace fusionlab;

namespace {

constexpr int kExitNumeric = 1;
constexpr int kExitUsage = 2;

std::string format_extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Markdown: return "md";
    case ReportFormat::Json: return "json";
  }
  return "txt";
}

std::string config_help() {
  std::ostringstream os;
  os << "Config file keys (flat 'key = value' lines, '#' comments):\n";
  for (const auto& [key, desc] : config_keys()) os << "  " << key << ": " << desc << '\n';
  os << "Seed precedence: --seed, then the file's seed, then FUSIONLAB_SEED, then 0.\n";
  return os.str();
}

struct GenArgs {
  std::string kind = "separable";
  std::size_t n = 200;
  std::uint64_t seed = 0;
  double fraction = 0.3;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  DatasetManifest m;
  if (a.kind == "separable") {
    m = gen_separable(a.n, default_synthetic_modalities(), "text", a.seed);
  } else if (a.kind == "xor") {
    m = gen_confounder_xor(a.n, a.seed);
  } else if (a.kind == "missing") {
    m = gen_missing_modality(a.n, default_synthetic_modalities(), a.fraction, a.seed);
  } else {
    throw ConfigError("unknown dataset kind '" + a.kind + "'");
  }
  const auto path = write_dataset(a.out, m);
  std::cout << "wrote " << m.records.size() << " records to " << path.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig parsed = load_config(a.config);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const RunConfig rc = bind_config(parsed, manifest, resolve_seed(a.seed, parsed.seed));
  const auto result = train(build_model(rc.model), manifest, rc.train);
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "checkpoint.bin", result.best);
  write_train_log(fs::path(a.out) / "train_log.jsonl", result.log);
  std::cout << "best epoch " << result.log.best_epoch << " of " << result.log.epochs.size()
            << "; checkpoint in " << (fs::path(a.out) / "checkpoint.bin").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string format = "csv";
  std::string out;
  float threshold = 0.5f;
};

int cmd_eval(const EvalArgs& a) {
  const ReportFormat format = parse_report_format(a.format);
  const Split split = parse_split(a.split);
  const ModelState model = load_checkpoint(a.checkpoint);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const EvalReport report = evaluate(model, manifest, split, a.threshold);
  if (!report.auroc) {
    std::cerr << "warning: AUROC omitted, split '" << a.split << "' holds a single class\n";
  }
  fs::create_directories(a.out);
  const auto report_path = fs::path(a.out) / ("report." + format_extension(format));
  emit_report({report}, format, report_path);
  write_predictions(fs::path(a.out) / "predictions.jsonl", report);
  std::cout << render_report({report}, ReportFormat::Markdown);
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string manifest;
  std::string grid = "tav";
  std::string out;
  std::string format = "csv";
  std::string split = "test";
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_ablate(const AblateArgs& a) {
  const ReportFormat format = parse_report_format(a.format);
  const Split split = parse_split(a.split);
  const RunConfig parsed = load_config(a.config);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const RunConfig rc = bind_config(parsed, manifest, resolve_seed(a.seed, parsed.seed));
  const auto subsets = ablation_grid(manifest, a.grid);
  const auto runs = run_ablation(rc.model, manifest, subsets, rc.train, split, a.jobs);
  std::vector<EvalReport> rows;
  for (const auto& r : runs) rows.push_back(r.report);
  fs::create_directories(a.out);
  emit_report(rows, format, fs::path(a.out) / ("ablation." + format_extension(format)));
  for (const auto& r : runs) {
    write_predictions(fs::path(a.out) / ("predictions." + r.subset.letters + ".jsonl"), r.report);
  }
  std::cout << render_report(rows, ReportFormat::Markdown);
  return 0;
}

// Rebuilds report rows from JSON report files (values are already rounded).
EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.metrics.f1 = j.at("F1(M)").get<double>();
  r.metrics.precision = j.at("P(M)").get<double>();
  r.metrics.recall = j.at("R(M)").get<double>();
  r.metrics.accuracy = j.at("Acc").get<double>();
  if (!j.at("AUROC").is_null()) r.auroc = j.at("AUROC").get<double>();
  for (const std::string letter : {"T", "A", "V"}) {
    if (j.contains(letter)) r.marks.emplace_back(letter[0], j.at(letter).get<bool>());
  }
  if (j.contains("notes")) r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "markdown";
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  const ReportFormat format = parse_report_format(a.format);
  std::vector<EvalReport> rows;
  for (const auto& in : a.inputs) {
    std::ifstream is(in);
    if (!is) throw FormatError("report not found: " + in);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(in + ": not a JSON report: " + e.what());
    }
    if (!j.is_array()) throw FormatError(in + ": expected a JSON array of rows");
    for (const auto& row : j) rows.push_back(report_from_json(row));
  }
  // Rows from eval carry no check marks; mixing them with ablation rows
  // drops the mark columns rather than guessing them.
  const bool mixed = std::any_of(rows.begin(), rows.end(), [&](const EvalReport& r) {
    return r.marks.size() != rows.front().marks.size();
  });
  if (mixed) {
    std::cerr << "warning: inputs disagree on check-mark columns; dropping them\n";
    for (auto& r : rows) r.marks.clear();
  }
  const std::string text = render_report(rows, format);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream os(a.out, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + a.out);
    os << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion laboratory: generate, train, evaluate, ablate, report."};
  app.require_subcommand(1);
  app.footer(config_help());

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--kind", gen.kind, "separable | xor | missing")
      ->check(CLI::IsMember({"separable", "xor", "missing"}));
  gen_cmd->add_option("--n", gen.n, "Number of records");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--fraction", gen.fraction, "Audio-absent fraction (missing only)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint and log");
  train_cmd->add_option("--config", tr.config, "Config file")->required();
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--seed", tr.seed, "Seed override");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--split", ev.split, "train | val | test");
  eval_cmd->add_option("--format", ev.format, "csv | markdown | json");
  eval_cmd->add_option("--threshold", ev.threshold, "Decision threshold");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate every modality subset");
  ablate_cmd->add_option("--config", ab.config, "Config file")->required();
  ablate_cmd->add_option("--manifest", ab.manifest, "Dataset manifest")->required();
  ablate_cmd->add_option("--grid", ab.grid, "Modality letters, e.g. tav");
  ablate_cmd->add_option("--format", ab.format, "csv | markdown | json");
  ablate_cmd->add_option("--split", ab.split, "Split to evaluate");
  ablate_cmd->add_option("--jobs", ab.jobs, "Subsets trained in parallel");
  ablate_cmd->add_option("--seed", ab.seed, "Seed override");
  ablate_cmd->add_option("--out", ab.out, "Output directory")->required();

  ReportArgs rp;
  auto* report_cmd = app.add_subcommand("report", "Merge JSON reports into one table");
  report_cmd->add_option("inputs", rp.inputs, "JSON report files")->required();
  report_cmd->add_option("--format", rp.format, "csv | markdown | json");
  report_cmd->add_option("--out", rp.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*ablate_cmd) return cmd_ablate(ab);
    if (*report_cmd) return cmd_report(rp);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
