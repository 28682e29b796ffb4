#include "gfusion/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "gfusion/checkpoint.hpp"
#include "gfusion/training.hpp"

namespace gfusion::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string verb_name(Verb v) {
  switch (v) {
    case Verb::train: return "train";
    case Verb::eval: return "eval";
    case Verb::gridsearch: return "gridsearch";
    case Verb::score: return "score";
    case Verb::synth: return "synth";
    case Verb::report: return "report";
  }
  return "?";
}

std::string usage() {
  return R"(usage: gfusion <verb> [options]

verbs:
  synth       write a synthetic cross-modal incongruity manifest
                --out FILE [--seed N] [--n-train N] [--n-val N] [--n-test N]
                [--dim N] [--snr X]
  train       train one gated-fusion model
                --manifest FILE --modalities t,a,v --out DIR
                [--config FILE] [--seed N]
  eval        evaluate a checkpoint on a manifest split
                --manifest FILE --checkpoint FILE --out DIR
                [--modalities t,a,v] [--split train|val|test]
  gridsearch  train every configuration of a hyperparameter grid
                --manifest FILE --modalities t,a,v --out DIR
                [--grid FILE] [--seed N] [--jobs N] [--checkpoints all|best]
  score       score an external predictions file
                --manifest FILE --predictions FILE
                [--split train|val|test] [--out FILE]
  report      aggregate run directories into a comparison table
                RUN_DIR... [--split train|val|test] [--format md|csv] [--out FILE]
)";
}

// ------------------------------------------------------------------- parsing

namespace {

Split parse_split(const std::string& s) {
  const auto split = split_from_name(s);
  if (!split) throw UsageError("unknown split " + s);
  return *split;
}

}  // namespace

Command parse(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("no verb given");

  CLI::App app{"gated multimodal fusion toolkit", kToolName};
  app.require_subcommand(1);
  app.set_help_flag();

  Command cmd;
  std::string modalities;
  std::string split = "test";
  std::string format = "md";
  std::string checkpoints = "all";
  std::uint64_t seed = 0;

  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "seed"); };
  // checked during parsing so a bad list is reported ahead of missing flags
  auto modality_list = [](const std::string& text) {
    try {
      ModalitySet::parse(text);
      return std::string();
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
  };

  auto* synth = app.add_subcommand("synth");
  synth->add_option("--out", cmd.out)->required();
  synth->add_option("--n-train", cmd.synth.n_train);
  synth->add_option("--n-val", cmd.synth.n_val);
  synth->add_option("--n-test", cmd.synth.n_test);
  synth->add_option("--dim", cmd.synth.dim);
  synth->add_option("--snr", cmd.synth.snr);
  add_seed(synth);

  auto* train = app.add_subcommand("train");
  train->add_option("--manifest", cmd.manifest)->required();
  train->add_option("--modalities", modalities)->check(modality_list)->required();
  train->add_option("--config", cmd.config);
  train->add_option("--out", cmd.out)->required();
  add_seed(train);

  auto* eval = app.add_subcommand("eval");
  eval->add_option("--manifest", cmd.manifest)->required();
  eval->add_option("--checkpoint", cmd.checkpoint)->required();
  eval->add_option("--modalities", modalities)->check(modality_list);
  eval->add_option("--split", split);
  eval->add_option("--out", cmd.out)->required();

  auto* grid = app.add_subcommand("gridsearch");
  grid->add_option("--manifest", cmd.manifest)->required();
  grid->add_option("--modalities", modalities)->check(modality_list)->required();
  grid->add_option("--grid", cmd.grid);
  grid->add_option("--out", cmd.out)->required();
  grid->add_option("--jobs", cmd.jobs);
  grid->add_option("--checkpoints", checkpoints);
  add_seed(grid);

  auto* score = app.add_subcommand("score");
  score->add_option("--manifest", cmd.manifest)->required();
  score->add_option("--predictions", cmd.predictions)->required();
  score->add_option("--split", split);
  score->add_option("--out", cmd.out);

  auto* report = app.add_subcommand("report");
  report->add_option("runs", cmd.runs)->required();
  report->add_option("--split", split);
  report->add_option("--format", format);
  report->add_option("--out", cmd.out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  const std::map<CLI::App*, Verb> verbs{
      {synth, Verb::synth}, {train, Verb::train},   {eval, Verb::eval},
      {grid, Verb::gridsearch}, {score, Verb::score}, {report, Verb::report}};
  CLI::App* chosen = app.get_subcommands().front();
  cmd.verb = verbs.at(chosen);

  if (!modalities.empty()) {
    try {
      cmd.modalities = ModalitySet::parse(modalities);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (const CLI::Option* o = chosen->get_option_no_throw("--seed"); o && o->count() > 0) {
    cmd.seed = seed;
  }
  cmd.split = parse_split(split);
  if (format == "md" || format == "markdown") {
    cmd.format = ReportFormat::markdown;
  } else if (format == "csv") {
    cmd.format = ReportFormat::csv;
  } else {
    throw UsageError("unknown format " + format);
  }
  if (checkpoints == "all") {
    cmd.checkpoints = CheckpointPolicy::all;
  } else if (checkpoints == "best") {
    cmd.checkpoints = CheckpointPolicy::best;
  } else {
    throw UsageError("unknown checkpoint policy " + checkpoints);
  }
  if (cmd.jobs == 0) throw UsageError("--jobs must be at least 1");
  if (cmd.verb == Verb::synth) cmd.synth.seed = cmd.seed.value_or(cmd.synth.seed);
  return cmd;
}

// ------------------------------------------------------------------- running

namespace {

constexpr const char* kSentinel = "INCOMPLETE";

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path, const char* flag) {
  if (!fs::is_regular_file(path)) {
    throw std::runtime_error(std::string(flag) + ": no such file " + path.string());
  }
}

// Output directory with an INCOMPLETE sentinel that only `finish` removes.
class RunDir {
 public:
  RunDir(fs::path dir, const Command& cmd) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    write_text(dir_ / kSentinel, "run in progress or failed\n");
    meta_["tool"] = kToolName;
    meta_["version"] = kToolVersion;
    meta_["verb"] = verb_name(cmd.verb);
    meta_["inputs"] = json::object();
    meta_["outputs"] = json::object();
  }

  const fs::path& path() const { return dir_; }
  json& meta() { return meta_; }

  void input(const std::string& role, const fs::path& p) {
    meta_["inputs"][role] = {{"path", p.string()}, {"sha256", sha256_file(p)}};
  }

  void output_json(const std::string& name, const json& j) {
    write_json(dir_ / name, j);
    record(name);
  }

  void output_text(const std::string& name, const std::string& text) {
    write_text(dir_ / name, text);
    record(name);
  }

  void output_checkpoint(const std::string& name, const FusionParams& p) {
    save_checkpoint(p, dir_ / name);
    record(name);
  }

  void finish() {
    write_json(dir_ / "run.json", meta_);
    fs::remove(dir_ / kSentinel);
  }

 private:
  void record(const std::string& name) {
    meta_["outputs"][name] = sha256_file(dir_ / name);
  }

  fs::path dir_;
  json meta_;
};

json split_metrics(const FusionParams& p, const Manifest& m) {
  json j = json::object();
  for (Split s : {Split::val, Split::test}) {
    if (m.split_counts().of(s) == 0) continue;
    j[std::string(split_name(s))] = to_json(evaluate(p, m, s));
  }
  return j;
}

int run_synth(const Command& cmd, std::ostream& out) {
  const Manifest m = synth_incongruity(cmd.synth);
  if (cmd.out.has_parent_path()) fs::create_directories(cmd.out.parent_path());
  save_manifest(m, cmd.out);
  const SplitCounts c = m.split_counts();
  out << "wrote " << cmd.out.string() << " (" << c.train << "/" << c.val << "/" << c.test
      << " train/val/test, dim " << cmd.synth.dim << ", snr " << cmd.synth.snr
      << ", seed " << cmd.synth.seed << ")\n";
  return 0;
}

int run_train(const Command& cmd, std::ostream& out) {
  require_file(cmd.manifest, "--manifest");
  if (!cmd.config.empty()) require_file(cmd.config, "--config");
  const Manifest manifest = load_manifest(cmd.manifest);
  TrainConfig cfg = cmd.config.empty() ? TrainConfig{}
                                       : train_config_from_json(read_json(cmd.config));
  if (cmd.seed) cfg.seed = *cmd.seed;

  RunDir dir(cmd.out, cmd);
  dir.input("manifest", cmd.manifest);
  if (!cmd.config.empty()) dir.input("config", cmd.config);
  const TrainResult result = train(manifest, *cmd.modalities, cfg);
  json config = to_json(cfg);
  config["modalities"] = cmd.modalities->to_string();
  dir.output_json("config.json", config);
  dir.output_json("history.json", to_json(result.history));
  dir.output_checkpoint("model.gfm", result.params);
  // Metrics are computed from the float32 checkpoint so that `eval` on the
  // saved model reproduces them exactly.
  const FusionParams stored = load_checkpoint(dir.path() / "model.gfm");
  const json metrics = split_metrics(stored, manifest);
  dir.output_json("metrics.json", metrics);
  dir.meta()["seed"] = cfg.seed;
  dir.meta()["modalities"] = cmd.modalities->to_string();
  dir.meta()["metrics"] = metrics;
  dir.finish();

  out << "trained " << cmd.modalities->to_string() << " for "
      << result.history.epochs() << " epochs (best epoch " << result.history.best_epoch
      << ", val F1 " << percent(result.history.best_val_f1) << ")\n";
  return 0;
}

int run_eval(const Command& cmd, std::ostream& out) {
  require_file(cmd.manifest, "--manifest");
  require_file(cmd.checkpoint, "--checkpoint");
  const FusionParams params = load_checkpoint(cmd.checkpoint);
  const ModalitySet model_mods = params.shape.modalities();
  if (cmd.modalities && !(*cmd.modalities == model_mods)) {
    throw std::runtime_error("checkpoint modalities " + model_mods.to_string() +
                             " do not match --modalities " + cmd.modalities->to_string());
  }
  const Manifest manifest = load_manifest(cmd.manifest);
  for (Modality m : model_mods.members()) {
    const auto& schema = manifest.schema[index_of(m)];
    if (!schema) {
      throw std::runtime_error("manifest has no " + name_of(m) +
                               " modality required by the checkpoint");
    }
    if (schema->dim != params.shape.raw_dims[index_of(m)]) {
      throw std::runtime_error(name_of(m) + " dim " + std::to_string(schema->dim) +
                               " in manifest, checkpoint expects " +
                               std::to_string(params.shape.raw_dims[index_of(m)]));
    }
  }

  RunDir dir(cmd.out, cmd);
  dir.input("manifest", cmd.manifest);
  dir.input("checkpoint", cmd.checkpoint);
  const SplitPredictions sp = predict(params, manifest, cmd.split);
  if (sp.ids.empty()) {
    throw std::runtime_error("split " + std::string(split_name(cmd.split)) + " is empty");
  }
  std::string lines;
  for (std::size_t i = 0; i < sp.ids.size(); ++i) {
    lines += json{{"id", sp.ids[i]}, {"pred", sp.preds[i]}, {"score", sp.scores[i]}}.dump();
    lines += '\n';
  }
  dir.output_text("predictions.jsonl", lines);
  const MetricsReport report = weighted_prf(confusion(sp.labels, sp.preds));
  json metrics{{std::string(split_name(cmd.split)), to_json(report)}};
  dir.output_json("metrics.json", metrics);
  dir.meta()["modalities"] = model_mods.to_string();
  dir.meta()["split"] = split_name(cmd.split);
  dir.meta()["metrics"] = metrics;
  dir.finish();
  out << split_name(cmd.split) << " P " << percent(report.precision) << " R "
      << percent(report.recall) << " F1 " << percent(report.f1) << "\n";
  return 0;
}

std::string summary_header() {
  return "index,dropout,learning_rate,batch_size,shared_dim,proj_dim,max_epochs,"
         "patience,seed,status,epochs,best_epoch,val_f1\n";
}

// shortest text that reads back as the same double
std::string exact(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string summary_row(const GridRun& run) {
  std::ostringstream row;
  const TrainConfig& c = run.config;
  row << run.index << ',' << exact(c.dropout) << ',' << exact(c.learning_rate) << ','
      << c.batch_size
      << ',' << c.shared_dim << ',' << c.proj_dim << ',' << c.max_epochs << ','
      << c.patience << ',' << c.seed << ',';
  if (run.ok()) {
    row << "ok," << run.history->epochs() << ',' << run.history->best_epoch << ','
        << exact(run.history->best_val_f1);
  } else {
    row << "failed,,,";
  }
  row << '\n';
  return row.str();
}

std::string run_name(std::size_t index) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << index;
  return s.str();
}

int run_gridsearch(const Command& cmd, std::ostream& out, std::ostream& err) {
  require_file(cmd.manifest, "--manifest");
  if (!cmd.grid.empty()) require_file(cmd.grid, "--grid");
  const Manifest manifest = load_manifest(cmd.manifest);
  HyperGrid grid = cmd.grid.empty() ? HyperGrid{} : hyper_grid_from_json(read_json(cmd.grid));
  if (cmd.seed) grid.seed = *cmd.seed;

  RunDir dir(cmd.out, cmd);
  dir.input("manifest", cmd.manifest);
  if (!cmd.grid.empty()) dir.input("grid", cmd.grid);
  dir.output_json("grid.json", to_json(grid));
  fs::create_directories(dir.path() / "runs");

  GridOptions opts;
  opts.jobs = cmd.jobs;
  opts.on_run = [&](const GridRun& run, const FusionParams* params) {
    RunDir sub(dir.path() / "runs" / run_name(run.index), cmd);
    json config = to_json(run.config);
    config["modalities"] = cmd.modalities->to_string();
    sub.output_json("config.json", config);
    if (!run.ok()) {
      err << "config " << run.index << " failed: " << run.error << "\n";
      sub.output_text("error.txt", run.error + "\n");
      sub.finish();
      return;
    }
    sub.output_json("history.json", to_json(*run.history));
    sub.meta()["seed"] = run.config.seed;
    sub.meta()["val_f1"] = run.history->best_val_f1;
    if (cmd.checkpoints == CheckpointPolicy::all) {
      sub.output_checkpoint("model.gfm", *params);
    }
    sub.finish();
  };
  const GridResult result = grid_search(manifest, *cmd.modalities, grid, opts);

  std::string summary = summary_header();
  std::size_t failed = 0;
  for (const GridRun& run : result.runs) {
    summary += summary_row(run);
    if (!run.ok()) ++failed;
  }
  dir.output_text("summary.csv", summary);

  dir.output_checkpoint("best_model.gfm", result.best_params);
  const FusionParams stored = load_checkpoint(dir.path() / "best_model.gfm");
  const json metrics = split_metrics(stored, manifest);
  dir.output_json("metrics.json", metrics);
  json best = to_json(result.best_config);
  best["index"] = result.best_index;
  best["val_f1"] = result.runs[result.best_index].val_f1();
  best["modalities"] = cmd.modalities->to_string();
  dir.output_json("best.json", best);
  dir.meta()["seed"] = grid.seed;
  dir.meta()["modalities"] = cmd.modalities->to_string();
  dir.meta()["configs"] = result.runs.size();
  dir.meta()["failed"] = failed;
  dir.meta()["metrics"] = metrics;
  dir.finish();

  out << "grid: " << result.runs.size() << " configs, " << failed << " failed; best #"
      << result.best_index << " val F1 " << percent(result.runs[result.best_index].val_f1())
      << "\n";
  return 0;
}

int run_score(const Command& cmd, std::ostream& out) {
  require_file(cmd.manifest, "--manifest");
  require_file(cmd.predictions, "--predictions");
  const Manifest manifest = load_manifest(cmd.manifest);
  const ScoreResult res = score_predictions(manifest, cmd.predictions, cmd.split);
  out << render_report({{cmd.predictions.stem().string(), res.report}},
                       ReportFormat::markdown);
  out << "coverage " << res.scored << "/" << res.expected << "\n";
  if (!cmd.out.empty()) {
    json j = to_json(res.report);
    j["scored"] = res.scored;
    j["expected"] = res.expected;
    j["split"] = split_name(cmd.split);
    if (cmd.out.has_parent_path()) fs::create_directories(cmd.out.parent_path());
    write_json(cmd.out, j);
  }
  return 0;
}

int run_report(const Command& cmd, std::ostream& out) {
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const fs::path& run : cmd.runs) {
    if (!fs::is_directory(run)) throw std::runtime_error("not a run directory: " + run.string());
    if (fs::exists(run / kSentinel)) {
      throw std::runtime_error("run directory is incomplete: " + run.string());
    }
    const json metrics = read_json(run / "metrics.json");
    const std::string key(split_name(cmd.split));
    if (!metrics.contains(key)) {
      throw std::runtime_error(run.string() + " has no " + key + " metrics");
    }
    const fs::path clean = run.has_filename() ? run : run.parent_path();
    rows.emplace_back(clean.filename().string(), metrics_report_from_json(metrics[key]));
  }
  const std::string text = render_report(rows, cmd.format);
  if (cmd.out.empty()) {
    out << text;
  } else {
    if (cmd.out.has_parent_path()) fs::create_directories(cmd.out.parent_path());
    emit_report(rows, cmd.format, cmd.out);
  }
  return 0;
}

}  // namespace

int run(const Command& cmd, std::ostream& out, std::ostream& err) {
  try {
    switch (cmd.verb) {
      case Verb::synth: return run_synth(cmd, out);
      case Verb::train: return run_train(cmd, out);
      case Verb::eval: return run_eval(cmd, out);
      case Verb::gridsearch: return run_gridsearch(cmd, out, err);
      case Verb::score: return run_score(cmd, out);
      case Verb::report: return run_report(cmd, out);
    }
  } catch (const std::exception& e) {
    err << kToolName << " " << verb_name(cmd.verb) << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int main_entry(const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  Command cmd;
  try {
    if (!args.empty() && (args.front() == "--help" || args.front() == "-h")) {
      out << usage();
      return 0;
    }
    cmd = parse(args);
  } catch (const UsageError& e) {
    err << kToolName << ": " << e.what() << "\n\n" << usage();
    return 2;
  }
  return run(cmd, out, err);
}

}  // namespace gfusion::cli
