#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmttt/errors.hpp"
#include "mmttt/experiment.hpp"

using namespace mmttt;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigExit = 2, kDataExit = 3, kDivergenceExit = 4 };

struct RunFlags {
  std::string config;
  std::vector<std::string> ablate;
  std::size_t folds = 0;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--ablate", f.ablate, "drop a component: ttt, mlm, trans, v, a (repeatable)")
      ->check(CLI::IsMember({"ttt", "mlm", "trans", "v", "a"}));
  cmd->add_option("--folds", f.folds, "number of event folds");
  cmd->add_option("--seed", f.seed, "seed for data generation, splitting and training");
  cmd->add_option("--jobs", f.jobs, "folds run in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output directory (overrides output.dir)");
}

ExperimentConfig resolve(const RunFlags& f) {
  ExperimentConfig cfg = load_config(f.config);
  for (const auto& a : f.ablate) apply_ablation(cfg.train.ablation, a);
  if (f.folds) {
    if (f.folds < 2) throw ConfigError("--folds must be >= 2");
    cfg.split.folds = f.folds;
  }
  if (f.seed) apply_seed(cfg, *f.seed);
  if (!f.out.empty()) cfg.output.dir = f.out;
  return cfg;
}

void print_summary(const ExperimentResult& r) {
  for (const auto& f : r.folds) {
    std::printf("fold %zu  train=%zu test=%zu  acc=%.4f macro_f1=%.4f", f.fold, f.train_size, f.test_size,
                f.metrics.accuracy, f.metrics.macro_f1);
    if (f.ttt_report && f.ttt_report->mlm_before)
      std::printf("  mlm %.4f -> %.4f", *f.ttt_report->mlm_before, *f.ttt_report->mlm_after);
    std::printf("  (%.1fs)\n", f.seconds);
  }
  std::printf("mean  acc=%.4f (std %.4f) macro_f1=%.4f  fake f1=%.4f real f1=%.4f  [%.1fs]\n", r.mean.accuracy,
              r.accuracy_std, r.mean.macro_f1, r.mean.fake.f1, r.mean.real.f1, r.seconds);
}

int cmd_synth(const std::string& config, std::optional<std::uint64_t> seed, std::size_t events,
              std::size_t per_event, const std::string& format, const std::string& out) {
  ShiftConfig sc;
  if (!config.empty()) {
    ExperimentConfig cfg = load_config(config);
    if (!cfg.dataset.synthetic) throw ConfigError("config has no dataset.synthetic section");
    sc = *cfg.dataset.synthetic;
  }
  if (seed) sc.seed = *seed;
  if (events) sc.n_events = events;
  if (per_event) sc.samples_per_event = per_event;
  const Dataset ds = synthesize_dataset(sc);
  write_dataset(out, ds, format == "f32" ? StorageMode::kF32Sidecar : StorageMode::kJson);
  const auto shifted = shifted_event_ids(sc);
  std::printf("wrote %zu records (%zu events, %zu shifted) to %s\n", ds.records.size(), sc.n_events, shifted.size(),
              out.c_str());
  return kOk;
}

int cmd_validate(const std::string& dir) {
  const Dataset ds = load_dataset(dir);
  std::size_t fake = 0;
  std::set<std::string> events;
  for (const auto& r : ds.records) {
    fake += r.label == kFake;
    events.insert(r.sample.event_id);
  }
  std::printf("ok: %zu records, %zu events, %zu fake / %zu real, V=%zu d_t=%zu d_i=%zu d_v=%zu d_a=%zu\n",
              ds.records.size(), events.size(), fake, ds.records.size() - fake, ds.header.V, ds.header.d_t,
              ds.header.d_i, ds.header.d_v, ds.header.d_a);
  return kOk;
}

int cmd_run(const RunFlags& flags, bool train_only) {
  ExperimentConfig cfg = resolve(flags);
  if (train_only) {
    cfg.train.ablation.no_ttt = true;
    cfg.output.checkpoints = true;
  }
  const fs::path out = cfg.output.dir;
  const ExperimentRun run = run_experiment(cfg, flags.jobs, out);
  print_summary(run.result);
  std::printf("report: %s\n", (out / "report.json").c_str());
  return kOk;
}

// Adapts and evaluates a saved model on every record of the configured dataset.
int cmd_checkpoint_eval(const RunFlags& flags, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve(flags);
  const Dataset ds = materialize_dataset(cfg.dataset);
  if (ds.records.empty()) throw DataError("dataset has no records");
  Model model = load_checkpoint(checkpoint);
  if (!(dims_from_header(ds.header) == model.dims)) throw DataError("checkpoint dimensions do not match the dataset");
  const auto samples = strip_labels(ds.records);
  const bool run_ttt = !cfg.train.ablation.no_ttt && !cfg.train.ablation.no_mlm && cfg.train.mask_ratio > 0.0;
  nlohmann::json report{{"config", config_to_json(cfg)}, {"checkpoint", checkpoint}};
  std::vector<Prediction> preds(samples.size());
  if (run_ttt) {
    const bool online = cfg.train.ttt_mode == TttMode::kOnlineBatch;
    PredictionSink sink;
    if (online)
      sink = [&preds](std::span<const std::size_t> idx, std::span<const Prediction> p) {
        for (std::size_t k = 0; k < idx.size(); ++k) preds[idx[k]] = p[k];
      };
    const PhaseReport ttt = ttt_adapt(model, samples, cfg.train, sink);
    if (!online) preds = predict(model, samples, cfg.train.ablation);
    report["ttt"] = phase_to_json(ttt);
    std::printf("ttt: mlm %.4f -> %.4f\n", *ttt.mlm_before, *ttt.mlm_after);
  } else {
    preds = predict(model, samples, cfg.train.ablation);
  }
  std::vector<int> predicted, labels;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    predicted.push_back(preds[i].label);
    labels.push_back(ds.records[i].label);
  }
  const MetricsReport m = compute_metrics(predicted, labels);
  report["metrics"] = metrics_to_json(m);
  write_text_file(fs::path(cfg.output.dir) / "report.json", report.dump(2) + "\n");
  std::printf("acc=%.4f macro_f1=%.4f on %zu records\n", m.accuracy, m.macro_f1, m.total);
  return kOk;
}

int cmd_sweep(const RunFlags& flags, const std::string& param_name, const std::vector<double>& values,
              std::size_t seeds) {
  const ExperimentConfig cfg = resolve(flags);
  const SweepParam param = sweep_param_from_string(param_name);
  const SweepResult result = sweep(cfg, param, values, seeds, flags.jobs, [&](const SweepPoint& p) {
    std::printf("%s=%g  acc=%.4f ± %.4f  final train loss %.4f ± %.4f  (%.1fs)\n", param_name.c_str(), p.value,
                p.mean_accuracy, p.std_accuracy, p.mean_final_train_loss, p.std_final_train_loss, p.seconds);
    std::fflush(stdout);
  });
  const fs::path out = cfg.output.dir;
  const std::string stem = "sweep_" + to_string(param);
  write_sweep_csv(out / (stem + ".csv"), result);
  write_text_file(out / (stem + ".json"), sweep_to_json(result).dump(2) + "\n");
  if (cfg.output.plots) write_sweep_svg(out / (stem + ".svg"), result);
  std::printf("wrote %s.{csv,json%s} to %s\n", stem.c_str(), cfg.output.plots ? ",svg" : "", out.c_str());
  return kOk;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

int cmd_extract(const std::string& manifest, const std::string& out) {
  const char* custom = std::getenv("MMTTT_EXTRACTOR");
  const std::string base = custom ? custom : "python3 -m mmttt_extract";
  if (!custom && std::system("python3 -c 'import mmttt_extract' >/dev/null 2>&1") != 0)
    throw ConfigError("the feature extractor (python package mmttt_extract) is not installed; "
                      "install it or point MMTTT_EXTRACTOR at an extractor command");
  const std::string cmd = base + " --manifest " + shell_quote(manifest) + " --out " + shell_quote(out);
  const int status = std::system(cmd.c_str());
  if (status != 0) throw DataError("extractor failed: " + cmd);
  load_dataset(out);
  std::printf("extracted dataset validated: %s\n", out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fake-news video detection with test-time training"};
  app.require_subcommand(1);

  std::string synth_config, synth_out, synth_format = "json";
  std::optional<std::uint64_t> synth_seed;
  std::size_t synth_events = 0, synth_per_event = 0;
  auto* synth = app.add_subcommand("synth", "generate the synthetic shifted benchmark");
  synth->add_option("--config", synth_config, "config whose dataset.synthetic section is used")
      ->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--events", synth_events, "number of events");
  synth->add_option("--per-event", synth_per_event, "videos per event");
  synth->add_option("--format", synth_format, "matrix storage")->check(CLI::IsMember({"json", "f32"}));
  synth->add_option("--out", synth_out, "dataset directory")->required();

  std::string validate_dir;
  auto* validate = app.add_subcommand("validate", "check a dataset directory");
  validate->add_option("--dataset", validate_dir, "dataset directory")->required();

  RunFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train and evaluate without test-time training; saves fold checkpoints");
  add_run_flags(train_cmd, train_flags);

  RunFlags ttt_flags;
  std::string checkpoint;
  auto* ttt_cmd = app.add_subcommand("ttt-eval", "train, adapt on each test fold, predict and report");
  add_run_flags(ttt_cmd, ttt_flags);
  ttt_cmd->add_option("--checkpoint", checkpoint, "adapt and evaluate a saved model on the whole dataset instead")
      ->check(CLI::ExistingFile);

  RunFlags sweep_flags;
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::size_t sweep_seeds = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "hyper-parameter sweep with CSV and SVG output");
  add_run_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--param", sweep_param, "alpha or mask_ratio")->required();
  sweep_cmd->add_option("--values", sweep_values, "values to sweep (comma separated)")->required()->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_seeds, "seeds per value")->check(CLI::PositiveNumber);

  std::string manifest, extract_out;
  auto* extract = app.add_subcommand("extract", "build a dataset from raw videos via the feature extractor");
  extract->add_option("--manifest", manifest, "extraction manifest")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", extract_out, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (*synth) return cmd_synth(synth_config, synth_seed, synth_events, synth_per_event, synth_format, synth_out);
    if (*validate) return cmd_validate(validate_dir);
    if (*train_cmd) return cmd_run(train_flags, true);
    if (*ttt_cmd) return checkpoint.empty() ? cmd_run(ttt_flags, false) : cmd_checkpoint_eval(ttt_flags, checkpoint);
    if (*sweep_cmd) return cmd_sweep(sweep_flags, sweep_param, sweep_values, sweep_seeds);
    if (*extract) return cmd_extract(manifest, extract_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDivergenceExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
