#include "mmttt/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "mmttt/errors.hpp"

namespace mmttt {

using nlohmann::json;

namespace {

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

json class_json(const ClassMetrics& c) {
  return json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

json metrics_to_json(const MetricsReport& m) {
  return json{{"accuracy", m.accuracy},
              {"macro_f1", m.macro_f1},
              {"real", class_json(m.real)},
              {"fake", class_json(m.fake)},
              {"total", m.total}};
}

json phase_to_json(const PhaseReport& p) {
  json epochs = json::array();
  for (const auto& e : p.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"steps", e.steps},
                      {"fnd_loss", e.fnd_loss},
                      {"mlm_loss", e.mlm_loss},
                      {"total_loss", e.total_loss},
                      {"seconds", e.seconds}});
  double max_norm = 0.0;
  for (double n : p.decoder_grad_norms) max_norm = std::max(max_norm, n);
  json j{{"phase", p.phase},
         {"epochs", epochs},
         {"checksums_before", p.checksums_before},
         {"checksums_after", p.checksums_after},
         {"steps", p.decoder_grad_norms.size()},
         {"max_decoder_grad_norm", max_norm},
         {"seconds", p.seconds}};
  if (p.mlm_before) j["mlm_before"] = *p.mlm_before;
  if (p.mlm_after) j["mlm_after"] = *p.mlm_after;
  return j;
}

json result_to_json(const ExperimentResult& result, const ExperimentConfig& cfg) {
  json folds = json::array();
  for (const auto& f : result.folds) {
    json fj{{"fold", f.fold},
            {"train_size", f.train_size},
            {"test_size", f.test_size},
            {"metrics", metrics_to_json(f.metrics)},
            {"train", phase_to_json(f.train_report)},
            {"final_checksums", f.final_checksums},
            {"seconds", f.seconds}};
    fj["ttt"] = f.ttt_report ? phase_to_json(*f.ttt_report) : json(nullptr);
    folds.push_back(std::move(fj));
  }
  return json{{"config", config_to_json(cfg)},
              {"split_mode", to_string(result.split_mode)},
              {"fold_count", result.folds.size()},
              {"folds", folds},
              {"mean", metrics_to_json(result.mean)},
              {"accuracy_std", result.accuracy_std},
              {"seconds", result.seconds}};
}

ExperimentRun run_experiment(const ExperimentConfig& cfg, std::size_t jobs, const std::filesystem::path& out_dir) {
  ExperimentRun run;
  run.dataset = materialize_dataset(cfg.dataset);
  if (run.dataset.records.empty()) throw DataError("dataset has no records");
  run.split = make_split(cfg.split, run.dataset.records);

  FoldModelHook hook;
  std::mutex io_mutex;
  if (!out_dir.empty() && cfg.output.checkpoints) {
    std::filesystem::create_directories(out_dir);
    hook = [&](std::size_t fold, const Model& model) {
      std::lock_guard lock(io_mutex);
      save_checkpoint(out_dir / ("fold" + std::to_string(fold) + ".ckpt"), model);
    };
  }
  run.result = run_pipeline(run.dataset.header, run.dataset.records, run.split, cfg.train, cfg.model, jobs, hook);

  if (!out_dir.empty()) {
    write_text_file(out_dir / "report.json", result_to_json(run.result, cfg).dump(2) + "\n");
    if (cfg.output.predictions) {
      std::ostringstream csv;
      csv << "fold,video_id,event_id,p_fake,predicted,label\n";
      for (const auto& f : run.result.folds) {
        const auto& test = run.split.folds[f.fold].test;
        for (std::size_t i = 0; i < f.predictions.size(); ++i) {
          const auto& rec = run.dataset.records[test[i]];
          const auto& p = f.predictions[i];
          csv << f.fold << ',' << p.video_id << ',' << rec.sample.event_id << ',' << fmt(p.p_fake, "%.9g") << ','
              << p.label << ',' << rec.label << '\n';
        }
      }
      write_text_file(out_dir / "predictions.csv", csv.str());
    }
  }
  return run;
}

std::string to_string(SweepParam p) { return p == SweepParam::kAlpha ? "alpha" : "mask_ratio"; }

SweepParam sweep_param_from_string(const std::string& name) {
  if (name == "alpha") return SweepParam::kAlpha;
  if (name == "mask_ratio" || name == "m") return SweepParam::kMaskRatio;
  throw ConfigError("unknown sweep parameter '" + name + "' (expected alpha or mask_ratio)");
}

SweepResult sweep(const ExperimentConfig& cfg, SweepParam param, std::span<const double> values, std::size_t seeds,
                  std::size_t jobs, const std::function<void(const SweepPoint&)>& progress) {
  if (values.size() < 2) throw ConfigError("sweep needs at least 2 values");
  if (seeds == 0) throw ConfigError("sweep needs at least 1 seed");
  SweepResult out;
  out.param = param;
  out.pinned_value = param == SweepParam::kAlpha ? kSweepPinnedMaskRatio : kSweepPinnedAlpha;
  double cumulative = 0.0;
  for (double value : values) {
    const auto start = std::chrono::steady_clock::now();
    SweepPoint point;
    point.value = value;
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig run_cfg = cfg;
      if (param == SweepParam::kAlpha) {
        run_cfg.train.alpha = value;
        run_cfg.train.mask_ratio = kSweepPinnedMaskRatio;
      } else {
        run_cfg.train.alpha = kSweepPinnedAlpha;
        run_cfg.train.mask_ratio = value;
      }
      const std::uint64_t seed = cfg.train.seed + s;
      apply_seed(run_cfg, seed);
      validate_train_config(run_cfg.train);
      const ExperimentRun run = run_experiment(run_cfg, jobs);
      point.seeds.push_back(seed);
      point.accuracies.push_back(run.result.mean.accuracy);
      point.macro_f1s.push_back(run.result.mean.macro_f1);
      double loss = 0.0;
      for (const auto& f : run.result.folds)
        if (!f.train_report.epochs.empty()) loss += f.train_report.epochs.back().total_loss;
      point.final_train_losses.push_back(loss / static_cast<double>(run.result.folds.size()));
    }
    point.mean_accuracy = mean_of(point.accuracies);
    point.std_accuracy = sample_std(point.accuracies);
    point.mean_macro_f1 = mean_of(point.macro_f1s);
    point.mean_final_train_loss = mean_of(point.final_train_losses);
    point.std_final_train_loss = sample_std(point.final_train_losses);
    point.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cumulative += point.seconds;
    point.cumulative_seconds = cumulative;
    out.points.push_back(point);
    if (progress) progress(point);
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ostringstream csv;
  csv << to_string(result.param)
      << ",seeds,mean_accuracy,std_accuracy,mean_macro_f1,mean_final_train_loss,std_final_train_loss,seconds,"
         "cumulative_seconds\n";
  for (const auto& p : result.points)
    csv << fmt(p.value) << ',' << p.seeds.size() << ',' << fmt(p.mean_accuracy, "%.6f") << ','
        << fmt(p.std_accuracy, "%.6f") << ',' << fmt(p.mean_macro_f1, "%.6f") << ','
        << fmt(p.mean_final_train_loss, "%.6f") << ',' << fmt(p.std_final_train_loss, "%.6f") << ','
        << fmt(p.seconds, "%.3f") << ',' << fmt(p.cumulative_seconds, "%.3f") << '\n';
  write_text_file(path, csv.str());
}

json sweep_to_json(const SweepResult& result) {
  json points = json::array();
  for (const auto& p : result.points)
    points.push_back({{"value", p.value},
                      {"seeds", p.seeds},
                      {"accuracies", p.accuracies},
                      {"macro_f1s", p.macro_f1s},
                      {"final_train_losses", p.final_train_losses},
                      {"mean_accuracy", p.mean_accuracy},
                      {"std_accuracy", p.std_accuracy},
                      {"mean_macro_f1", p.mean_macro_f1},
                      {"mean_final_train_loss", p.mean_final_train_loss},
                      {"std_final_train_loss", p.std_final_train_loss},
                      {"seconds", p.seconds},
                      {"cumulative_seconds", p.cumulative_seconds}});
  const char* pinned = result.param == SweepParam::kAlpha ? "mask_ratio" : "alpha";
  return json{{"param", to_string(result.param)}, {"pinned", {{pinned, result.pinned_value}}}, {"points", points}};
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const PlotSeries> series) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.05, y1 += 0.05;
  const double pad = 0.08 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    svg << "<line x1=\"" << px(xv) << "\" y1=\"" << H - B << "\" x2=\"" << px(xv) << "\" y2=\"" << H - B + 5
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fmt(xv, "%.3g")
        << "</text>\n"
        << "<line x1=\"" << L - 5 << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv, "%.3f")
        << "</text>\n";
  }
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">" << xml_escape(x_label)
      << "</text>\n"
      << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 5];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i < s.err.size() && s.err[i] > 0.0)
        svg << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(s.y[i] - s.err[i]) << "\" x2=\"" << px(s.x[i])
            << "\" y2=\"" << py(s.y[i] + s.err[i]) << "\" stroke=\"" << color << "\"/>\n";
      svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }
    svg << "<text x=\"" << W - R - 10 << "\" y=\"" << T + 16 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << color
        << "\">" << xml_escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_sweep_svg(const std::filesystem::path& path, const SweepResult& result) {
  PlotSeries s;
  s.label = "accuracy (mean ± std over seeds)";
  for (const auto& p : result.points) {
    s.x.push_back(p.value);
    s.y.push_back(p.mean_accuracy);
    s.err.push_back(p.std_accuracy);
  }
  const std::string name = to_string(result.param);
  const std::string pinned = result.param == SweepParam::kAlpha ? "mask_ratio = " + fmt(result.pinned_value)
                                                                : "alpha = " + fmt(result.pinned_value);
  const PlotSeries one[] = {s};
  write_text_file(path, line_plot_svg("Accuracy vs " + name + " (" + pinned + ")", name, "accuracy", one));
}

}  // namespace mmttt
