// Acceptance gate: one PASS/FAIL line per primary criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "mmttt/experiment.hpp"
#include "mmttt/grad_check.hpp"
#include "mmttt/ops.hpp"

using namespace mmttt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kUniformCeTolerance = 1e-9;
constexpr double kBceTolerance = 1e-12;
constexpr double kFreshMlmRelative = 0.05;
constexpr std::size_t kMaskSequences = 10000;
constexpr double kMaskFrequencyTolerance = 0.01;
constexpr std::size_t kPartitionRuns = 100;
constexpr double kTttGainPoints = 1.0;
constexpr double kTttMlmDrop = 0.10;
constexpr double kTttSeconds = 900.0;
constexpr std::size_t kBenchmarkSeeds = 5;

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape[0] * shape[1]);
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v), grad);
}

// 1. Finite-difference checks of every differentiable block on tiny configs.
void gradient_suite() {
  const auto start = Clock::now();
  const ModelDims dims{6, 5, 4, 3, 16};
  const ModelConfig cfg{8, 2, 12, 1};
  Rng rng(101);
  GradCheckOptions opts;
  opts.tolerance = kGradTolerance;
  double worst = 0.0;
  std::vector<std::string> failed;
  auto check = [&](const std::string& name, const std::function<Tensor()>& fn, const std::vector<NamedTensor>& ps) {
    const auto r = grad_check(fn, ps, opts);
    worst = std::max(worst, r.max_relative_error());
    if (!r.passed) failed.push_back(name);
  };

  {
    auto unit = TransformerUnitParams::init(8, 2, 12, rng);
    auto q = random_tensor({4, 8}, rng, true), kv = random_tensor({3, 8}, rng, true), w = random_tensor({4, 8}, rng);
    std::vector<NamedTensor> ps = {{"q", q}, {"kv", kv}};
    unit.collect("unit", ps);
    check("cross-attention unit", [&] { return sum(mul(cross_attention_unit(q, kv, unit), w)); }, ps);
  }
  {
    auto dec = DecoderParams::init(dims, cfg, rng);
    auto h = random_tensor({5, 8}, rng, true);
    const std::vector<std::size_t> pos = {1, 4}, tgt = {3, 12};
    std::vector<NamedTensor> ps = {{"h", h}};
    dec.collect("decoder", ps);
    check("decoder", [&] { return cross_entropy_logits(decode_masked(h, pos, dec), tgt); }, ps);
  }
  {
    auto enc = EncoderParams::init(dims, cfg, rng);
    auto dec_at = DecoderParams::init(dims, cfg, rng), dec_it = DecoderParams::init(dims, cfg, rng);
    auto text = random_tensor({4, 6}, rng), audio = random_tensor({3, 3}, rng), frames = random_tensor({2, 5}, rng);
    const std::int64_t tokens[] = {3, 11, 0, 7};
    std::vector<NamedTensor> ps;
    enc.collect(ps);
    dec_at.collect("decoder_at", ps);
    dec_it.collect("decoder_it", ps);
    check("mlm loss", [&] {
      Rng mask_rng(5);
      auto masked = apply_mask(project_text(text, enc), tokens, 0.5, enc.mask_embedding, mask_rng);
      auto h = encode(masked, audio, frames, enc);
      return mlm_loss(h.audio_text, h.visual_text, masked.mask_positions, masked.target_ids, dec_at, dec_it);
    }, ps);
  }
  {
    auto fusion = FusionParams::init(dims, cfg, rng);
    auto clf = ClassifierParams::init(cfg, rng);
    FusionInputs in{random_tensor({1, 8}, rng, true), random_tensor({1, 8}, rng, true), random_tensor({1, 4}, rng),
                    random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)};
    auto w = random_tensor({1, 8}, rng);
    std::vector<NamedTensor> fps = {{"x_at", in.audio_text}, {"x_it", in.visual_text}};
    fusion.collect(fps);
    check("fusion layer", [&] { return sum(mul(fuse(in, fusion), w)); }, fps);
    auto fused = random_tensor({1, 8}, rng, true);
    std::vector<NamedTensor> cps = {{"fused", fused}};
    clf.collect(cps);
    for (int label : {0, 1})
      check("classifier + detection loss", [&] { return fnd_loss(classify(fused, clf), label); }, cps);
  }
  const double secs = seconds_since(start);
  std::string detail = fmt("max rel err %.2e (< %.0e), %.1fs (< %.0fs)", worst, kGradTolerance, secs, kGradSuiteSeconds);
  for (const auto& f : failed) detail += "; failed: " + f;
  report(1, "gradient suite", failed.empty() && secs < kGradSuiteSeconds, detail);
}

// 2. Closed-form loss values.
void loss_identities(const ExperimentConfig& bench) {
  bool ok = true;
  double ce_err = 0.0, bce_err = 0.0;
  for (std::size_t v : {2u, 8u, 64u})
    for (std::size_t t = 0; t < v; t += std::max<std::size_t>(1, v / 4)) {
      const std::size_t target[] = {t};
      ce_err = std::max(ce_err, std::abs(cross_entropy_logits(Tensor::zeros({1, v}), target).item() - std::log(double(v))));
    }
  for (int y : {0, 1})
    bce_err = std::max(bce_err, std::abs(binary_cross_entropy(Tensor::from({1, 1}, {0.5}), y).item() - std::log(2.0)));
  ok = ce_err < kUniformCeTolerance && bce_err < kBceTolerance;

  const Dataset ds = synthesize_dataset(*bench.dataset.synthetic);
  const ModelDims dims = dims_from_header(ds.header);
  const double target = 2.0 * std::log(static_cast<double>(dims.vocab));
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Model model = Model::init(dims, bench.model, seed);
    Rng mask_rng(seed);
    ForwardOptions fo{.mask_ratio = bench.train.mask_ratio, .rng = &mask_rng, .compute_mlm = true,
                      .compute_detection = false};
    total += forward(model, ds.records[seed % ds.records.size()].sample, fo).mlm_loss.item();
  }
  const double mean_mlm = total / 100.0;
  const double rel = std::abs(mean_mlm - target) / target;
  ok = ok && rel <= kFreshMlmRelative;
  report(2, "loss identities", ok,
         fmt("uniform CE err %.1e, BCE(0.5) err %.1e, fresh L_MLM %.4f vs 2lnV %.4f", ce_err, bce_err, mean_mlm,
             target) + fmt(", rel %.2f%% <= 5%%", 100 * rel));
}

// 3. Mask count and per-position selection frequency.
void masking_statistics() {
  constexpr std::size_t l = 32;
  Rng rng(303);
  const Tensor x = random_tensor({l, 4}, rng), emb = random_tensor({1, 4}, rng);
  std::vector<std::int64_t> tokens(l);
  std::iota(tokens.begin(), tokens.end(), 0);
  std::vector<double> hits(l, 0.0);
  bool exact = true;
  for (std::size_t s = 0; s < kMaskSequences; ++s) {
    const auto m = apply_mask(x, tokens, 0.15, emb, rng);
    exact = exact && m.mask_positions.size() == 5;
    for (auto p : m.mask_positions) hits[p] += 1.0;
  }
  double worst = 0.0;
  for (double h : hits) worst = std::max(worst, std::abs(h / kMaskSequences - 5.0 / 32.0));
  report(3, "masking statistics", exact && worst <= kMaskFrequencyTolerance,
         std::string(exact ? "5 masks in every sequence" : "mask count differs") +
             fmt(", max |freq - 5/32| = %.4f (<= %.2f)", worst, kMaskFrequencyTolerance));
}

// 4. TTT never moves the classifier; no_mlm never produces decoder gradient.
void partition_discipline(const ExperimentConfig& bench) {
  ShiftConfig sc;
  sc.n_events = 6;
  sc.samples_per_event = 4;
  const Dataset ds = synthesize_dataset(sc);
  std::vector<VideoSample> pool;
  for (const auto& r : ds.records) pool.push_back(r.sample);
  const ModelDims dims = dims_from_header(ds.header);
  Rng rng(404);
  std::size_t violations = 0;
  for (std::size_t run = 0; run < kPartitionRuns; ++run) {
    Model model = Model::init(dims, ModelConfig{8, 2, 16, 1}, rng());
    TrainConfig cfg;
    cfg.seed = rng();
    cfg.ttt_lr = std::pow(10.0, -1.0 - 3.0 * std::uniform_real_distribution<double>(0, 1)(rng));
    cfg.ttt_epochs = 1 + rng() % 2;
    cfg.mask_ratio = std::uniform_real_distribution<double>(0.1, 0.6)(rng);
    cfg.batch_size = 1 + rng() % 8;
    cfg.ttt_mode = rng() % 2 ? TttMode::kOnlineBatch : TttMode::kOffline;
    cfg.reset_between_batches = rng() % 2;
    cfg.ablation.no_a = rng() % 4 == 0;
    const std::size_t n = 2 + rng() % (pool.size() - 2);
    const auto before = model.snapshot(Partition::kClassifier);
    ttt_adapt(model, std::span<const VideoSample>(pool.data(), n), cfg);
    if (model.snapshot(Partition::kClassifier) != before) ++violations;
  }

  ExperimentConfig cfg = bench;
  cfg.train.ablation.no_mlm = true;
  cfg.train.train_epochs = 2;
  const auto run = run_experiment(cfg);
  std::size_t steps = 0, nonzero = 0;
  for (const auto& f : run.result.folds) {
    steps += f.train_report.decoder_grad_norms.size();
    for (double g : f.train_report.decoder_grad_norms) nonzero += g != 0.0;
    nonzero += f.ttt_report.has_value();
  }
  report(4, "partition discipline", violations == 0 && nonzero == 0 && steps > 0,
         std::to_string(violations) + "/" + std::to_string(kPartitionRuns) + " runs changed the classifier; " +
             std::to_string(nonzero) + "/" + std::to_string(steps) + " no_mlm steps with decoder gradient");
}

// 5. Event k-fold counts and overlap; temporal ordering.
void split_invariants(const ExperimentConfig& bench) {
  std::vector<FeatureRecord> recs;
  for (std::size_t e = 0; e < 738; ++e)
    for (std::size_t j = 0; j < 2; ++j) {
      FeatureRecord r;
      r.sample.video_id = "v" + std::to_string(e) + "_" + std::to_string(j);
      r.sample.event_id = "e" + std::to_string(e);
      r.sample.timestamp = static_cast<std::int64_t>((e * 7919 + j) % 1000);
      recs.push_back(r);
    }
  const auto plan = event_kfold_split(recs, 5, 505);
  bool ok = plan.fold_count() == 5;
  std::size_t overlap = 0;
  std::string counts;
  for (const auto& f : plan.folds) {
    std::set<std::string> tr, te;
    for (auto i : f.train) tr.insert(recs[i].sample.event_id);
    for (auto i : f.test) te.insert(recs[i].sample.event_id);
    for (const auto& e : te) overlap += tr.count(e);
    ok = ok && (te.size() == 147 || te.size() == 148);
    counts += (counts.empty() ? "" : ",") + std::to_string(te.size());
  }
  const Dataset ds = synthesize_dataset(*bench.dataset.synthetic);
  bool ordered = true;
  for (double frac : {0.5, 0.8, 0.9}) {
    const auto f = temporal_split(ds.records, frac).folds[0];
    std::int64_t max_train = INT64_MIN, min_test = INT64_MAX;
    for (auto i : f.train) max_train = std::max(max_train, ds.records[i].sample.timestamp);
    for (auto i : f.test) min_test = std::min(min_test, ds.records[i].sample.timestamp);
    ordered = ordered && max_train <= min_test;
  }
  report(5, "split invariants", ok && overlap == 0 && ordered,
         "test events per fold {" + counts + "}, overlap " + std::to_string(overlap) + ", temporal ordering " +
             (ordered ? "holds" : "violated"));
}

struct BenchmarkRun {
  double accuracy = 0.0;
  double mlm_before = 0.0;
  double mlm_after = 0.0;
};

BenchmarkRun run_variant(const ExperimentConfig& bench, std::uint64_t seed, const char* ablation) {
  ExperimentConfig cfg = bench;
  apply_seed(cfg, seed);
  if (ablation) apply_ablation(cfg.train.ablation, ablation);
  const auto run = run_experiment(cfg);
  BenchmarkRun out{run.result.mean.accuracy, 0.0, 0.0};
  for (const auto& f : run.result.folds)
    if (f.ttt_report) {
      out.mlm_before += *f.ttt_report->mlm_before / static_cast<double>(run.result.folds.size());
      out.mlm_after += *f.ttt_report->mlm_after / static_cast<double>(run.result.folds.size());
    }
  return out;
}

std::vector<BenchmarkRun> run_seeds(const ExperimentConfig& bench, const char* ablation) {
  std::vector<BenchmarkRun> runs;
  for (std::uint64_t s = 0; s < kBenchmarkSeeds; ++s) runs.push_back(run_variant(bench, s, ablation));
  return runs;
}

double mean_accuracy(const std::vector<BenchmarkRun>& runs) {
  double a = 0.0;
  for (const auto& r : runs) a += r.accuracy / static_cast<double>(runs.size());
  return a;
}

// 6 and 7. Directional benchmark checks.
void benchmark(const ExperimentConfig& bench) {
  const auto start = Clock::now();
  const auto full = run_seeds(bench, nullptr);
  const auto no_ttt = run_seeds(bench, "ttt");
  const double secs = seconds_since(start);
  double before = 0.0, after = 0.0;
  for (const auto& r : full) {
    before += r.mlm_before / kBenchmarkSeeds;
    after += r.mlm_after / kBenchmarkSeeds;
  }
  const double acc_full = mean_accuracy(full), acc_no_ttt = mean_accuracy(no_ttt);
  const double gain = 100.0 * (acc_full - acc_no_ttt);
  const double drop = (before - after) / before;
  report(6, "TTT benefit", gain >= kTttGainPoints && drop >= kTttMlmDrop && secs < kTttSeconds,
         fmt("acc %.2f%% vs no_ttt %.2f%% (+%.2f pts, need >= 1.0)", 100 * acc_full, 100 * acc_no_ttt, gain) +
             fmt("; test L_MLM %.3f -> %.3f (-%.1f%%, need >= 10%%)", before, after, 100 * drop) +
             fmt("; %.0fs (< %.0fs)", secs, kTttSeconds));

  bool ordered = acc_full >= acc_no_ttt;
  std::string detail = fmt("full %.2f%%, no_ttt %.2f%%", 100 * acc_full, 100 * acc_no_ttt);
  for (const char* ab : {"mlm", "trans", "v", "a"}) {
    const double acc = mean_accuracy(run_seeds(bench, ab));
    ordered = ordered && acc_full >= acc;
    detail += std::string(", no_") + ab + fmt(" %.2f%%", 100 * acc);
  }
  report(7, "ablation ordering", ordered, detail);
}

// 8. Same config and seed twice.
void determinism(const ExperimentConfig& bench) {
  ExperimentConfig cfg = bench;
  apply_seed(cfg, 0);
  const auto a = run_experiment(cfg), b = run_experiment(cfg);
  bool same = a.result.folds.size() == b.result.folds.size() && a.result.mean.accuracy == b.result.mean.accuracy &&
              a.result.mean.macro_f1 == b.result.mean.macro_f1;
  for (std::size_t f = 0; same && f < a.result.folds.size(); ++f)
    same = a.result.folds[f].final_checksums == b.result.folds[f].final_checksums;
  std::string sums;
  for (const auto& [k, v] : a.result.folds[0].final_checksums) sums += " " + k + "=" + v;
  report(8, "determinism", same, std::string(same ? "metrics and checksums identical;" : "runs differ;") + sums);
}

// 9. Sweep harness shape and outputs.
void sweep_harness(const ExperimentConfig& bench, const fs::path& out) {
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<SweepParam, std::vector<double>>> sweeps = {{SweepParam::kAlpha, {0.0, 0.5, 1.0}},
                                                                          {SweepParam::kMaskRatio, {0.15, 0.9}}};
  for (const auto& [param, values] : sweeps) {
    const auto result = sweep(bench, param, values, 1);
    const std::string name = to_string(param);
    write_sweep_csv(out / (name + ".csv"), result);
    write_sweep_svg(out / (name + ".svg"), result);
    std::ifstream csv(out / (name + ".csv"));
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    const double pinned = param == SweepParam::kAlpha ? kSweepPinnedMaskRatio : kSweepPinnedAlpha;
    ok = ok && result.points.size() == values.size() && lines == values.size() + 1 && result.pinned_value == pinned &&
         fs::file_size(out / (name + ".svg")) > 0;
    detail += (detail.empty() ? "" : "; ") + name + " (" + fmt("pinned %.2f", pinned) + "):";
    for (const auto& p : result.points) detail += fmt(" %.2f->%.3f", p.value, p.mean_accuracy);
  }
  report(9, "sweep harness", ok, detail + "; written to " + out.string());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config = argc > 1 ? argv[1] : MMTTT_BENCHMARK_CONFIG;
  const fs::path out = argc > 2 ? argv[2] : "acceptance_out";
  fs::create_directories(out);
  ExperimentConfig bench = load_config(config);
  if (!bench.dataset.synthetic) {
    std::fprintf(stderr, "benchmark config must use a synthetic dataset\n");
    return 2;
  }
  std::printf("benchmark config: %s\n", config.string().c_str());
  gradient_suite();
  loss_identities(bench);
  masking_statistics();
  partition_discipline(bench);
  split_invariants(bench);
  benchmark(bench);
  determinism(bench);
  sweep_harness(bench, out);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
