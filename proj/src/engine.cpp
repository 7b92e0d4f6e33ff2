#include "mmttt/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <atomic>
#include <exception>
#include <thread>

#include "mmttt/errors.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::map<std::string, std::string> all_checksums(const Model& model) {
  std::map<std::string, std::string> out;
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier})
    out[partition_name(p)] = model.checksum(p);
  return out;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

bool mlm_enabled(const TrainConfig& cfg) { return !cfg.ablation.no_mlm && cfg.mask_ratio > 0.0; }

}  // namespace

std::string to_string(TttMode mode) { return mode == TttMode::kOffline ? "offline" : "online-batch"; }

TttMode ttt_mode_from_string(const std::string& name) {
  if (name == "offline") return TttMode::kOffline;
  if (name == "online-batch" || name == "online") return TttMode::kOnlineBatch;
  throw ConfigError("unknown ttt mode '" + name + "'");
}

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(cfg.mask_ratio >= 0.0 && cfg.mask_ratio <= 1.0)) throw ConfigError("mask_ratio must lie in [0, 1]");
  if (!(cfg.train_lr > 0.0) || !(cfg.ttt_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b,
                          std::uint64_t tag_c) {
  auto mix = [](std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ tag_a);
  h = mix(h ^ tag_b);
  return mix(h ^ tag_c);
}

PhaseReport train(Model& model, std::span<const FeatureRecord> records, const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (records.empty()) throw ConfigError("train: empty training set");
  const auto start = Clock::now();
  PhaseReport report;
  report.phase = "train";
  report.checksums_before = all_checksums(model);

  const bool use_mlm = mlm_enabled(cfg);
  const bool mlm_in_loss = use_mlm && cfg.alpha > 0.0;
  auto named = model.parameters();
  auto params = tensors_of(named);
  const auto decoder_params = model.parameters(Partition::kDecoder);
  AdamOptions opts = cfg.adam;
  opts.lr = cfg.train_lr;
  AdamState adam(opts);

  try {
    for (std::size_t epoch = 0; epoch < cfg.train_epochs; ++epoch) {
      const auto epoch_start = Clock::now();
      EpochStats stats;
      stats.epoch = epoch;
      std::size_t mlm_terms = 0;
      const auto order = shuffled(records.size(), derive_seed(cfg.seed, kShuffleTag, epoch));
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        model.zero_grad();
        std::vector<Tensor> losses;
        for (std::size_t b = begin; b < end; ++b) {
          const std::size_t idx = order[b];
          Rng mask_rng(derive_seed(cfg.seed, kTrainMaskTag, epoch, idx));
          ForwardOptions fo;
          fo.mask_ratio = use_mlm ? cfg.mask_ratio : 0.0;
          fo.rng = &mask_rng;
          fo.compute_mlm = mlm_in_loss;
          fo.ablation = cfg.ablation;
          auto out = forward(model, records[idx].sample, fo);
          Tensor loss = fnd_loss(out.p_fake, records[idx].label);
          stats.fnd_loss += loss.item();
          if (out.mlm_loss.defined()) {
            stats.mlm_loss += out.mlm_loss.item();
            ++mlm_terms;
            loss = add(loss, scale(out.mlm_loss, cfg.alpha));
          }
          stats.total_loss += loss.item();
          losses.push_back(loss);
        }
        const Tensor batch_loss = scale(sum(concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
        if (!std::isfinite(batch_loss.item())) throw NumericError("training loss is not finite");
        backward(batch_loss);
        report.decoder_grad_norms.push_back(grad_norm(decoder_params));
        adam_step(params, adam);
        ++stats.steps;
      }
      const double n = static_cast<double>(records.size());
      stats.fnd_loss /= n;
      stats.total_loss /= n;
      stats.mlm_loss = mlm_terms ? stats.mlm_loss / static_cast<double>(mlm_terms) : 0.0;
      stats.seconds = seconds_since(epoch_start);
      report.epochs.push_back(stats);
    }
  } catch (const NumericError& e) {
    report.checksums_after = all_checksums(model);
    report.seconds = seconds_since(start);
    throw TrainingDiverged(std::string("training diverged: ") + e.what(), std::move(report));
  }
  report.checksums_after = all_checksums(model);
  report.seconds = seconds_since(start);
  return report;
}

double evaluate_mlm(const Model& model, std::span<const VideoSample> samples, double mask_ratio,
                    std::uint64_t seed, const Ablation& ablation) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, kEvalMaskTag, i));
    ForwardOptions fo;
    fo.mask_ratio = mask_ratio;
    fo.rng = &rng;
    fo.compute_mlm = true;
    fo.compute_detection = false;
    fo.ablation = ablation;
    auto out = forward(model, samples[i], fo);
    if (out.mlm_loss.defined()) {
      total += out.mlm_loss.item();
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<Prediction> predict(const Model& model, std::span<const VideoSample> samples,
                                const Ablation& ablation) {
  NoGradGuard no_grad;
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ForwardOptions fo;
    fo.ablation = ablation;
    const double p = forward(model, s, fo).p_fake.item();
    out.push_back({s.video_id, p, p >= 0.5 ? kFake : kReal});
  }
  return out;
}

namespace {

// One pass of MLM-only Adam steps over `indices` of the sample pool.
void ttt_epoch(Model& model, std::span<const VideoSample> samples, std::span<const std::size_t> indices,
               const TrainConfig& cfg, std::size_t epoch, std::vector<Tensor>& params,
               const std::vector<NamedTensor>& decoder_params, AdamState& adam, PhaseReport& report) {
  const auto epoch_start = Clock::now();
  EpochStats stats;
  stats.epoch = epoch;
  std::size_t terms = 0;
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Rng shuffle_rng(derive_seed(cfg.seed, kTttShuffleTag, epoch, order.empty() ? 0 : order.front()));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    model.zero_grad();
    std::vector<Tensor> losses;
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t idx = order[b];
      Rng mask_rng(derive_seed(cfg.seed, kTttMaskTag, epoch, idx));
      ForwardOptions fo;
      fo.mask_ratio = cfg.mask_ratio;
      fo.rng = &mask_rng;
      fo.compute_mlm = true;
      fo.compute_detection = false;
      fo.ablation = cfg.ablation;
      auto out = forward(model, samples[idx], fo);
      if (!out.mlm_loss.defined()) continue;
      stats.mlm_loss += out.mlm_loss.item();
      ++terms;
      losses.push_back(out.mlm_loss);
    }
    if (losses.empty()) continue;
    const Tensor batch_loss = scale(sum(concat_rows(losses)), 1.0 / static_cast<double>(losses.size()));
    if (!std::isfinite(batch_loss.item())) throw NumericError("test-time loss is not finite");
    backward(batch_loss);
    report.decoder_grad_norms.push_back(grad_norm(decoder_params));
    adam_step(params, adam);
    ++stats.steps;
  }
  stats.mlm_loss = terms ? stats.mlm_loss / static_cast<double>(terms) : 0.0;
  stats.total_loss = stats.mlm_loss;
  stats.seconds = seconds_since(epoch_start);
  report.epochs.push_back(stats);
}

}  // namespace

PhaseReport ttt_adapt(Model& model, std::span<const VideoSample> samples, const TrainConfig& cfg,
                      const PredictionSink& sink) {
  validate_train_config(cfg);
  if (samples.empty()) throw ConfigError("ttt_adapt: empty test pool");
  if (!mlm_enabled(cfg)) throw ConfigError("ttt_adapt: the masked-token objective is disabled");
  const auto start = Clock::now();
  PhaseReport report;
  report.phase = "ttt";
  report.checksums_before = all_checksums(model);
  report.mlm_before = evaluate_mlm(model, samples, cfg.mask_ratio, cfg.seed, cfg.ablation);

  auto adapted = model.parameters(Partition::kEncoder);
  const auto decoder_params = model.parameters(Partition::kDecoder);
  adapted.insert(adapted.end(), decoder_params.begin(), decoder_params.end());
  auto params = tensors_of(adapted);
  AdamOptions opts = cfg.adam;
  opts.lr = cfg.ttt_lr;

  try {
    if (cfg.ttt_mode == TttMode::kOffline) {
      AdamState adam(opts);
      std::vector<std::size_t> all(samples.size());
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t epoch = 0; epoch < cfg.ttt_epochs; ++epoch)
        ttt_epoch(model, samples, all, cfg, epoch, params, decoder_params, adam, report);
      if (sink) {
        auto preds = predict(model, samples, cfg.ablation);
        sink(all, preds);
      }
    } else {
      const auto encoder_start = model.snapshot(Partition::kEncoder);
      const auto decoder_start = model.snapshot(Partition::kDecoder);
      std::optional<AdamState> adam;
      for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(samples.size(), begin + cfg.batch_size);
        std::vector<std::size_t> batch(end - begin);
        std::iota(batch.begin(), batch.end(), begin);
        if (cfg.reset_between_batches || !adam) {
          model.restore(Partition::kEncoder, encoder_start);
          model.restore(Partition::kDecoder, decoder_start);
          adam.emplace(opts);
        }
        for (std::size_t epoch = 0; epoch < cfg.ttt_epochs; ++epoch)
          ttt_epoch(model, samples, batch, cfg, epoch, params, decoder_params, *adam, report);
        if (sink) {
          auto preds = predict(model, samples.subspan(begin, end - begin), cfg.ablation);
          sink(batch, preds);
        }
      }
    }
  } catch (const NumericError& e) {
    report.checksums_after = all_checksums(model);
    report.seconds = seconds_since(start);
    throw TrainingDiverged(std::string("test-time training diverged: ") + e.what(), std::move(report));
  }

  report.mlm_after = evaluate_mlm(model, samples, cfg.mask_ratio, cfg.seed, cfg.ablation);
  report.checksums_after = all_checksums(model);
  if (report.checksums_after.at("classifier") != report.checksums_before.at("classifier"))
    throw std::logic_error("ttt_adapt modified the classifier partition");
  report.seconds = seconds_since(start);
  return report;
}

ExperimentResult run_pipeline(const DatasetHeader& header, std::span<const FeatureRecord> records,
                              const SplitPlan& split, const TrainConfig& cfg,
                              const ModelConfig& model_config, std::size_t jobs,
                              const FoldModelHook& on_fold_model) {
  validate_train_config(cfg);
  if (split.folds.empty()) throw ConfigError("run_pipeline: split has no folds");
  const auto start = Clock::now();
  const ModelDims dims = dims_from_header(header);
  const bool run_ttt = !cfg.ablation.no_ttt && mlm_enabled(cfg);

  ExperimentResult result;
  result.train_config = cfg;
  result.model_config = model_config;
  result.split_mode = split.mode;
  result.folds.resize(split.folds.size());

  auto run_fold = [&](std::size_t f) {
    const auto fold_start = Clock::now();
    const Fold& fold = split.folds[f];
    if (fold.train.empty() || fold.test.empty()) throw ConfigError("fold " + std::to_string(f) + " is empty");
    std::vector<FeatureRecord> train_set;
    for (auto i : fold.train) train_set.push_back(records[i]);
    std::vector<FeatureRecord> test_set;
    for (auto i : fold.test) test_set.push_back(records[i]);
    const std::vector<VideoSample> test_samples = strip_labels(test_set);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, kInitTag, f);
    Model model = Model::init(dims, model_config, derive_seed(cfg.seed, kInitTag, f, 1));

    FoldResult fr;
    fr.fold = f;
    fr.train_size = train_set.size();
    fr.test_size = test_set.size();
    fr.train_report = train(model, train_set, fold_cfg);

    std::vector<Prediction> preds(test_samples.size());
    if (run_ttt) {
      const bool online = cfg.ttt_mode == TttMode::kOnlineBatch;
      PredictionSink sink;
      if (online)
        sink = [&preds](std::span<const std::size_t> idx, std::span<const Prediction> p) {
          for (std::size_t k = 0; k < idx.size(); ++k) preds[idx[k]] = p[k];
        };
      fr.ttt_report = ttt_adapt(model, test_samples, fold_cfg, sink);
      if (!online) preds = predict(model, test_samples, cfg.ablation);
    } else {
      preds = predict(model, test_samples, cfg.ablation);
    }

    std::vector<int> predicted, labels;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      predicted.push_back(preds[i].label);
      labels.push_back(test_set[i].label);
    }
    fr.metrics = compute_metrics(predicted, labels);
    fr.predictions = std::move(preds);
    fr.final_checksums = all_checksums(model);
    if (on_fold_model) on_fold_model(f, model);
    fr.seconds = seconds_since(fold_start);
    result.folds[f] = std::move(fr);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, split.folds.size()));
  if (workers == 1) {
    for (std::size_t f = 0; f < split.folds.size(); ++f) run_fold(f);
  } else {
    std::vector<std::exception_ptr> errors(split.folds.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < split.folds.size(); f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            errors[f] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<MetricsReport> per_fold;
  for (const auto& f : result.folds) per_fold.push_back(f.metrics);
  result.mean = mean_metrics(per_fold);
  double var = 0.0;
  for (const auto& m : per_fold) var += (m.accuracy - result.mean.accuracy) * (m.accuracy - result.mean.accuracy);
  result.accuracy_std = per_fold.size() > 1 ? std::sqrt(var / static_cast<double>(per_fold.size() - 1)) : 0.0;
  result.seconds = seconds_since(start);
  return result;
}

}  // namespace mmttt
