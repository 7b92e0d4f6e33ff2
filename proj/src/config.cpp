#include "mmttt/config.hpp"

#include <fstream>
#include <set>

#include "mmttt/errors.hpp"

namespace mmttt {

using nlohmann::json;

namespace {

// Reads typed keys out of one JSON object and rejects anything left over.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json header_json(const DatasetHeader& h) {
  return json{{"d_t", h.d_t},     {"d_i", h.d_i},     {"d_v", h.d_v},     {"d_a", h.d_a},
              {"V", h.V},         {"l_max", h.l_max}, {"m_max", h.m_max}, {"n_max", h.n_max},
              {"k_max", h.k_max}, {"mask_token_id", h.mask_token_id}};
}

DatasetHeader header_from(const json& j) {
  DatasetHeader h;
  Section s(j, "dataset.synthetic.header");
  s.get("d_t", h.d_t);
  s.get("d_i", h.d_i);
  s.get("d_v", h.d_v);
  s.get("d_a", h.d_a);
  s.get("V", h.V);
  s.get("l_max", h.l_max);
  s.get("m_max", h.m_max);
  s.get("n_max", h.n_max);
  s.get("k_max", h.k_max);
  s.get("mask_token_id", h.mask_token_id);
  s.finish();
  return h;
}

}  // namespace

json shift_config_to_json(const ShiftConfig& c) {
  return json{{"n_events", c.n_events},
              {"samples_per_event", c.samples_per_event},
              {"class_balance", c.class_balance},
              {"mu_shift", c.mu_shift},
              {"sigma_shift", c.sigma_shift},
              {"signal", c.signal},
              {"shifted_event_fraction", c.shifted_event_fraction},
              {"token_coupling", c.token_coupling},
              {"event_noise", c.event_noise},
              {"seed", c.seed},
              {"header", header_json(c.header)}};
}

ShiftConfig shift_config_from_json(const json& j) {
  ShiftConfig c;
  Section s(j, "dataset.synthetic");
  s.get("n_events", c.n_events);
  s.get("samples_per_event", c.samples_per_event);
  s.get("class_balance", c.class_balance);
  s.get("mu_shift", c.mu_shift);
  s.get("sigma_shift", c.sigma_shift);
  s.get("signal", c.signal);
  s.get("shifted_event_fraction", c.shifted_event_fraction);
  s.get("token_coupling", c.token_coupling);
  s.get("event_noise", c.event_noise);
  s.get("seed", c.seed);
  if (const json* h = s.child("header")) c.header = header_from(*h);
  s.finish();
  validate_shift_config(c);
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "config");

  if (const json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    s.get("path", cfg.dataset.path);
    if (const json* syn = s.child("synthetic")) cfg.dataset.synthetic = shift_config_from_json(*syn);
    s.finish();
  }
  if (cfg.dataset.path.empty() == !cfg.dataset.synthetic)
    throw ConfigError("dataset: set exactly one of 'path' and 'synthetic'");

  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    s.get("d_model", cfg.model.d_model);
    s.get("heads", cfg.model.heads);
    s.get("d_ff", cfg.model.d_ff);
    s.get("depth", cfg.model.depth);
    s.finish();
  }
  if (cfg.model.heads == 0 || cfg.model.d_model % cfg.model.heads != 0)
    throw ConfigError("model: d_model must be divisible by heads");
  if (cfg.model.depth == 0 || cfg.model.d_ff == 0) throw ConfigError("model: depth and d_ff must be >= 1");

  TrainConfig& t = cfg.train;
  if (const json* tr = root.child("train")) {
    Section s(*tr, "train");
    s.get("alpha", t.alpha);
    s.get("mask_ratio", t.mask_ratio);
    s.get("batch_size", t.batch_size);
    s.get("epochs", t.train_epochs);
    s.get("lr", t.train_lr);
    s.get("seed", t.seed);
    s.get("adam_beta1", t.adam.beta1);
    s.get("adam_beta2", t.adam.beta2);
    s.get("adam_eps", t.adam.eps);
    s.finish();
  }
  if (const json* tt = root.child("ttt")) {
    Section s(*tt, "ttt");
    std::string mode = to_string(t.ttt_mode);
    s.get("lr", t.ttt_lr);
    s.get("epochs", t.ttt_epochs);
    s.get("mode", mode);
    s.get("reset_between_batches", t.reset_between_batches);
    s.finish();
    t.ttt_mode = ttt_mode_from_string(mode);
  }
  if (const json* a = root.child("ablation")) {
    Section s(*a, "ablation");
    s.get("no_ttt", t.ablation.no_ttt);
    s.get("no_mlm", t.ablation.no_mlm);
    s.get("no_trans", t.ablation.no_trans);
    s.get("no_v", t.ablation.no_v);
    s.get("no_a", t.ablation.no_a);
    s.finish();
  }
  validate_train_config(t);

  if (const json* sp = root.child("split")) {
    Section s(*sp, "split");
    std::string mode = to_string(cfg.split.mode);
    s.get("mode", mode);
    s.get("folds", cfg.split.folds);
    s.get("train_fraction", cfg.split.train_fraction);
    s.get("seed", cfg.split.seed);
    s.finish();
    cfg.split.mode = split_mode_from_string(mode);
  }
  if (cfg.split.folds < 2) throw ConfigError("split.folds must be >= 2");
  if (!(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction < 1.0))
    throw ConfigError("split.train_fraction must lie in (0, 1)");

  if (const json* o = root.child("output")) {
    Section s(*o, "output");
    s.get("dir", cfg.output.dir);
    s.get("plots", cfg.output.plots);
    s.get("predictions", cfg.output.predictions);
    s.get("checkpoints", cfg.output.checkpoints);
    s.finish();
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentConfig cfg = config_from_json(j);
  if (!cfg.dataset.path.empty()) {
    std::filesystem::path p(cfg.dataset.path);
    if (p.is_relative()) cfg.dataset.path = (path.parent_path() / p).lexically_normal().string();
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json dataset = json::object();
  if (!cfg.dataset.path.empty()) dataset["path"] = cfg.dataset.path;
  if (cfg.dataset.synthetic) dataset["synthetic"] = shift_config_to_json(*cfg.dataset.synthetic);
  return json{
      {"dataset", dataset},
      {"model",
       {{"d_model", cfg.model.d_model}, {"heads", cfg.model.heads}, {"d_ff", cfg.model.d_ff},
        {"depth", cfg.model.depth}}},
      {"train",
       {{"alpha", t.alpha},
        {"mask_ratio", t.mask_ratio},
        {"batch_size", t.batch_size},
        {"epochs", t.train_epochs},
        {"lr", t.train_lr},
        {"seed", t.seed},
        {"adam_beta1", t.adam.beta1},
        {"adam_beta2", t.adam.beta2},
        {"adam_eps", t.adam.eps}}},
      {"ttt",
       {{"lr", t.ttt_lr},
        {"epochs", t.ttt_epochs},
        {"mode", to_string(t.ttt_mode)},
        {"reset_between_batches", t.reset_between_batches}}},
      {"ablation",
       {{"no_ttt", t.ablation.no_ttt},
        {"no_mlm", t.ablation.no_mlm},
        {"no_trans", t.ablation.no_trans},
        {"no_v", t.ablation.no_v},
        {"no_a", t.ablation.no_a}}},
      {"split",
       {{"mode", to_string(cfg.split.mode)},
        {"folds", cfg.split.folds},
        {"train_fraction", cfg.split.train_fraction},
        {"seed", cfg.split.seed}}},
      {"output",
       {{"dir", cfg.output.dir},
        {"plots", cfg.output.plots},
        {"predictions", cfg.output.predictions},
        {"checkpoints", cfg.output.checkpoints}}},
  };
}

void apply_ablation(Ablation& ablation, const std::string& name) {
  if (name == "ttt") ablation.no_ttt = true;
  else if (name == "mlm") ablation.no_mlm = true;
  else if (name == "trans") ablation.no_trans = true;
  else if (name == "v") ablation.no_v = true;
  else if (name == "a") ablation.no_a = true;
  else throw ConfigError("unknown ablation '" + name + "' (expected ttt, mlm, trans, v or a)");
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.train.seed = seed;
  cfg.split.seed = seed;
  if (cfg.dataset.synthetic) cfg.dataset.synthetic->seed = seed;
}

Dataset materialize_dataset(const DatasetSource& source, const std::filesystem::path& base_dir) {
  if (source.synthetic) return synthesize_dataset(*source.synthetic);
  std::filesystem::path p(source.path);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return load_dataset(p);
}

SplitPlan make_split(const SplitConfig& cfg, std::span<const FeatureRecord> records) {
  if (cfg.mode == SplitMode::kTemporal) return temporal_split(records, cfg.train_fraction);
  return event_kfold_split(records, cfg.folds, cfg.seed);
}

}  // namespace mmttt
