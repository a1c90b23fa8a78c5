#include <fstream>

#include "lfts/pipeline.hpp"

namespace lfts::pipeline {

using nlohmann::json;

namespace {

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key) && !j.at(key).is_null()) j.at(key).get_to(field);
}

const char* loss_name(train::LossKind k) { return k == train::LossKind::Adaptive ? "adaptive" : "mse"; }

train::LossKind parse_loss(const std::string& s) {
  if (s == "adaptive") return train::LossKind::Adaptive;
  if (s == "mse") return train::LossKind::Mse;
  throw ConfigError("unknown loss '" + s + "' (expected adaptive or mse)");
}

std::vector<Variant> default_variants() {
  using train::LossKind;
  return {{"gc_adam+adaptive+stacked", true, LossKind::Adaptive, true},
          {"adam+adaptive+stacked", false, LossKind::Adaptive, true},
          {"adam+mse+stacked", false, LossKind::Mse, true},
          {"gc_adam+adaptive+single", true, LossKind::Adaptive, false}};
}

}  // namespace

PipelineConfig profile_config(const std::string& profile) {
  PipelineConfig c;
  c.profile = profile;
  c.k_map = {{"open", 15}, {"high", 10}, {"close", 12}, {"low", 8}};
  c.k_candidates = {2, 3, 4, 5, 6, 8, 10, 12, 15};
  c.ablation = default_variants();
  if (profile == "desk") {
    c.fe_max_points = 2000;
    c.model.input_len = 64;
    c.model.pred_len = 16;
    c.model.d_model = 32;
    c.model.n_heads = 2;
    c.model.d_ff = 64;
    c.model.encoder_layers = 5;
    c.model.decoder_layers = 2;
    c.model.branch_blocks = {2, 2, 1};
    c.model.dropout = 0.05;
    c.train.epochs = 20;
    c.train.patience = 5;
    c.train.samples_per_epoch = 512;
    c.train.optimizer.lr = 1e-3;
  } else if (profile == "paper") {
    c.model = model::ModelConfig{};
    c.train.epochs = 200;
    c.train.patience = 10;
    c.train.optimizer.lr = 1e-4;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  return c;
}

void PipelineConfig::validate() const {
  if (version != kConfigVersion)
    throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ConfigError("split_ratio must lie in (0, 1), got " + std::to_string(split_ratio));
  try {
    vmd.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("vmd: ") + e.what());
  }
  if (select_k) {
    if (k_candidates.empty()) throw ConfigError("select_k needs k_candidates");
    for (auto k : k_candidates)
      if (k == 0) throw ConfigError("K candidates must be positive");
  } else {
    for (const auto& col : ingest::price_columns()) {
      auto it = k_map.find(col);
      if (it == k_map.end()) throw ConfigError("k_map has no entry for '" + col + "'");
      if (it->second == 0) throw ConfigError("k_map['" + col + "'] must be positive");
    }
  }
  if (fe.m < 1) throw ConfigError("fuzzy entropy m must be at least 1");
  if (!(fe.r_factor > 0.0)) throw ConfigError("fuzzy entropy r_factor must be positive");
  if (!(mic_threshold >= 0.0 && mic_threshold <= 1.0)) throw ConfigError("mic_threshold must lie in [0, 1]");
  if (mic.bins == 1) throw ConfigError("MIC needs at least 2 bins");
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (train.epochs == 0) throw ConfigError("epochs must be positive");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(train.val_fraction > 0.0 && train.val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (!(train.adaptive.c > 0.0)) throw ConfigError("adaptive loss c must be positive");
  if (!(train.adaptive.beta_init > train::kBetaMin && train.adaptive.beta_init < train::kBetaMax))
    throw ConfigError("beta_init must lie in (-8, 2)");
  try {
    train.optimizer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("optimizer: ") + e.what());
  }
  if (fixture.bars < 2) throw ConfigError("fixture.bars must be at least 2");
  if (fixture.periods.size() != fixture.amplitudes.size())
    throw ConfigError("fixture periods and amplitudes differ in length");
}

json to_json(const PipelineConfig& c) {
  json j;
  j["version"] = c.version;
  j["profile"] = c.profile;
  j["data"] = c.data.string();
  j["fixture"] = to_json(c.fixture);
  j["split_ratio"] = c.split_ratio;
  const auto& ic = c.indicators;
  j["indicators"] = {{"atr_windows", ic.atr_windows}, {"rsi_windows", ic.rsi_windows},
                     {"roc_windows", ic.roc_windows}, {"max_return_lag", ic.max_return_lag},
                     {"williams_window", ic.williams_window}, {"dema_window", ic.dema_window},
                     {"cci_window", ic.cci_window}, {"ma_fast", ic.ma_fast},
                     {"ma_slow", ic.ma_slow}, {"corr_window", ic.corr_window}};
  j["vmd"] = {{"alpha", c.vmd.alpha}, {"tau", c.vmd.tau}, {"tol", c.vmd.tol},
              {"max_iter", c.vmd.max_iter}, {"dc_mode", c.vmd.dc_mode}};
  j["k_map"] = c.k_map;
  j["select_k"] = c.select_k;
  j["k_candidates"] = c.k_candidates;
  j["fe"] = {{"m", c.fe.m}, {"r_factor", c.fe.r_factor}, {"max_points", c.fe_max_points}};
  if (c.fe.r) j["fe"]["r"] = *c.fe.r;
  j["mic"] = {{"bins", c.mic.bins},
              {"binning", c.mic.strategy == micfe::Binning::EqualFrequency ? "equal_frequency" : "equal_width"},
              {"threshold", c.mic_threshold}};
  j["model"] = model::to_json(c.model);
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"patience", t.patience},
                {"batch_size", t.batch_size},
                {"val_fraction", t.val_fraction},
                {"samples_per_epoch", t.samples_per_epoch},
                {"loss", loss_name(t.loss)},
                {"adaptive", {{"c", t.adaptive.c},
                              {"beta_init", t.adaptive.beta_init},
                              {"beta_penalty", t.adaptive.beta_penalty},
                              {"delta", t.adaptive.delta},
                              {"learn_beta", t.adaptive.learn_beta}}},
                {"optimizer", {{"lr", t.optimizer.lr},
                               {"beta1", t.optimizer.beta1},
                               {"beta2", t.optimizer.beta2},
                               {"eps", t.optimizer.eps},
                               {"gc", t.optimizer.gc_enabled},
                               {"clip_norm", t.optimizer.clip_norm ? json(*t.optimizer.clip_norm) : json(nullptr)}}}};
  auto& ab = j["ablation"] = json::array();
  for (const auto& v : c.ablation)
    ab.push_back({{"name", v.name}, {"gc", v.gc}, {"loss", loss_name(v.loss)}, {"stacked", v.stacked}});
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  return j;
}

PipelineConfig config_from_json(const json& j) {
  std::string profile = "desk";
  take(j, "profile", profile);
  PipelineConfig c = profile_config(profile);
  try {
    take(j, "version", c.version);
    std::string data;
    take(j, "data", data);
    c.data = data;
    if (j.contains("fixture")) c.fixture = fixture_from_json(j.at("fixture"), c.fixture);
    take(j, "split_ratio", c.split_ratio);
    if (j.contains("indicators")) {
      const auto& ij = j.at("indicators");
      auto& ic = c.indicators;
      take(ij, "atr_windows", ic.atr_windows);
      take(ij, "rsi_windows", ic.rsi_windows);
      take(ij, "roc_windows", ic.roc_windows);
      take(ij, "max_return_lag", ic.max_return_lag);
      take(ij, "williams_window", ic.williams_window);
      take(ij, "dema_window", ic.dema_window);
      take(ij, "cci_window", ic.cci_window);
      take(ij, "ma_fast", ic.ma_fast);
      take(ij, "ma_slow", ic.ma_slow);
      take(ij, "corr_window", ic.corr_window);
    }
    if (j.contains("vmd")) {
      const auto& v = j.at("vmd");
      take(v, "alpha", c.vmd.alpha);
      take(v, "tau", c.vmd.tau);
      take(v, "tol", c.vmd.tol);
      take(v, "max_iter", c.vmd.max_iter);
      take(v, "dc_mode", c.vmd.dc_mode);
    }
    if (j.contains("k_map")) c.k_map = j.at("k_map").get<std::map<std::string, std::size_t>>();
    take(j, "select_k", c.select_k);
    take(j, "k_candidates", c.k_candidates);
    if (j.contains("fe")) {
      const auto& f = j.at("fe");
      take(f, "m", c.fe.m);
      take(f, "r_factor", c.fe.r_factor);
      take(f, "max_points", c.fe_max_points);
      if (f.contains("r") && !f.at("r").is_null()) c.fe.r = f.at("r").get<double>();
    }
    if (j.contains("mic")) {
      const auto& m = j.at("mic");
      take(m, "bins", c.mic.bins);
      take(m, "threshold", c.mic_threshold);
      std::string binning;
      take(m, "binning", binning);
      if (binning == "equal_width")
        c.mic.strategy = micfe::Binning::EqualWidth;
      else if (binning == "equal_frequency" || binning.empty())
        c.mic.strategy = micfe::Binning::EqualFrequency;
      else
        throw ConfigError("unknown MIC binning '" + binning + "'");
    }
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"), c.model);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      take(t, "epochs", c.train.epochs);
      take(t, "patience", c.train.patience);
      take(t, "batch_size", c.train.batch_size);
      take(t, "val_fraction", c.train.val_fraction);
      take(t, "samples_per_epoch", c.train.samples_per_epoch);
      if (t.contains("loss")) c.train.loss = parse_loss(t.at("loss").get<std::string>());
      if (t.contains("adaptive")) {
        const auto& a = t.at("adaptive");
        take(a, "c", c.train.adaptive.c);
        take(a, "beta_init", c.train.adaptive.beta_init);
        take(a, "beta_penalty", c.train.adaptive.beta_penalty);
        take(a, "delta", c.train.adaptive.delta);
        take(a, "learn_beta", c.train.adaptive.learn_beta);
      }
      if (t.contains("optimizer")) {
        const auto& o = t.at("optimizer");
        take(o, "lr", c.train.optimizer.lr);
        take(o, "beta1", c.train.optimizer.beta1);
        take(o, "beta2", c.train.optimizer.beta2);
        take(o, "eps", c.train.optimizer.eps);
        take(o, "gc", c.train.optimizer.gc_enabled);
        if (o.contains("clip_norm"))
          c.train.optimizer.clip_norm =
              o.at("clip_norm").is_null() ? std::nullopt : std::optional<double>(o.at("clip_norm").get<double>());
      }
    }
    if (j.contains("ablation")) {
      c.ablation.clear();
      for (const auto& v : j.at("ablation")) {
        Variant var;
        take(v, "name", var.name);
        take(v, "gc", var.gc);
        take(v, "stacked", var.stacked);
        if (v.contains("loss")) var.loss = parse_loss(v.at("loss").get<std::string>());
        c.ablation.push_back(var);
      }
    }
    take(j, "seed", c.seed);
    std::string out;
    take(j, "out", out);
    if (!out.empty()) c.out = out;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace lfts::pipeline
