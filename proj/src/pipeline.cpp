#include "lfts/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lfts/parallel.hpp"

namespace lfts::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Decompose: return "decompose";
    case Stage::Features: return "features";
    case Stage::Train: return "train";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

std::optional<Stage> parse_stage(const std::string& s) {
  for (Stage st : {Stage::Ingest, Stage::Decompose, Stage::Features, Stage::Train, Stage::Evaluate})
    if (s == stage_name(st)) return st;
  return std::nullopt;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Named columns of doubles, stored bit-exactly.
using Table = std::vector<std::pair<std::string, std::vector<double>>>;

void write_table(const fs::path& p, const Table& t) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  auto put64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  put64(t.size());
  for (const auto& [name, values] : t) {
    put64(name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put64(values.size());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

Table read_table(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  auto get64 = [&] {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error(p.string() + " is truncated");
    return v;
  };
  Table t(get64());
  for (auto& [name, values] : t) {
    name.resize(get64());
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    values.resize(get64());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error(p.string() + " is truncated");
  }
  return t;
}

class Log {
 public:
  explicit Log(bool quiet) : quiet_(quiet) {}
  template <class... A>
  void operator()(const A&... parts) const {
    if (quiet_) return;
    std::ostringstream s;
    (s << ... << parts);
    std::cerr << "[lfts] " << s.str() << '\n';
  }

 private:
  bool quiet_;
};

// ---- cache keys ------------------------------------------------------------

struct Keys {
  std::string ingest, decompose, features, train;
};

Keys stage_keys(const PipelineConfig& cfg) {
  const json j = to_json(cfg);
  json in{{"fixture", j["fixture"]}, {"indicators", j["indicators"]}, {"split_ratio", j["split_ratio"]}};
  if (!cfg.data.empty()) in["data"] = hex(fnv1a(read_file(cfg.data)));
  Keys k;
  k.ingest = hex(fnv1a(in.dump()));
  json dec{{"up", k.ingest}, {"vmd", j["vmd"]}, {"k_map", j["k_map"]}, {"select_k", j["select_k"]}};
  if (cfg.select_k) dec["k_candidates"] = j["k_candidates"], dec["mic"] = j["mic"];
  k.decompose = hex(fnv1a(dec.dump()));
  k.features = hex(fnv1a(json{{"up", k.decompose}, {"fe", j["fe"]}, {"mic", j["mic"]}}.dump()));
  k.train = hex(fnv1a(json{{"up", k.features}, {"model", j["model"]}, {"train", j["train"]}, {"seed", j["seed"]}}.dump()));
  return k;
}

fs::path marker_path(const PipelineConfig& cfg, Stage s) { return cfg.out / "stages" / (std::string(stage_name(s)) + ".json"); }

std::optional<json> completed_marker(const PipelineConfig& cfg, Stage s, const std::string& key) {
  const auto p = marker_path(cfg, s);
  if (!fs::exists(p)) return std::nullopt;
  try {
    json m = json::parse(read_file(p));
    if (m.value("status", "") == "done" && m.value("key", "") == key) return m;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

void write_marker(const PipelineConfig& cfg, Stage s, const std::string& key, const std::string& status,
                  json extra = json::object()) {
  extra["stage"] = stage_name(s);
  extra["key"] = key;
  extra["status"] = status;
  write_file(marker_path(cfg, s), extra.dump(2) + "\n");
}

// ---- stage serialization -------------------------------------------------

void save_ingest(const fs::path& p, const IngestResult& r) {
  Table t;
  std::vector<double> idx(r.frame.index().begin(), r.frame.index().end());
  t.emplace_back("__index", idx);
  for (const auto& name : r.frame.names()) t.emplace_back(name, r.frame.at(name).values);
  t.emplace_back("__meta", std::vector<double>{static_cast<double>(r.train_rows), static_cast<double>(r.trimmed_rows),
                                               static_cast<double>(r.filled_cells), r.first_close});
  write_table(p, t);
}

IngestResult load_ingest(const fs::path& p) {
  const Table t = read_table(p);
  IngestResult r;
  std::vector<ingest::Timestamp> idx;
  for (double v : t.front().second) idx.push_back(static_cast<ingest::Timestamp>(v));
  r.frame = ingest::FeatureFrame(idx);
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    ingest::Series s(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) s.set(k, t[i].second[k]);
    r.frame.add(t[i].first, std::move(s));
  }
  const auto& meta = t.back().second;
  r.train_rows = static_cast<std::size_t>(meta[0]);
  r.trimmed_rows = static_cast<std::size_t>(meta[1]);
  r.filled_cells = static_cast<std::size_t>(meta[2]);
  r.first_close = meta[3];
  return r;
}

json k_report_json(const micfe::KSelectionReport& r) {
  json c = json::array();
  for (const auto& k : r.candidates)
    c.push_back({{"k", k.k}, {"mic_yy0", k.mic_yy0}, {"ok", k.ok}, {"diagnostic", k.diagnostic}});
  return {{"chosen_k", r.chosen_k}, {"degenerate", r.degenerate}, {"candidates", c}};
}

json decompose_meta(const DecomposeResult& d) {
  json imfs = json::array();
  for (const auto& m : d.imfs) imfs.push_back({{"id", m.id}, {"source", m.source}, {"mode", m.mode}});
  json reports = json::object();
  for (const auto& [col, r] : d.k_reports) reports[col] = k_report_json(r);
  return {{"imfs", imfs}, {"center_freqs", d.center_freqs}, {"converged", d.converged}, {"k_selection", reports}};
}

void save_decompose(const fs::path& p, const DecomposeResult& d) {
  Table t;
  for (const auto& m : d.imfs) t.emplace_back("imf_" + std::to_string(m.id), m.values);
  write_table(p, t);
}

DecomposeResult load_decompose(const fs::path& p, const json& meta) {
  const Table t = read_table(p);
  DecomposeResult d;
  const auto& imfs = meta.at("imfs");
  if (imfs.size() != t.size()) throw std::runtime_error("decompose cache does not match its marker");
  for (std::size_t i = 0; i < t.size(); ++i) {
    micfe::Imf m;
    m.id = imfs[i].at("id").get<std::size_t>();
    m.source = imfs[i].at("source").get<std::string>();
    m.mode = imfs[i].at("mode").get<std::size_t>();
    m.values = t[i].second;
    d.imfs.push_back(std::move(m));
  }
  d.center_freqs = meta.at("center_freqs").get<std::map<std::string, std::vector<double>>>();
  d.converged = meta.at("converged").get<std::map<std::string, bool>>();
  for (const auto& [col, r] : meta.at("k_selection").items()) {
    micfe::KSelectionReport rep;
    rep.chosen_k = r.at("chosen_k").get<std::size_t>();
    rep.degenerate = r.at("degenerate").get<bool>();
    for (const auto& c : r.at("candidates"))
      rep.candidates.push_back({c.at("k").get<std::size_t>(), c.at("mic_yy0").get<double>(), c.at("ok").get<bool>(),
                                c.at("diagnostic").get<std::string>()});
    d.k_reports[col] = rep;
  }
  return d;
}

train::TrainReport report_from_json(const json& j) {
  train::TrainReport r;
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(),
                        e.at("beta").get<double>()});
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  r.diagnostic = j.value("diagnostic", "");
  r.train_windows = j.at("train_windows").get<std::size_t>();
  r.val_windows = j.at("val_windows").get<std::size_t>();
  return r;
}

// ---- artifacts ---------------------------------------------------------------

void write_imfs_csv(const fs::path& p, const IngestResult& in, const DecomposeResult& d) {
  std::ostringstream s;
  s << "timestamp";
  for (const auto& m : d.imfs) s << ",imf_" << m.id << '_' << m.source << '_' << m.mode;
  s << '\n';
  const auto& idx = in.frame.index();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    s << idx[t];
    for (const auto& m : d.imfs) s << ',' << fmt(m.values[t]);
    s << '\n';
  }
  write_file(p, s.str());
}

void write_feature_artifacts(const PipelineConfig& cfg, const DecomposeResult& d, const FeaturesResult& f) {
  std::ostringstream fe;
  fe << "imf_id,source,mode,fe,bucket\n";
  for (const auto& m : d.imfs)
    fe << m.id << ',' << m.source << ',' << m.mode << ',' << fmt(m.fe) << ',' << micfe::fe_bucket(m.fe) << '\n';
  write_file(cfg.out / "fe_values.csv", fe.str());

  const auto& rec = f.reconstruction;
  std::ostringstream hm;
  hm << "feature";
  for (const auto& name : rec.indicators) hm << ',' << name;
  hm << '\n';
  std::vector<std::string> rows;
  for (std::size_t g = 0; g < rec.heatmap.size(); ++g) {
    const std::string label = "NF" + std::to_string(f.grouping.groups[g].id);
    rows.push_back(label);
    hm << label;
    for (double v : rec.heatmap[g]) hm << ',' << fmt(v);
    hm << '\n';
  }
  write_file(cfg.out / "heatmap.csv", hm.str());
  write_file(cfg.out / "heatmap.svg",
             svg::heatmap("MIC between New Features and indicators", rows, rec.indicators, rec.heatmap, 0.0, 1.0));
}

json features_json(const DecomposeResult& d, const FeaturesResult& f) {
  json fe = json::array();
  for (const auto& m : d.imfs) fe.push_back({{"id", m.id}, {"source", m.source}, {"mode", m.mode}, {"fe", m.fe}});
  json groups = json::array();
  for (const auto& g : f.grouping.groups)
    groups.push_back({{"id", g.id}, {"range", {g.lo, g.hi}}, {"members", g.members}});
  json entries = json::array();
  for (const auto& e : f.reconstruction.entries) {
    json inc = json::array();
    for (const auto& [name, c] : e.included) inc.push_back({{"indicator", name}, {"mic", c}});
    entries.push_back({{"rcf", e.rcf_id}, {"nf", e.nf_id}, {"included", inc}});
  }
  json warnings = f.grouping.warnings;
  for (const auto& w : f.reconstruction.warnings) warnings.push_back(w);
  return {{"fe", fe}, {"groups", groups}, {"reconstruction", entries}, {"threshold", f.reconstruction.threshold},
          {"model_columns", f.model_columns}, {"warnings", warnings}};
}

void write_train_artifacts(const fs::path& dir, const train::TrainReport& r) {
  std::ostringstream csv;
  r.write_loss_csv(csv);
  write_file(dir / "loss_curve.csv", csv.str());
  svg::Line tr{"train loss", {}, {}, "#1f77b4"}, va{"validation MSE", {}, {}, "#d62728"};
  for (const auto& e : r.epochs) {
    tr.x.push_back(static_cast<double>(e.epoch));
    tr.y.push_back(e.train_loss);
    va.x.push_back(static_cast<double>(e.epoch));
    va.y.push_back(e.val_loss);
  }
  write_file(dir / "loss_curve.svg", svg::line_chart("Training curve", "epoch", "loss", {tr, va}));
}

void write_eval_artifacts(const PipelineConfig& cfg, const ingest::WindowedDataset& test, const IngestResult& in,
                          const EvaluateResult& ev, const RunResult& run) {
  std::ostringstream p;
  p << "sample,step,timestamp,y_true,y_pred,persistence\n";
  const auto& idx = in.frame.index();
  for (std::size_t s = 0; s < ev.predictions.size(); ++s) {
    const auto y = test.targets(s);
    for (std::size_t h = 0; h < y.size(); ++h)
      p << s << ',' << h + 1 << ',' << idx[test.target_row(s) + h] << ',' << fmt(y[h]) << ','
        << fmt(ev.predictions[s][h]) << ',' << fmt(ev.baseline[s][h]) << '\n';
  }
  write_file(cfg.out / "predictions.csv", p.str());

  json metrics{{"test", train::to_json(ev.test)},
               {"persistence", train::to_json(ev.persistence)},
               {"beats_persistence", ev.test.mse < ev.persistence.mse},
               {"best_epoch", run.train.best_epoch},
               {"best_val_loss", run.train.best_val_loss},
               {"test_windows", ev.predictions.size()},
               {"space", "standardized log-return"}};
  write_file(cfg.out / "metrics.json", metrics.dump(2) + "\n");

  // One-step-ahead forecasts over the test span.
  svg::Line truth{"actual", {}, {}, "#333333"}, pred{"forecast (step 1)", {}, {}, "#d62728"};
  for (std::size_t s = 0; s < ev.predictions.size(); ++s) {
    truth.y.push_back(test.targets(s)[0]);
    pred.y.push_back(ev.predictions[s][0]);
  }
  truth.x = pred.x = svg::time_axis(truth.y.size());
  write_file(cfg.out / "forecast.svg", svg::line_chart("Test forecasts", "time unit", "standardized log-return", {truth, pred}));

  json report;
  report["config_hash"] = hex(fnv1a(to_json(cfg).dump()));
  report["ingest"] = {{"rows", in.frame.rows()}, {"train_rows", in.train_rows}, {"trimmed_warmup_rows", in.trimmed_rows},
                      {"forward_filled_cells", in.filled_cells}};
  report["decompose"] = decompose_meta(run.decompose);
  report["features"] = features_json(run.decompose, run.features);
  report["model"] = run.model_summary;
  report["train"] = run.train.to_json();
  report["metrics"] = metrics;
  report["notes"] = {"VMD runs on the whole series before the train/test split, so decomposed features carry information "
                     "from the test span.",
                     "Metrics are in the standardized log-return space of the target."};
  write_file(cfg.out / "report.json", report.dump(2) + "\n");
}

}  // namespace

// ---- stages ---------------------------------------------------------------------

IngestResult run_ingest(const PipelineConfig& cfg) {
  const std::vector<ingest::Bar> bars = cfg.data.empty() ? synthetic_bars(cfg.fixture) : ingest::load_csv(cfg.data);
  ingest::FeatureFrame full = ingest::feature_bank(bars, cfg.indicators);
  const auto closes = ingest::closes_of(bars);
  full.add("target", ingest::log_diff(closes), 1);

  std::size_t warm = 0;
  for (const auto& name : full.names()) warm = std::max(warm, full.warmup(name));
  if (warm >= full.rows()) throw ingest::SizingError("series shorter than the indicator warm-up");

  IngestResult r;
  r.trimmed_rows = warm;
  r.first_close = closes[warm - 1];
  r.frame = full.slice(warm, full.rows());
  for (const auto& name : r.frame.names()) {
    ingest::Series& s = r.frame.at(name);
    const std::size_t first = s.first_valid();
    if (first == s.size()) throw ingest::DomainError("column '" + name + "' has no valid cell after the warm-up");
    for (std::size_t t = 0; t < first; ++t) {
      s.set(t, s.values[first]);
      ++r.filled_cells;
    }
    for (std::size_t t = first + 1; t < s.size(); ++t)
      if (!s.ok(t)) {
        s.set(t, s.values[t - 1]);
        ++r.filled_cells;
      }
  }
  r.train_rows = ingest::train_rows_for(r.frame.rows(), cfg.split_ratio);
  return r;
}

DecomposeResult run_decompose(const PipelineConfig& cfg, const IngestResult& in) {
  const auto& cols = ingest::price_columns();
  std::vector<ingest::Series> series;
  for (const auto& c : cols) series.push_back(in.frame.at(c));
  std::vector<vmd::ImfSet> sets(cols.size());
  std::vector<micfe::KSelectionReport> reports(cols.size());
  parallel_for(cols.size(), 0, [&](std::size_t i) {
    vmd::VmdParams p = cfg.vmd;
    if (cfg.select_k) {
      reports[i] = micfe::select_k(series[i].values, cfg.k_candidates, cfg.vmd, cfg.mic);
      p.modes = reports[i].chosen_k;
    } else {
      p.modes = cfg.k_map.at(cols[i]);
    }
    sets[i] = vmd::decompose(series[i].values, p);
  });
  DecomposeResult d;
  std::size_t id = 0;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    for (std::size_t k = 0; k < sets[i].modes.size(); ++k) {
      micfe::Imf m;
      m.source = cols[i];
      m.mode = k + 1;
      m.id = ++id;
      m.values = sets[i].modes[k];
      d.imfs.push_back(std::move(m));
    }
    d.center_freqs[cols[i]] = sets[i].center_freqs;
    d.converged[cols[i]] = sets[i].converged;
    if (cfg.select_k) d.k_reports[cols[i]] = reports[i];
  }
  return d;
}

FeaturesResult run_features(const PipelineConfig& cfg, const IngestResult& in, const DecomposeResult& dec) {
  DecomposeResult& d = const_cast<DecomposeResult&>(dec);
  // FE is measured on the (most recent part of the) training segment only.
  const std::size_t end = in.train_rows;
  const std::size_t begin = cfg.fe_max_points && end > cfg.fe_max_points ? end - cfg.fe_max_points : 0;
  parallel_for(d.imfs.size(), 0, [&](std::size_t i) {
    const auto& v = d.imfs[i].values;
    d.imfs[i].fe = micfe::fuzzy_entropy(std::span<const double>(v.data() + begin, end - begin), cfg.fe);
  });
  FeaturesResult f;
  f.grouping = micfe::group_imfs(d.imfs);
  std::vector<std::string> indicators;
  const auto& prices = ingest::price_columns();
  for (const auto& name : in.frame.names())
    if (name != "target" && std::find(prices.begin(), prices.end(), name) == prices.end()) indicators.push_back(name);
  f.reconstruction = micfe::reconstruct_features(f.grouping, in.frame, indicators, cfg.mic, cfg.mic_threshold, in.train_rows);
  f.model_columns.push_back("target");
  for (const auto& g : f.grouping.groups) f.model_columns.push_back("rcf_" + std::to_string(g.id));
  return f;
}

std::pair<ingest::WindowedDataset, ingest::WindowedDataset> model_datasets(const PipelineConfig& cfg,
                                                                           const IngestResult& in,
                                                                           const FeaturesResult& feat) {
  ingest::FeatureFrame frame(in.frame.index());
  frame.add("target", in.frame.at("target"));
  for (std::size_t g = 0; g < feat.grouping.groups.size(); ++g) {
    ingest::Series s(frame.rows());
    for (std::size_t t = 0; t < frame.rows(); ++t) s.set(t, feat.reconstruction.features[g][t]);
    frame.add(feat.model_columns[g + 1], std::move(s));
  }
  const auto stats = ingest::fit_standardization(frame, feat.model_columns, in.train_rows);
  const auto scaled = ingest::standardize(frame, stats);
  ingest::WindowSpec spec{cfg.model.input_len, cfg.model.pred_len, cfg.split_ratio};
  return ingest::split_and_window(scaled, feat.model_columns, "target", spec);
}

PipelineConfig with_variant(PipelineConfig cfg, const Variant& v) {
  cfg.train.optimizer.gc_enabled = v.gc;
  cfg.train.loss = v.loss;
  cfg.model.stacked = v.stacked;
  return cfg;
}

EvaluateResult evaluate(const model::Model& model, const ingest::WindowedDataset& test, std::size_t threads) {
  if (test.samples() == 0) throw ingest::SizingError("the test split holds no complete window");
  EvaluateResult ev;
  ev.predictions = train::predict(model, test, threads);
  ev.baseline = train::persistence_forecast(test);
  std::vector<double> y, p, b;
  for (std::size_t s = 0; s < test.samples(); ++s) {
    const auto t = test.targets(s);
    y.insert(y.end(), t.begin(), t.end());
    p.insert(p.end(), ev.predictions[s].begin(), ev.predictions[s].end());
    b.insert(b.end(), ev.baseline[s].begin(), ev.baseline[s].end());
  }
  ev.test = train::metrics(y, p);
  ev.persistence = train::metrics(y, b);
  return ev;
}

namespace {

model::ModelConfig sized_model(const PipelineConfig& cfg, std::size_t width) {
  model::ModelConfig m = cfg.model;
  m.enc_in = width;
  m.dec_in = width;
  return m;
}

}  // namespace

TrainOutcome train_and_evaluate(const PipelineConfig& cfg,
                                const std::pair<ingest::WindowedDataset, ingest::WindowedDataset>& data) {
  TrainOutcome out;
  out.model = std::make_unique<model::Model>(sized_model(cfg, data.first.feature_dim), cfg.seed);
  train::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  out.report = train::train_loop(*out.model, data.first, tc);
  out.eval = evaluate(*out.model, data.second, tc.threads);
  return out;
}

RunResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Log log(opt.quiet);
  fs::create_directories(cfg.out);
  write_file(cfg.out / "config.lock.json", to_json(cfg).dump(2) + "\n");
  const Keys keys = stage_keys(cfg);
  const fs::path cache = cfg.out / "cache";
  RunResult run;

  auto reuse = [&](Stage s, const std::string& key) -> std::optional<json> {
    if (!opt.resume && !(opt.reuse_upstream && s < opt.until)) return std::nullopt;
    auto m = completed_marker(cfg, s, key);
    if (m) run.cached_stages.push_back(stage_name(s));
    return m;
  };
  auto guarded = [&](Stage s, const std::string& key, auto&& body) {
    log("stage ", stage_name(s));
    try {
      body();
    } catch (const std::exception& e) {
      write_marker(cfg, s, key, "failed", {{"error", e.what()}});
      throw StageError(stage_name(s), e.what());
    }
  };

  guarded(Stage::Ingest, keys.ingest, [&] {
    if (reuse(Stage::Ingest, keys.ingest)) {
      run.ingest = load_ingest(cache / "ingest.bin");
      return;
    }
    run.ingest = run_ingest(cfg);
    std::ostringstream csv;
    run.ingest.frame.write_csv(csv);
    write_file(cfg.out / "features.csv", csv.str());
    save_ingest(cache / "ingest.bin", run.ingest);
    write_marker(cfg, Stage::Ingest, keys.ingest, "done", {{"rows", run.ingest.frame.rows()}});
  });
  log("  ", run.ingest.frame.rows(), " rows after a ", run.ingest.trimmed_rows, "-row warm-up; ", run.ingest.train_rows,
      " for training");
  if (opt.until == Stage::Ingest) return run;

  guarded(Stage::Decompose, keys.decompose, [&] {
    if (auto m = reuse(Stage::Decompose, keys.decompose)) {
      run.decompose = load_decompose(cache / "decompose.bin", m->at("meta"));
      return;
    }
    run.decompose = run_decompose(cfg, run.ingest);
    write_imfs_csv(cfg.out / "imfs.csv", run.ingest, run.decompose);
    save_decompose(cache / "decompose.bin", run.decompose);
    write_marker(cfg, Stage::Decompose, keys.decompose, "done", {{"meta", decompose_meta(run.decompose)}});
  });
  log("  ", run.decompose.imfs.size(), " IMFs");
  if (opt.until == Stage::Decompose) return run;

  guarded(Stage::Features, keys.features, [&] {
    if (auto m = reuse(Stage::Features, keys.features)) {
      const auto fe = m->at("fe").get<std::vector<double>>();
      if (fe.size() != run.decompose.imfs.size()) throw std::runtime_error("features cache does not match the IMFs");
      for (std::size_t i = 0; i < fe.size(); ++i) run.decompose.imfs[i].fe = fe[i];
      // Grouping and reconstruction are cheap and deterministic given FE.
      run.features.grouping = micfe::group_imfs(run.decompose.imfs);
      std::vector<std::string> indicators = m->at("indicators").get<std::vector<std::string>>();
      run.features.reconstruction = micfe::reconstruct_features(run.features.grouping, run.ingest.frame, indicators,
                                                                cfg.mic, cfg.mic_threshold, run.ingest.train_rows);
      run.features.model_columns = m->at("model_columns").get<std::vector<std::string>>();
      return;
    }
    run.features = run_features(cfg, run.ingest, run.decompose);
    write_feature_artifacts(cfg, run.decompose, run.features);
    std::vector<double> fe;
    for (const auto& imf : run.decompose.imfs) fe.push_back(imf.fe);
    write_marker(cfg, Stage::Features, keys.features, "done",
                 {{"fe", fe}, {"indicators", run.features.reconstruction.indicators},
                  {"model_columns", run.features.model_columns}});
  });
  for (const auto& w : run.features.grouping.warnings) log("  warning: ", w);
  for (const auto& w : run.features.reconstruction.warnings) log("  warning: ", w);
  log("  ", run.features.grouping.groups.size(), " New Features");
  if (opt.until == Stage::Features) return run;

  const auto data = model_datasets(cfg, run.ingest, run.features);
  std::unique_ptr<model::Model> net;
  guarded(Stage::Train, keys.train, [&] {
    net = std::make_unique<model::Model>(sized_model(cfg, data.first.feature_dim), cfg.seed);
    if (auto m = reuse(Stage::Train, keys.train)) {
      if (cfg.train.loss == train::LossKind::Adaptive) net->params().add("loss.beta_raw", {});
      tensor::load_checkpoint(net->params(), cache / "checkpoint");
      run.train = report_from_json(m->at("report"));
      return;
    }
    train::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    run.train = train::train_loop(*net, data.first, tc);
    log("  stopped after ", run.train.epochs.size(), " epochs (", run.train.stop_reason, "), best epoch ",
        run.train.best_epoch, " val MSE ", run.train.best_val_loss);
    tensor::save_checkpoint(net->params(), cache / "checkpoint");
    tensor::save_checkpoint(net->params(), cfg.out / "checkpoint");
    write_train_artifacts(cfg.out, run.train);
    write_marker(cfg, Stage::Train, keys.train, "done", {{"report", run.train.to_json()}});
  });
  run.model_summary = net->summary();
  if (opt.until == Stage::Train) return run;

  guarded(Stage::Evaluate, keys.train, [&] {
    run.evaluate = evaluate(*net, data.second, cfg.train.threads);
    write_eval_artifacts(cfg, data.second, run.ingest, run.evaluate, run);
    write_marker(cfg, Stage::Evaluate, keys.train, "done");
  });
  const auto& m = run.evaluate.test;
  log("  test MSE ", m.mse, " R2 ", m.r2 ? fmt(*m.r2) : std::string("n/a"), " | persistence MSE ",
      run.evaluate.persistence.mse);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log("  wall time ", run.wall_seconds, " s");
  return run;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const RunOptions& opt) {
  if (cfg.ablation.empty()) throw ConfigError("ablation needs at least one variant");
  RunOptions shared = opt;
  shared.until = Stage::Features;
  const RunResult base = run_pipeline(cfg, shared);
  const Log log(opt.quiet);

  std::vector<AblationRow> rows;
  for (const auto& v : cfg.ablation) {
    AblationRow row;
    row.variant = v;
    log("variant ", v.name);
    try {
      const PipelineConfig vc = with_variant(cfg, v);
      vc.validate();
      const auto data = model_datasets(vc, base.ingest, base.features);
      const TrainOutcome out = train_and_evaluate(vc, data);
      row.ok = true;
      row.test = out.eval.test;
      row.best_val_loss = out.report.best_val_loss;
      row.best_epoch = out.report.best_epoch;
      write_train_artifacts(cfg.out / "ablation" / v.name, out.report);
    } catch (const std::exception& e) {
      row.error = e.what();
      log("  failed: ", e.what());
    }
    rows.push_back(row);
  }

  // Per-metric min-max over successful variants; darker = better.
  auto range = [&](auto get) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : rows)
      if (r.ok) {
        lo = std::min(lo, get(r));
        hi = std::max(hi, get(r));
      }
    return std::pair{lo, hi};
  };
  auto norm = [](double v, std::pair<double, double> r) { return r.second > r.first ? (v - r.first) / (r.second - r.first) : 0.0; };
  auto r2_of = [](const AblationRow& r) { return r.test.r2.value_or(0.0); };
  const auto mse_r = range([](const AblationRow& r) { return r.test.mse; });
  const auto rmse_r = range([](const AblationRow& r) { return r.test.rmse; });
  const auto r2_r = range(r2_of);

  json j = json::array();
  std::ostringstream csv;
  csv << "variant,gc,loss,stacked,status,mae,mse,rmse,r2,best_val_loss,best_epoch\n";
  std::vector<std::string> labels;
  std::vector<std::vector<double>> cells;
  for (const auto& r : rows) {
    const char* loss = r.variant.loss == train::LossKind::Adaptive ? "adaptive" : "mse";
    json e{{"variant", r.variant.name}, {"gc", r.variant.gc}, {"loss", loss}, {"stacked", r.variant.stacked}, {"ok", r.ok}};
    csv << r.variant.name << ',' << r.variant.gc << ',' << loss << ',' << r.variant.stacked << ',';
    labels.push_back(r.variant.name);
    if (r.ok) {
      e["test"] = train::to_json(r.test);
      e["best_val_loss"] = r.best_val_loss;
      e["best_epoch"] = r.best_epoch;
      csv << "ok," << fmt(r.test.mae) << ',' << fmt(r.test.mse) << ',' << fmt(r.test.rmse) << ','
          << (r.test.r2 ? fmt(*r.test.r2) : std::string()) << ',' << fmt(r.best_val_loss) << ',' << r.best_epoch << '\n';
      const double a = 1.0 - norm(r.test.mse, mse_r);
      const double b = 1.0 - norm(r.test.rmse, rmse_r);
      const double c = r2_r.second > r2_r.first ? norm(r2_of(r), r2_r) : 1.0;
      cells.push_back({a, b, c, a * b * c});
    } else {
      e["error"] = r.error;
      csv << "failed,,,,,,\n";
      cells.push_back({NAN, NAN, NAN, NAN});
    }
    j.push_back(e);
  }
  write_file(cfg.out / "ablation.json", json{{"seed", cfg.seed}, {"variants", j}}.dump(2) + "\n");
  write_file(cfg.out / "ablation.csv", csv.str());
  write_file(cfg.out / "ablation.svg", svg::heatmap("Ablation (darker is better)", labels,
                                                    {"1-MSE'", "1-RMSE'", "R2'", "blend"}, cells, 0.0, 1.0));
  return rows;
}

}  // namespace lfts::pipeline
