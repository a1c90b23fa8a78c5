#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfts/ingest.hpp"
#include "lfts/micfe.hpp"
#include "lfts/model.hpp"
#include "lfts/train.hpp"
#include "lfts/vmd.hpp"

namespace lfts::pipeline {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what) : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---- synthetic fixture ----------------------------------------------------------

/// Latent x_t = AR(1) + two sinusoids + observation noise; close = 100 exp(scale x_t).
struct FixtureSpec {
  std::size_t bars = 8000;
  double phi = 0.8;
  double ar_sd = 0.5;
  std::vector<double> periods{24.0, 96.0};
  std::vector<double> amplitudes{3.0, 4.0};
  double noise_sd = 0.3;
  double price_scale = 0.01;
  std::uint64_t seed = 20240611;
};

/// 30-minute bars on weekdays, eight per session.
std::vector<ingest::Bar> synthetic_bars(const FixtureSpec& spec);

/// Two-tone test signal sin(2 pi f1 t) + sin(2 pi f2 t).
std::vector<double> two_tone(std::size_t n, double f1, double f2);

nlohmann::json to_json(const FixtureSpec& f);
FixtureSpec fixture_from_json(const nlohmann::json& j, FixtureSpec base = {});

// ---- configuration -------------------------------------------------------------

inline constexpr int kConfigVersion = 1;

struct Variant {
  std::string name;
  bool gc = true;
  train::LossKind loss = train::LossKind::Adaptive;
  bool stacked = true;
};

struct PipelineConfig {
  int version = kConfigVersion;
  std::string profile = "desk";
  std::filesystem::path data;  // empty: synthetic fixture
  FixtureSpec fixture;
  double split_ratio = 0.9;
  ingest::IndicatorConfig indicators;
  vmd::VmdParams vmd;
  std::map<std::string, std::size_t> k_map;  // price column -> K
  bool select_k = false;                     // pick K per column by MICyy0 instead of k_map
  std::vector<std::size_t> k_candidates;
  micfe::FeParams fe;
  std::size_t fe_max_points = 0;  // 0: whole training segment
  micfe::MicEstimator mic;
  double mic_threshold = 0.5;
  model::ModelConfig model;
  train::TrainConfig train;
  std::vector<Variant> ablation;
  std::uint64_t seed = 7;
  std::filesystem::path out = "runs/latest";

  /// Cross-field checks; throws ConfigError before any compute.
  void validate() const;
};

/// Defaults for "desk" (single workstation) or "paper" (full-size) runs.
PipelineConfig profile_config(const std::string& profile);

nlohmann::json to_json(const PipelineConfig& c);
/// Fields missing from `j` keep the values of the profile named in `j`
/// ("profile", default desk).
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

// ---- stages ---------------------------------------------------------------------

enum class Stage { Ingest = 0, Decompose, Features, Train, Evaluate };
const char* stage_name(Stage s);
std::optional<Stage> parse_stage(const std::string& s);

struct IngestResult {
  ingest::FeatureFrame frame;   // trimmed, forward-filled; includes the "target" column
  std::size_t train_rows = 0;
  std::size_t trimmed_rows = 0;  // warm-up rows dropped from the front
  std::size_t filled_cells = 0;
  double first_close = 0.0;     // close just before the first kept row
};

struct DecomposeResult {
  std::vector<micfe::Imf> imfs;
  std::map<std::string, micfe::KSelectionReport> k_reports;
  std::map<std::string, std::vector<double>> center_freqs;
  std::map<std::string, bool> converged;
};

struct FeaturesResult {
  micfe::FeatureGrouping grouping;
  micfe::Reconstruction reconstruction;
  std::vector<std::string> model_columns;  // target first, then rcf_*
};

struct EvaluateResult {
  train::Metrics test;
  train::Metrics persistence;
  std::vector<std::vector<double>> predictions;
  std::vector<std::vector<double>> baseline;
};

struct RunOptions {
  Stage until = Stage::Evaluate;
  bool resume = false;          // reuse every completed stage whose key still matches
  bool reuse_upstream = false;  // reuse only stages before `until`
  bool quiet = false;
};

struct RunResult {
  IngestResult ingest;
  DecomposeResult decompose;
  FeaturesResult features;
  train::TrainReport train;
  EvaluateResult evaluate;
  nlohmann::json model_summary;
  std::vector<std::string> cached_stages;
  double wall_seconds = 0.0;
};

IngestResult run_ingest(const PipelineConfig& cfg);
DecomposeResult run_decompose(const PipelineConfig& cfg, const IngestResult& in);
FeaturesResult run_features(const PipelineConfig& cfg, const IngestResult& in, const DecomposeResult& dec);
/// Adds the RCF columns to a copy of the frame and windows it for the model.
std::pair<ingest::WindowedDataset, ingest::WindowedDataset> model_datasets(const PipelineConfig& cfg,
                                                                           const IngestResult& in,
                                                                           const FeaturesResult& feat);

/// Copy of `cfg` with the variant's optimizer, loss and encoder switches applied.
PipelineConfig with_variant(PipelineConfig cfg, const Variant& v);

struct TrainOutcome {
  std::unique_ptr<model::Model> model;
  train::TrainReport report;
  EvaluateResult eval;
};

/// Builds the model for `cfg`, trains it on data.first and scores data.second.
TrainOutcome train_and_evaluate(const PipelineConfig& cfg,
                                const std::pair<ingest::WindowedDataset, ingest::WindowedDataset>& data);
EvaluateResult evaluate(const model::Model& model, const ingest::WindowedDataset& test, std::size_t threads = 0);

/// Runs the stages in order, writing artifacts under cfg.out. Stage markers in
/// out/stages record completion or failure; with `resume`, completed stages
/// whose inputs are unchanged are loaded instead of recomputed.
RunResult run_pipeline(const PipelineConfig& cfg, const RunOptions& opt = {});

struct AblationRow {
  Variant variant;
  bool ok = false;
  std::string error;
  train::Metrics test;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
};

/// Trains every variant on the same features and seed. Failures are recorded
/// per row. Writes ablation.json, ablation.csv and ablation.svg under cfg.out.
std::vector<AblationRow> run_ablation(const PipelineConfig& cfg, const RunOptions& opt = {});

/// Stable 64-bit FNV-1a hash, used for cache keys.
std::uint64_t fnv1a(const std::string& bytes);

// ---- plots ----------------------------------------------------------------------

namespace svg {

struct Line {
  std::string name;
  std::vector<double> x, y;
  std::string color;
};

std::string escape(const std::string& s);
/// Darker cells for larger values; `lo`/`hi` pin the color scale.
std::string heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values,
                    double lo, double hi);
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Line>& lines);
/// Maps positions 0..n-1 onto [0, 5000] abstract time units.
std::vector<double> time_axis(std::size_t n);

}  // namespace svg

}  // namespace lfts::pipeline
