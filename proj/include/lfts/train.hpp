#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfts/ingest.hpp"
#include "lfts/model.hpp"
#include "lfts/tensor.hpp"

namespace lfts::train {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- gradient centralization and Adam -----------------------------------------

struct GcAdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool gc_enabled = true;
  std::optional<double> clip_norm;  // global L2 norm, off by default

  void validate() const;
};

/// Subtracts from every column of a row-major [rows x cols] gradient its mean
/// over the rows, i.e. applies P = I - e e^T / rows to each column.
void gc_inplace(std::span<double> grad, std::size_t rows, std::size_t cols);
std::vector<double> gc(std::span<const double> grad, std::size_t rows, std::size_t cols);

class GcAdam {
 public:
  GcAdam(const GcAdamConfig& cfg, const tensor::ParameterStore& store);

  /// One update. Gradients are modified in place (centralized, clipped).
  /// Throws NonFiniteError before touching any parameter if a gradient is not finite.
  void step(tensor::ParameterStore& store, tensor::GradientSet& grads);

  std::size_t steps() const noexcept { return t_; }
  const GcAdamConfig& config() const noexcept { return cfg_; }
  /// Global gradient norm seen by the last step, after centralization.
  double last_norm() const noexcept { return last_norm_; }

 private:
  GcAdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  double last_norm_ = 0.0;
};

// ---- adaptive robust loss -------------------------------------------------------

struct AdaptiveLossConfig {
  double c = 1.0;
  double beta_init = 1.0;
  double beta_penalty = 0.01;  // adds -penalty * beta to the loss
  double delta = 1e-4;         // closed forms within delta of beta = 2 and beta = 0
  bool learn_beta = true;
};

inline constexpr double kBetaMin = -8.0;
inline constexpr double kBetaMax = 2.0;

/// beta = 2 - 10 * sigmoid(raw), a smooth bijection onto (-8, 2).
double beta_from_raw(double raw);
double raw_from_beta(double beta);
/// d beta / d raw.
double beta_slope(double raw);

/// (|b-2|/b) [ ((z/c)^2 / |b-2| + 1)^(b/2) - 1 ] evaluated as written.
double adaptive_loss_raw(double z, double beta, double c);
/// Same family with the singular points replaced by their limits: 0.5 (z/c)^2
/// near beta = 2, ln(0.5 (z/c)^2 + 1) near 0, 1 - exp(-0.5 (z/c)^2) below -1/delta.
double adaptive_loss_value(double z, double beta, double c, double delta = 1e-4);
/// Partial derivatives of adaptive_loss_value with respect to z and beta.
double adaptive_loss_dz(double z, double beta, double c, double delta = 1e-4);
double adaptive_loss_dbeta(double z, double beta, double c, double delta = 1e-4);

double loss_l2(double z, double c);
double loss_charbonnier(double z, double c);
double loss_cauchy(double z, double c);
double loss_welsch(double z, double c);

/// Mean adaptive loss over `residual` plus the beta penalty. `beta_raw` is a
/// 1 x 1 node (usually a parameter); gradients reach both inputs.
tensor::Var adaptive_loss(tensor::Var residual, tensor::Var beta_raw, const AdaptiveLossConfig& cfg);
tensor::Var mse_loss(tensor::Var residual);

// ---- metrics --------------------------------------------------------------------

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;  // missing when the truth is constant
};

Metrics metrics(std::span<const double> truth, std::span<const double> pred);
nlohmann::json to_json(const Metrics& m);

// ---- training loop --------------------------------------------------------------

enum class LossKind { Adaptive, Mse };

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  double val_fraction = 0.1;
  std::size_t samples_per_epoch = 0;  // 0: every training window each epoch
  std::size_t threads = 0;            // 0: default_threads()
  LossKind loss = LossKind::Adaptive;
  AdaptiveLossConfig adaptive;
  GcAdamConfig optimizer;
  std::uint64_t seed = 0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the validation loss of `epoch` (1-based); true when training should stop.
  bool update(std::size_t epoch, double val_loss);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
  std::size_t stale_ = 0;
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // MSE on the validation windows
  double beta = 2.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "patience", "max_epochs", "diverged"
  std::string diagnostic;
  std::size_t train_windows = 0;
  std::size_t val_windows = 0;
  double wall_seconds = 0.0;  // not part of to_json: it would break reproducibility

  nlohmann::json to_json() const;
  void write_loss_csv(std::ostream& out) const;
};

/// Predictions [samples][horizon] of `model` (inference mode).
std::vector<std::vector<double>> predict(const model::Model& model, const ingest::WindowedDataset& data,
                                         std::size_t threads = 0, std::size_t begin = 0,
                                         std::size_t end = static_cast<std::size_t>(-1));

/// Marks of sample s: its input rows followed by its horizon rows.
std::vector<ingest::TimeMark> sample_marks(const ingest::WindowedDataset& data, std::size_t s);

/// Trains on the leading windows of `train`, validates on its chronological
/// tail, and restores the best-epoch parameters before returning.
TrainReport train_loop(model::Model& model, const ingest::WindowedDataset& train, const TrainConfig& cfg);

/// Last observed target repeated across the horizon.
std::vector<std::vector<double>> persistence_forecast(const ingest::WindowedDataset& data);

}  // namespace lfts::train
