#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfts::ingest {

/// Minute-precision timestamp encoded as the decimal number yyyymmddHHMM.
using Timestamp = std::int64_t;

struct Bar {
  Timestamp time = 0;
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double volume = 0.0;
  double amount = 0.0;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class OrderingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A real sequence with a per-cell validity flag. Invalid cells hold NaN.
struct Series {
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  Series() = default;
  explicit Series(std::size_t n);

  std::size_t size() const noexcept { return values.size(); }
  bool ok(std::size_t t) const { return valid[t] != 0; }
  void set(std::size_t t, double v);
  void invalidate(std::size_t t);
  /// Index of the first valid cell, or size() when none is valid.
  std::size_t first_valid() const;
};

/// Named, aligned columns over a shared timestamp index.
class FeatureFrame {
 public:
  FeatureFrame() = default;
  explicit FeatureFrame(std::vector<Timestamp> index);

  std::size_t rows() const noexcept { return index_.size(); }
  std::size_t cols() const noexcept { return names_.size(); }
  const std::vector<Timestamp>& index() const noexcept { return index_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  void add(const std::string& name, Series column, std::size_t warmup = 0);
  bool has(const std::string& name) const;
  const Series& at(const std::string& name) const;
  Series& at(const std::string& name);
  /// Declared warm-up: cells before this row are invalid by construction.
  std::size_t warmup(const std::string& name) const;

  /// Rows [begin, end) as a new frame; warm-ups are shifted accordingly.
  FeatureFrame slice(std::size_t begin, std::size_t end) const;

  void write_csv(std::ostream& out) const;

 private:
  std::size_t position(const std::string& name) const;

  std::vector<Timestamp> index_;
  std::vector<std::string> names_;
  std::vector<Series> columns_;
  std::vector<std::size_t> warmups_;
};

std::vector<Bar> parse_csv(std::istream& in);
std::vector<Bar> load_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, std::span<const Bar> bars);

std::vector<double> closes_of(std::span<const Bar> bars);

// ---- indicators -----------------------------------------------------------

/// Window sizes for the indicator bank. Several of these are conventions for
/// indicators whose source table lists a window of "1"; see README.
struct IndicatorConfig {
  std::vector<std::size_t> atr_windows{5, 10};
  std::vector<std::size_t> rsi_windows{6, 14};
  std::vector<std::size_t> roc_windows{9, 14};
  std::size_t max_return_lag = 6;
  std::size_t williams_window = 14;
  std::size_t dema_window = 10;
  std::size_t cci_window = 20;
  std::size_t ma_fast = 5;
  std::size_t ma_slow = 30;
  std::size_t corr_window = 30;
};

/// TR_t = max(High_t - Low_t, High_t - Close_{t-1}, Close_{t-1} - Low_t).
/// Returns nullopt for t == 0 (no previous close).
std::optional<double> true_range(std::span<const Bar> bars, std::size_t t);

Series rolling_mean(const Series& x, std::size_t window);
Series rolling_sum(const Series& x, std::size_t window);

Series atr(std::span<const Bar> bars, std::size_t window);
Series rsi(std::span<const double> closes, std::size_t window);
Series returns(std::span<const double> closes, std::size_t lag);
Series roc(std::span<const double> closes, std::size_t lag);
Series stochastic_k(std::span<const Bar> bars);
Series stochastic_oscillator(std::span<const Bar> bars, std::size_t window);
Series cci(std::span<const Bar> bars, std::size_t window);
Series weighted_price(std::span<const Bar> bars);
Series williams_r(std::span<const Bar> bars, std::size_t window);
Series ema(const Series& x, std::size_t window);
Series dema(std::span<const double> closes, std::size_t window);
Series ma_correlation(std::span<const double> closes, std::size_t fast, std::size_t slow,
                      std::size_t window);

/// Appends Weighted Price, High-Low, the Sum3/Sum5 family, the MA5/MA30
/// correlation, Williams %R and DEMA to `frame`.
void basic_and_sum_features(std::span<const Bar> bars, const IndicatorConfig& cfg,
                            FeatureFrame& frame);

/// Names of the four decomposed price columns.
const std::vector<std::string>& price_columns();

/// The 29-column feature bank: 8 basic + 21 advanced features, computed on raw prices.
FeatureFrame feature_bank(std::span<const Bar> bars, const IndicatorConfig& cfg = {});

/// new_close_t = ln(close_t / close_{t-1}); cell 0 invalid.
Series log_diff(std::span<const double> closes);

/// Inverse of log_diff given the first close.
std::vector<double> cumulative_prices(double first_close, std::span<const double> log_returns);

// ---- standardization --------------------------------------------------------

struct StandardizationStats {
  std::map<std::string, double> mean;
  std::map<std::string, double> variance;
};

/// Mean and (population) variance of each named column over rows [0, train_rows),
/// valid cells only. A column with zero variance is rejected with a DomainError.
StandardizationStats fit_standardization(const FeatureFrame& frame,
                                         const std::vector<std::string>& columns,
                                         std::size_t train_rows);

/// (value - E) / sqrt(D) for every column present in `stats`; other columns pass through.
FeatureFrame standardize(const FeatureFrame& frame, const StandardizationStats& stats);
FeatureFrame unstandardize(const FeatureFrame& frame, const StandardizationStats& stats);

// ---- windowing --------------------------------------------------------------

/// Calendar fields attached to each timestamp: minute, hour, weekday, day, month.
inline constexpr std::size_t kMarkDims = 5;
inline constexpr std::size_t kMarkVocab[kMarkDims] = {60, 24, 7, 32, 13};

using TimeMark = std::array<int, kMarkDims>;
TimeMark calendar_marks(Timestamp ts);

struct WindowSpec {
  std::size_t input_len = 64;
  std::size_t horizon = 16;
  double split_ratio = 0.9;
};

/// Sliding windows (stride 1) over one contiguous block of rows. The block's
/// rows are copied in, so a dataset never sees rows outside its own split.
struct WindowedDataset {
  std::size_t input_len = 0;
  std::size_t horizon = 0;
  std::size_t feature_dim = 0;
  std::size_t first_row = 0;  // absolute row of features row 0 in the source frame

  std::vector<double> features;  // block_rows x feature_dim, row-major
  std::vector<double> target;    // block_rows
  std::vector<TimeMark> marks;   // block_rows
  std::vector<std::size_t> starts;  // block-relative first input row of each sample

  std::size_t samples() const noexcept { return starts.size(); }
  std::size_t block_rows() const noexcept { return target.size(); }

  /// Input matrix [input_len x feature_dim] of sample s, row-major.
  std::vector<double> input(std::size_t s) const;
  /// Horizon targets of sample s.
  std::vector<double> targets(std::size_t s) const;
  /// Absolute row of the first target of sample s.
  std::size_t target_row(std::size_t s) const { return first_row + starts[s] + input_len; }
};

/// Chronological split at floor(split_ratio * rows) followed by windowing of
/// each side. `feature_columns` become the model inputs; `target_column` the
/// forecast target.
std::pair<WindowedDataset, WindowedDataset> split_and_window(
    const FeatureFrame& frame, const std::vector<std::string>& feature_columns,
    const std::string& target_column, const WindowSpec& spec);

std::size_t train_rows_for(std::size_t rows, double split_ratio);

}  // namespace lfts::ingest
